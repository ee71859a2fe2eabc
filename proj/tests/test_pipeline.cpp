#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "geogan/metrics.hpp"
#include "geogan/pipeline.hpp"

using namespace geogan::pipeline;
namespace fs = std::filesystem;

namespace {

Config tiny() {
    Config c;
    for (const char* kv : {"toy.count=24", "toy.train=16", "toy.size=32", "wss.grid=4", "wss.mil_epochs=10",
                           "wss.retrain_epochs=10", "shape.count=8", "shape.epochs=1", "shape.width=2",
                           "shape.hidden=4", "gan.steps=3", "gan.batch=4", "gan.resolution_levels=4",
                           "gan.latent_levels=3", "gan.width=4", "gan.max_width=8", "gan.disc_layers=3",
                           "seg.steps=3", "seg.width=4", "cls.steps=3", "cls.width=4", "seed=1"})
        c.set(kv);
    return c;
}

fs::path fresh(const std::string& name) {
    const auto p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

const std::vector<std::string> kChain{"toy-data", "wss-train", "wss-relabel", "shape-pretrain", "geogan-train",
                                      "generate", "seg-train", "seg-eval", "cls-train", "cls-eval"};

std::string schema_field(const Config& c) {
    try {
        c.validate();
    } catch (const SchemaError& e) {
        return e.field();
    }
    return "";
}

}  // namespace

TEST_CASE("defaults validate and overrides are typed") {
    Config c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.real("gan.lambda1") == 0.92);
    CHECK(c.real("gan.lambda2") == 0.9);
    CHECK(c.str("gan.variant") == "full");

    c.set("gan.lambda1=-1");
    CHECK(schema_field(c) == "gan.lambda1");
    c = Config{};
    c.set("seg.steps", "many");
    CHECK(schema_field(c) == "seg.steps");
    c = Config{};
    c.set("gan.variant", "no_everything");
    CHECK(schema_field(c) == "gan.variant");
    c = Config{};
    c.set("toy.size", "16");
    CHECK(schema_field(c) == "toy.size");
    CHECK_THROWS_AS(c.set("gan.lambda3=1"), SchemaError);
    CHECK_THROWS_AS(c.set("novalue"), SchemaError);
}

TEST_CASE("file layers under command-line overrides") {
    const auto dir = fresh("geogan_pipeline_cfg");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "base.cfg");
        f << "# base\nseed = 7\ngan.steps = 12   # short\n\nseg.data = augmented\n";
    }
    Config c;
    c.load_file(dir / "base.cfg");
    c.set("gan.steps=20");
    CHECK(c.seed() == 7);
    CHECK(c.integer("gan.steps") == 20);
    CHECK(c.str("seg.data") == "augmented");
    {
        std::ofstream f(dir / "bad.cfg");
        f << "seed 7\n";
    }
    try {
        Config{}.load_file(dir / "bad.cfg");
        FAIL("expected a schema error");
    } catch (const SchemaError& e) {
        CHECK(e.field().find("bad.cfg:1") != std::string::npos);
    }
    Config a, b;
    b.set("seed=8");
    CHECK(a.hash() != b.hash());
    fs::remove_all(dir);
}

TEST_CASE("missing upstream artifacts name the producer") {
    const auto out = fresh("geogan_pipeline_missing");
    const auto c = tiny();
    const std::vector<std::pair<std::string, std::string>> cases{
        {"wss-train", "toy-data"}, {"shape-pretrain", "toy-data"}, {"seg-eval", "toy-data"}};
    for (const auto& [cmd, producer] : cases) {
        try {
            run_subcommand(cmd, c, out);
            FAIL("expected MissingArtifact for " << cmd);
        } catch (const MissingArtifact& e) {
            CHECK(e.producer() == producer);
        }
    }
    run_subcommand("toy-data", c, out);
    const std::vector<std::pair<std::string, std::string>> next{{"wss-relabel", "wss-train"},
                                                                {"geogan-train", "shape-pretrain"},
                                                                {"generate", "geogan-train"},
                                                                {"seg-eval", "seg-train"},
                                                                {"cls-eval", "cls-train"},
                                                                {"ablate", "shape-pretrain"}};
    for (const auto& [cmd, producer] : next) {
        try {
            run_subcommand(cmd, c, out);
            FAIL("expected MissingArtifact for " << cmd);
        } catch (const MissingArtifact& e) {
            CHECK(e.producer() == producer);
        }
    }
    auto wss = c;
    wss.set("seg.data=wss");
    CHECK_THROWS_AS(run_subcommand("seg-train", wss, out), MissingArtifact);
    CHECK(run_and_report("generate", c, out) == 3);
    auto bad = c;
    bad.set("gan.lambda1=-1");
    CHECK(run_and_report("toy-data", bad, out) == 2);
    CHECK(run_and_report("no-such-step", c, out) == 2);
    fs::remove_all(out);
}

TEST_CASE("full chain writes manifests and a metrics report, reproducibly") {
    const auto a = fresh("geogan_pipeline_a"), b = fresh("geogan_pipeline_b");
    const auto c = tiny();
    for (const auto& cmd : kChain) {
        const auto ra = run_subcommand(cmd, c, a);
        const auto rb = run_subcommand(cmd, c, b);
        CHECK(ra.manifest["subcommand"] == cmd);
        CHECK(ra.manifest["config_hash"] == c.hash());
        CHECK(ra.manifest["seed"] == 1);
        CHECK(ra.manifest["git_describe"].get<std::string>() == git_describe());
        CHECK(ra.manifest["wall_time_s"].get<double>() >= 0.0);
        CHECK(!ra.manifest["artifacts"].empty());
        CHECK(ra.manifest["artifacts"] == rb.manifest["artifacts"]);
        CHECK(fs::exists(ra.manifest_path));
    }
    std::ifstream in(a / "reports" / "seg_real.json");
    const auto report = geogan::metrics::MetricsReport::from_json(nlohmann::json::parse(in));
    CHECK(report.metrics.count("DM"));
    CHECK_NOTHROW(report.validate());

    auto wss = c;
    wss.set("seg.data=wss");
    CHECK_NOTHROW(run_subcommand("seg-train", wss, a));

    auto reseeded = c;
    reseeded.set("seed=2");
    const auto other = fresh("geogan_pipeline_c");
    CHECK(run_subcommand("toy-data", reseeded, other).manifest["artifacts"] !=
          run_subcommand("toy-data", c, other / "again").manifest["artifacts"]);
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(other);
}

TEST_CASE("ablations differ from the full run only in the variant") {
    const auto out = fresh("geogan_pipeline_ablate");
    const auto c = tiny();
    for (const auto* cmd : {"toy-data", "shape-pretrain"}) run_subcommand(cmd, c, out);
    auto full = c;
    full.set("gan.variant=full");
    const auto base = run_subcommand("ablate", full, out).manifest["config"];
    for (const auto* v : {"no_class", "no_shape", "no_sampling"}) {
        auto abl = c;
        abl.set("gan.variant", v);
        const auto r = run_subcommand("ablate", abl, out);
        std::vector<std::string> diff;
        for (const auto& [k, val] : r.manifest["config"].items())
            if (base[k] != val) diff.push_back(k);
        CHECK(diff == std::vector<std::string>{"gan.variant"});
        CHECK(fs::exists(out / "reports" / (std::string("ablate_") + v + ".json")));
        CHECK(fs::exists(out / "geogan" / v / "generator.ckpt"));
    }
    fs::remove_all(out);
}
