#include <cstdlib>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "geogan/pipeline.hpp"

namespace pl = geogan::pipeline;

int main(int argc, char** argv) {
    CLI::App app{"Geometry-aware GAN augmentation pipeline on toy chest-CT data"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path, out_dir, variant;
    std::optional<long long> seed;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "base key=value file")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "global seed");
    app.add_option("--out", out_dir, "run directory (default: $GEOGAN_OUT, else ./geogan_run)");
    app.add_option("--set", overrides, "key=value override, repeatable")->take_all();

    std::vector<CLI::App*> subs;
    for (const auto& name : pl::subcommands()) {
        auto* sub = app.add_subcommand(name);
        if (name == "ablate") sub->add_option("--variant", variant, "no_class, no_shape, no_sampling or full")->required();
        subs.push_back(sub);
    }

    CLI11_PARSE(app, argc, argv);

    if (out_dir.empty()) {
        const char* env = std::getenv("GEOGAN_OUT");
        out_dir = env && *env ? env : "geogan_run";
    }

    pl::Config cfg;
    try {
        if (!config_path.empty()) cfg.load_file(config_path);
        for (const auto& kv : overrides) cfg.set(kv);
        if (seed) cfg.set("seed", std::to_string(*seed));
        if (!variant.empty()) cfg.set("gan.variant", variant);
    } catch (const pl::SchemaError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    }

    for (auto* sub : subs)
        if (sub->parsed()) return pl::run_and_report(sub->get_name(), cfg, out_dir);
    return 1;
}
