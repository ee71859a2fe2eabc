#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "geogan/augment.hpp"
#include "log_capture.hpp"

using namespace geogan;
using namespace geogan::aug;
namespace fs = std::filesystem;

namespace {

std::vector<ImageSample> toy(int count, std::uint64_t seed) {
    ToyOptions o;
    o.count = count;
    o.seed = seed;
    o.height = 32;
    o.width = 32;
    return generate_toy_dataset(o, LabelScheme::covid_default());
}

const gan::GeoGan& model() {
    static const gan::GeoGan m = [] {
        gan::GanConfig c;
        c.gen.resolution_levels = 4;
        c.gen.latent_levels = 3;
        c.gen.width = 4;
        c.gen.max_width = 8;
        c.gen.batch = 4;
        c.stn.width = 4;
        c.stn.hidden = 8;
        c.disc.width = 4;
        c.disc.layers = 3;
        c.steps = 10;
        c.seed = 5;
        Rng rng(1);
        shape::ShapePriorConfig sc;
        sc.width = 2;
        sc.hidden = 4;
        const shape::ShapePriorModel prior(LabelScheme::covid_default(), 32, 32, sc, rng);
        return gan::train_geogan(toy(16, 2), prior, c);
    }();
    return m;
}

SplitDataset split(int train, int val, int test, std::uint64_t seed = 3) {
    auto all = toy(train + val + test, seed);
    SplitDataset d;
    d.scheme = LabelScheme::covid_default();
    d.train.assign(all.begin(), all.begin() + train);
    d.val.assign(all.begin() + train, all.begin() + train + val);
    d.test.assign(all.begin() + train + val, all.end());
    return d;
}

std::string directory_digest(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        acc += fs::relative(f, root).string() + ":" + std::to_string(fnv1a(ss.str())) + "\n";
    }
    return acc;
}

}  // namespace

TEST_CASE("draw count and condition policies") {
    const auto data = toy(6, 9);
    AugmentationPlan plan;
    plan.samples_per_base = 3;
    for (const auto& base : data) {
        const auto out = generate_samples(model(), base, plan);
        CHECK(out.size() == 3);
        for (const auto& s : out) {
            CHECK(s.sample.class_label == base.class_label);
            CHECK(s.provenance.base_id == base.id);
            CHECK(s.provenance.origin == "synthetic");
            CHECK_NOTHROW(validate_sample(s.sample, LabelScheme::covid_default()));
        }
    }
    plan.samples_per_base = 0;
    CHECK_THROWS_AS(generate_samples(model(), data[0], plan), gan::ConfigError);
}

TEST_CASE("class-0 draws carry no pathology") {
    const auto data = toy(6, 9);
    AugmentationPlan plan;
    plan.samples_per_base = 2;
    const std::array<int, 2> cond{0, 1};
    for (const auto& base : data) {
        const auto out = generate_samples(model(), base, plan, cond);
        CHECK(out[0].sample.class_label == 0);
        CHECK(labels_present(out[0].sample.mask) == std::vector<int>{0});
        CHECK(out[1].sample.class_label == 1);
    }
}

TEST_CASE("sampled draws from one base differ") {
    const auto data = toy(6, 9);
    AugmentationPlan plan;
    plan.samples_per_base = 2;
    for (const auto& base : data) {
        if (!base.class_label) continue;
        const auto out = generate_samples(model(), base, plan);
        CHECK(out[0].sample.mask != out[1].sample.mask);
        CHECK(out[0].provenance.seed != out[1].provenance.seed);
    }
}

TEST_CASE("base dims must match the model") {
    ToyOptions o;
    o.count = 1;
    const auto big = generate_toy_dataset(o, LabelScheme::covid_default());
    CHECK_THROWS(generate_samples(model(), big[0], AugmentationPlan{}));
}

TEST_CASE("augmented dataset arithmetic and provenance") {
    const auto d = split(100, 4, 6);
    AugmentationPlan plan;
    plan.samples_per_base = 2;
    plan.seed = 8;
    const auto aug = augment_dataset(model(), d, plan);
    CHECK(aug.data.train.size() == 300);
    CHECK(aug.data.val.size() == 4);
    CHECK(aug.data.test.size() == 6);
    CHECK(aug.provenance.size() == aug.data.size());
    std::set<std::string> ids;
    for (const auto& p : aug.provenance) CHECK(ids.insert(p.id).second);
    for (const auto* fold : {&aug.data.train, &aug.data.val, &aug.data.test})
        for (const auto& s : *fold) CHECK(ids.count(s.id) == 1);

    plan.base_split = BaseSplit::Validation;
    CHECK(augment_dataset(model(), d, plan).data.train.size() == 108);
}

TEST_CASE("balance policy evens the class counts") {
    auto d = split(20, 0, 0);
    std::erase_if(d.train, [](const ImageSample& s) { return s.class_label == 0; });
    const int infected = static_cast<int>(d.train.size());
    AugmentationPlan plan;
    plan.policy = ConditionPolicy::Balance;
    plan.samples_per_base = 2;
    const auto aug = augment_dataset(model(), d, plan);
    int counts[2] = {0, 0};
    for (const auto& s : aug.data.train) ++counts[s.class_label];
    CHECK(counts[0] + counts[1] == 3 * infected);
    CHECK(std::abs(counts[0] - counts[1]) <= 1);
}

TEST_CASE("written dataset is reproducible and reloadable") {
    const auto d = split(8, 2, 2);
    AugmentationPlan plan;
    plan.samples_per_base = 2;
    plan.seed = 4;
    const auto root = fs::temp_directory_path() / "geogan_augment_test";
    fs::remove_all(root);
    build_augmented_dataset(model(), d, plan, root / "a");
    build_augmented_dataset(model(), d, plan, root / "b");
    CHECK(directory_digest(root / "a") == directory_digest(root / "b"));

    const auto loaded = load_dataset(root / "a");
    CHECK(loaded.train.size() == 24);
    const auto rows = read_provenance(root / "a" / "provenance.csv");
    CHECK(rows.size() == 28);
    std::set<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root / "a"))
        if (e.path().parent_path().filename() == "images") files.insert(e.path().stem().string());
    std::set<std::string> listed;
    for (const auto& r : rows) listed.insert(r.id);
    CHECK(files == listed);
    const auto aug = augment_dataset(model(), d, plan);
    CHECK(rows.back().affine.a == aug.provenance.back().affine.a);

    plan.seed = 5;
    build_augmented_dataset(model(), d, plan, root / "c");
    CHECK(directory_digest(root / "a") != directory_digest(root / "c"));
    fs::remove_all(root);
}

TEST_CASE("empty base split warns and writes only real data") {
    SplitDataset empty;
    empty.scheme = LabelScheme::covid_default();
    testing::LogCapture log;
    const auto aug = augment_dataset(model(), empty, AugmentationPlan{});
    CHECK(aug.data.size() == 0);
    CHECK(aug.provenance.empty());
    CHECK(log.contains("empty"));
}

TEST_CASE("write failures name the path") {
    const auto blocker = fs::temp_directory_path() / "geogan_augment_blocker";
    { std::ofstream(blocker) << "x"; }
    try {
        build_augmented_dataset(model(), split(2, 0, 0), AugmentationPlan{}, blocker / "out");
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("geogan_augment_blocker") != std::string::npos);
    }
    fs::remove(blocker);
}
