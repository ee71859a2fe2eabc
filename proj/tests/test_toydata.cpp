#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "geogan/toydata.hpp"

using namespace geogan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("geogan_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("toy generator honours the infected fraction") {
    ToyOptions o;
    o.count = 10;
    o.seed = 7;
    o.infected_fraction = 0.5;
    const auto ds = generate_toy_dataset(o, LabelScheme::covid_default());
    REQUIRE(ds.size() == 10);
    int infected = 0;
    for (const auto& s : ds) infected += s.class_label;
    CHECK(infected == 5);
}

TEST_CASE("not-infected toy samples carry no pathology") {
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        ToyOptions o;
        o.count = 1;
        o.seed = seed;
        o.infected_fraction = 0.0;
        const auto ds = generate_toy_dataset(o, LabelScheme::covid_default());
        CHECK(ds[0].class_label == 0);
        CHECK(labels_present(ds[0].mask) == std::vector<int>{0});
    }
}

TEST_CASE("toy generation is a pure function of the seed") {
    ToyOptions o;
    o.count = 6;
    o.seed = 42;
    const auto a = generate_toy_dataset(o, LabelScheme::covid_default());
    const auto b = generate_toy_dataset(o, LabelScheme::covid_default());
    CHECK(a == b);
    o.seed = 43;
    CHECK_FALSE(a == generate_toy_dataset(o, LabelScheme::covid_default()));
}

TEST_CASE("toy generator rejects bad arguments") {
    ToyOptions o;
    o.height = 48;
    CHECK_THROWS_AS(generate_toy_dataset(o, LabelScheme::covid_default()), DataError);
    o.height = 16;
    CHECK_THROWS_AS(generate_toy_dataset(o, LabelScheme::covid_default()), DataError);
    o.height = 64;
    o.infected_fraction = 1.5;
    CHECK_THROWS_AS(generate_toy_dataset(o, LabelScheme::covid_default()), DataError);
}

TEST_CASE("effusion sits at the lower lung boundary and is denser than air") {
    ToyOptions o;
    o.count = 40;
    o.seed = 5;
    o.infected_fraction = 1.0;
    const auto ds = generate_toy_dataset(o, LabelScheme::covid_default());
    double row_ggo = 0, row_eff = 0;
    int n_ggo = 0, n_eff = 0;
    double int_ggo = 0, int_con = 0;
    int c_ggo = 0, c_con = 0;
    for (const auto& s : ds)
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                const int v = s.mask(r, c);
                if (v == 1) {
                    row_ggo += r;
                    ++n_ggo;
                    int_ggo += s.image(r, c);
                    ++c_ggo;
                }
                if (v == 2) {
                    int_con += s.image(r, c);
                    ++c_con;
                }
                if (v == 3) {
                    row_eff += r;
                    ++n_eff;
                }
            }
    REQUIRE(n_ggo > 0);
    REQUIRE(n_eff > 0);
    CHECK(row_eff / n_eff > row_ggo / n_ggo + 8.0);
    CHECK(int_con / c_con > int_ggo / c_ggo + 0.2);
}

TEST_CASE("split_into_instances produces N^2 row-major crops") {
    ToyOptions o;
    o.count = 1;
    o.seed = 3;
    o.infected_fraction = 1.0;
    const auto s = generate_toy_dataset(o, LabelScheme::covid_default()).front();

    const auto bag = split_into_instances(s, GridSpec{4});
    REQUIRE(bag.instances.size() == 16);
    for (const auto& crop : bag.instances) {
        CHECK(crop.height == 16);
        CHECK(crop.width == 16);
    }
    CHECK(bag.bag_label == s.class_label);
    CHECK(bag.source_id == s.id);
    // crop k covers rows (k / N) * 16.., cols (k % N) * 16..
    CHECK(bag.instances[6](0, 0) == s.image(16, 32));
    CHECK(bag.instances[13](5, 7) == s.image(48 + 5, 16 + 7));

    const auto one = split_into_instances(s, GridSpec{1});
    REQUIRE(one.instances.size() == 1);
    CHECK(one.instances[0] == s.image);

    CHECK_THROWS_AS(split_into_instances(s, GridSpec{3}), DataError);
}

TEST_CASE("reassembling instances reproduces the image for every divisor grid") {
    ToyOptions o;
    o.count = 3;
    o.seed = 11;
    for (const auto& s : generate_toy_dataset(o, LabelScheme::covid_default())) {
        for (int n : {1, 2, 4, 8, 16, 32, 64}) {
            CHECK(reassemble_instances(split_into_instances(s, GridSpec{n})) == s.image);
        }
    }
}

TEST_CASE("label scheme encoding must be a bijection") {
    const auto def = LabelScheme::covid_default();
    CHECK(def.n() == 4);
    CHECK(def.encode("ground_glass") == 1);
    CHECK(def.pathology_labels() == std::vector<int>{1, 2, 3});
    CHECK(LabelScheme::from_json(def.to_json()) == def);
    CHECK_THROWS_AS(LabelScheme({"a", "b"}, {{"a", 0}, {"b", 0}}), DataError);
    CHECK_THROWS_AS(LabelScheme({"a", "a"}), DataError);
}

TEST_CASE("split validation") {
    std::vector<std::string> ids{"a", "b", "c", "d", "e"};
    const auto s = make_split(ids, 3, 1, 9);
    CHECK_NOTHROW(s.validate(ids));
    CHECK(s.train.size() == 3);
    CHECK(s.validation.size() == 1);
    CHECK(s.test.size() == 1);
    auto bad = s;
    bad.test.push_back(bad.train.front());
    CHECK_THROWS_AS(bad.validate(ids), DataError);
}

TEST_CASE("dataset layout round trip and load errors") {
    const auto root = scratch_dir("layout");
    ToyOptions o;
    o.count = 5;
    o.seed = 2;
    auto samples = generate_toy_dataset(o, LabelScheme::covid_default());
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    const auto split = make_split(ids, 3, 1, 1);
    const auto ds = assign_split(samples, LabelScheme::covid_default(), split);
    save_dataset(root, ds);
    CHECK(fs::exists(root / "scheme.json"));
    CHECK(fs::exists(root / "labels.csv"));

    const auto back = load_dataset(root);
    CHECK(back.train.size() == 3);
    CHECK(back.val.size() == 1);
    CHECK(back.test.size() == 1);
    CHECK(back.size() == 5);
    for (const auto& s : back.train) {
        const auto it = std::find_if(samples.begin(), samples.end(), [&](const auto& x) { return x.id == s.id; });
        REQUIRE(it != samples.end());
        // generator quantizes to 8 bits, so PNG storage is lossless
        CHECK(s == *it);
    }

    SUBCASE("unregistered mask value") {
        LabelMap m = back.train[0].mask;
        m(0, 0) = 9;
        write_mask_png(root / "train" / "masks" / (back.train[0].id + ".png"), m);
        CHECK_THROWS_WITH_AS(load_dataset(root), doctest::Contains("mask value 9"), DataError);
    }
    SUBCASE("missing mask names the sample") {
        fs::remove(root / "train" / "masks" / (back.train[1].id + ".png"));
        CHECK_THROWS_WITH_AS(load_dataset(root), doctest::Contains(back.train[1].id.c_str()), DataError);
    }
    SUBCASE("shape mismatch reports both shapes") {
        write_mask_png(root / "train" / "masks" / (back.train[2].id + ".png"), LabelMap(32, 64, 0));
        CHECK_THROWS_WITH_AS(load_dataset(root), doctest::Contains("64x64 vs mask 32x64"), DataError);
    }
}

TEST_CASE("empty dataset directory loads as empty") {
    const auto root = scratch_dir("empty");
    const auto ds = load_dataset(root);
    CHECK(ds.size() == 0);
}
