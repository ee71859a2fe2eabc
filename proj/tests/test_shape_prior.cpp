#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "geogan/convert.hpp"
#include "geogan/shape_prior.hpp"
#include "gradcheck.hpp"

using namespace geogan;
using namespace geogan::shape;

namespace {

std::vector<ImageSample> toy(int count, std::uint64_t seed, double infected = 0.5) {
    ToyOptions o;
    o.count = count;
    o.seed = seed;
    o.infected_fraction = infected;
    return generate_toy_dataset(o, LabelScheme::covid_default());
}

std::vector<LabelMap> masks_of(const std::vector<ImageSample>& ds) {
    std::vector<LabelMap> m;
    for (const auto& s : ds) m.push_back(s.mask);
    return m;
}

const ShapePriorRun& trained() {
    static const ShapePriorRun run = [] {
        ShapePriorConfig c;
        c.seed = 3;
        const auto m = masks_of(toy(24, 5));
        return pretrain_shape_prior(m, LabelScheme::covid_default(), c);
    }();
    return run;
}

}  // namespace

TEST_CASE("ordered pair count is n(n-1)") {
    CHECK(ordered_pairs(LabelScheme::covid_default()).size() == 6);
    const LabelScheme two({"bg", "a", "b"});
    CHECK(ordered_pairs(two) == std::vector<std::pair<int, int>>{{1, 2}, {2, 1}});
    CHECK_THROWS_AS(ordered_pairs(LabelScheme({"bg", "a"})), ShapeError);
    for (const auto& s : toy(8, 2)) CHECK(extract_pair_maps(s.mask, LabelScheme::covid_default()).size() == 6);
}

TEST_CASE("absent labels give all-zero pair maps") {
    LabelMap m(16, 16, 0);
    m(2, 3) = 1;
    m(5, 5) = 2;
    for (const auto& p : extract_pair_maps(m, LabelScheme::covid_default())) {
        auto count = [](const BinaryMap& b) { return std::count(b.data.begin(), b.data.end(), 1); };
        CHECK(count(p.map_i) == (p.i == 3 ? 0 : 1));
        CHECK(count(p.map_j) == (p.j == 3 ? 0 : 1));
        if (p.i == 1) CHECK(p.map_i(2, 3) == 1);
    }
    m(0, 0) = 7;
    CHECK_THROWS_AS(extract_pair_maps(m, LabelScheme::covid_default()), ShapeError);
}

TEST_CASE("shape score arithmetic") {
    CHECK(aggregate_shape_score(std::vector<double>{0.8, 0.6}, 2) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(aggregate_shape_score(std::vector<double>(6, 0.5), 3) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(aggregate_shape_score(std::vector<double>(6, 1.0), 3) == 1.0);
    CHECK_THROWS_AS(aggregate_shape_score(std::vector<double>(5, 0.5), 3), ShapeError);
}

TEST_CASE("untrained prior is exactly one half") {
    Rng rng(1);
    const ShapePriorModel m(LabelScheme::covid_default(), 64, 64, ShapePriorConfig{}, rng);
    for (const auto& s : toy(4, 6)) {
        for (double p : m.pairwise_probabilities(s.mask)) CHECK(p == 0.5);
        CHECK(m.shape_score(s.mask) == 0.5);
    }
    ShapePriorConfig zero;
    zero.epochs = 0;
    const auto m0 = masks_of(toy(6, 1, 1.0));
    const auto run = pretrain_shape_prior(m0, LabelScheme::covid_default(), zero);
    CHECK(run.loss_trace.empty());
    CHECK(run.model.shape_score(m0[0]) == 0.5);
}

TEST_CASE("shape score equals a brute-force loop over ordered pairs") {
    const auto& model = trained().model;
    const auto scheme = LabelScheme::covid_default();
    for (const auto& s : toy(6, 11, 1.0)) {
        double sum = 0.0;
        int count = 0;
        for (int i = 1; i < 4; ++i)
            for (int j = 1; j < 4; ++j) {
                if (i == j) continue;
                PairMap p{BinaryMap(64, 64, 0), BinaryMap(64, 64, 0), i, j};
                for (std::size_t k = 0; k < s.mask.size(); ++k) {
                    p.map_i.data[k] = s.mask.data[k] == i;
                    p.map_j.data[k] = s.mask.data[k] == j;
                }
                sum += model.pairwise_probability(p);
                ++count;
            }
        CHECK(model.shape_score(s.mask) == doctest::Approx(sum / count).epsilon(1e-12));
        // the differentiable path agrees on one-hot input
        const double soft = model.score(Var(mask_to_onehot(s.mask, 4))).item();
        CHECK(soft == doctest::Approx(sum / count).epsilon(1e-12));
    }
}

TEST_CASE("trained prior separates genuine from corrupted pairs") {
    const auto& model = trained().model;
    const auto held = masks_of(toy(40, 99));
    ShapePriorConfig c;
    Rng rng(7);
    double pos = 0, neg = 0;
    int np = 0, nn = 0;
    for (const auto& e : make_training_pairs(held, LabelScheme::covid_default(), c, rng)) {
        const double p = model.pairwise_probability(e.pair);
        (e.label ? pos : neg) += p;
        (e.label ? np : nn) += 1;
    }
    REQUIRE(np > 0);
    REQUIRE(nn > 0);
    CHECK(pos / np - neg / nn >= 0.2);
}

TEST_CASE("real masks outscore label-permuted masks") {
    const auto& model = trained().model;
    const std::array<std::array<int, 3>, 5> perms{{{1, 3, 2}, {2, 1, 3}, {2, 3, 1}, {3, 1, 2}, {3, 2, 1}}};
    double real = 0, permuted = 0;
    int n = 0;
    for (const auto& s : toy(40, 99)) {
        if (!s.class_label) continue;
        real += model.shape_score(s.mask);
        permuted += model.shape_score(permute_labels(s.mask, perms[n % perms.size()]));
        ++n;
    }
    CHECK(real / n > permuted / n);
}

TEST_CASE("ordered pairs are not symmetric") {
    const auto& model = trained().model;
    int differing = 0;
    for (const auto& s : toy(10, 13, 1.0)) {
        for (const auto& p : extract_pair_maps(s.mask, LabelScheme::covid_default())) {
            const PairMap swapped{p.map_j, p.map_i, p.j, p.i};
            const double a = model.pairwise_probability(p), b = model.pairwise_probability(swapped);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            differing += a != b;
        }
    }
    CHECK(differing > 0);
}

TEST_CASE("degenerate and invalid inputs") {
    const auto& model = trained().model;
    const PairMap empty{BinaryMap(64, 64, 0), BinaryMap(64, 64, 0), 1, 2};
    CHECK(std::isfinite(model.pairwise_probability(empty)));
    const PairMap small{BinaryMap(32, 32, 0), BinaryMap(32, 32, 0), 1, 2};
    CHECK_THROWS_AS(model.pairwise_probability(small), ShapeError);
    const PairMap unknown{BinaryMap(64, 64, 0), BinaryMap(64, 64, 0), 2, 2};
    CHECK_THROWS_AS(model.pairwise_probability(unknown), ShapeError);
    const auto ni = masks_of(toy(5, 4, 0.0));
    CHECK_THROWS_AS(pretrain_shape_prior(ni, LabelScheme::covid_default(), ShapePriorConfig{}), ShapeError);
}

TEST_CASE("pretraining is deterministic with duplicate masks") {
    auto m = masks_of(toy(6, 21, 1.0));
    m.push_back(m.front());
    m.push_back(m.front());
    ShapePriorConfig c;
    c.epochs = 3;
    c.seed = 9;
    const auto a = pretrain_shape_prior(m, LabelScheme::covid_default(), c);
    const auto b = pretrain_shape_prior(m, LabelScheme::covid_default(), c);
    CHECK(a.loss_trace == b.loss_trace);
    CHECK(a.model.shape_score(m[1]) == b.model.shape_score(m[1]));
}

TEST_CASE("shape term gradients match finite differences") {
    ShapePriorConfig c;
    c.width = 2;
    c.hidden = 4;
    Rng rng(17);
    ShapePriorModel model(LabelScheme::covid_default(), 16, 16, c, rng);
    nn::ParameterSet ps;
    model.collect(ps);
    // leave the zero-initialized head so every path carries gradient
    for (auto& [_, p] : ps.params)
        for (auto& v : p.mutable_value().values()) v += rng.normal(0, 0.3);
    CHECK(ps.parameter_count() < 1000);
    Var logits(testing::random_tensor(2, 4, 16, 16, rng, -2, 2), true);
    auto term = [&] { return ag::sub(Var(Tensor::scalar(1.0)), ag::mean(model.score(ag::softmax_channels(logits)))); };
    CHECK(testing::grad_check(term, {logits}).relative_error < 1e-3);
    std::vector<Var> params;
    for (auto& [_, p] : ps.params) params.push_back(p);
    CHECK(testing::grad_check(term, params).relative_error < 1e-3);
}

TEST_CASE("checkpoint round trip keeps scores") {
    const auto path = std::filesystem::temp_directory_path() / "geogan_shape_prior_test.ckpt";
    trained().model.save(path);
    const auto loaded = ShapePriorModel::load(path);
    for (const auto& s : toy(3, 30, 1.0)) CHECK(loaded.shape_score(s.mask) == trained().model.shape_score(s.mask));
    CHECK(loaded.scheme() == LabelScheme::covid_default());
    std::filesystem::remove(path);
}
