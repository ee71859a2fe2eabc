#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>

#include "geogan/convert.hpp"
#include "geogan/geogan.hpp"
#include "gradcheck.hpp"

using namespace geogan;
using namespace geogan::gan;

namespace {

const double kLn2 = std::numbers::ln2;

std::vector<ImageSample> toy(int count, std::uint64_t seed, int size = 32) {
    ToyOptions o;
    o.count = count;
    o.seed = seed;
    o.height = size;
    o.width = size;
    return generate_toy_dataset(o, LabelScheme::covid_default());
}

GanConfig small_config(std::uint64_t seed = 1, Variant v = Variant::Full) {
    GanConfig c;
    c.gen.resolution_levels = 4;
    c.gen.latent_levels = 3;
    c.gen.width = 4;
    c.gen.max_width = 8;
    c.gen.batch = 4;
    c.gen.flags = flags_for(v);
    c.stn.width = 4;
    c.stn.hidden = 8;
    c.disc.width = 4;
    c.disc.layers = 3;
    c.steps = 10;
    c.seed = seed;
    return c;
}

shape::ShapePriorModel small_prior(int size = 32) {
    Rng rng(4);
    shape::ShapePriorConfig c;
    c.width = 2;
    c.hidden = 4;
    return shape::ShapePriorModel(LabelScheme::covid_default(), size, size, c, rng);
}

std::vector<Var> params_of(nn::ParameterSet& ps) {
    std::vector<Var> v;
    for (auto& [_, p] : ps.params) v.push_back(p);
    return v;
}

}  // namespace

TEST_CASE("latent shapes halve per level") {
    CHECK(latent_shape(64, 64, 1, 4) == std::array<int, 2>{64, 64});
    CHECK(latent_shape(64, 64, 4, 4) == std::array<int, 2>{8, 8});
    CHECK(latent_shape(64, 48, 2, 4) == std::array<int, 2>{32, 24});
    CHECK_THROWS_AS(latent_shape(64, 64, 5, 4), GanError);
    CHECK_THROWS_AS(latent_shape(60, 64, 4, 4), GanError);

    GeneratorConfig c;
    c.width = 2;
    c.max_width = 4;
    Rng rng(3);
    const Generator g(c, rng);
    for (auto [h, w] : {std::pair{64, 64}, std::pair{128, 64}}) {
        const Var x(Tensor(2, 1, h, w, 0.3)), s(Tensor(2, 4, h, w, 0.25));
        const std::array<int, 2> cls{0, 1};
        Rng noise(8);
        const auto out = g.forward(x, s, Var(condition_tensor(cls)), Var(Tensor(2, 4, h, w, 0.25)),
                                   LatentSource::Posterior, &noise, nn::Mode::Eval);
        REQUIRE(out.latents.size() == 4);
        for (int l = 1; l <= 4; ++l) {
            const auto& z = out.latents[l - 1].z.shape();
            const auto want = latent_shape(h, w, l, 4);
            CHECK(z[2] == want[0]);
            CHECK(z[3] == want[1]);
            CHECK(z[2] == h >> (l - 1));
        }
        CHECK(out.probs.shape() == std::array<int, 4>{2, 4, h, w});
    }
    CHECK_THROWS_AS(g.forward(Var(Tensor(1, 1, 48, 48)), Var(Tensor(1, 4, 48, 48)), Var(Tensor(1, 2, 1, 1)),
                              std::nullopt, LatentSource::Prior, &rng, nn::Mode::Eval),
                    GanError);
    CHECK_THROWS_AS(g.forward(Var(Tensor(1, 1, 64, 64)), Var(Tensor(1, 4, 64, 64)), Var(Tensor(1, 2, 1, 1)),
                              std::nullopt, LatentSource::Posterior, &rng, nn::Mode::Eval),
                    GanError);
}

TEST_CASE("gaussian KL examples and non-negativity") {
    const std::array<double, 1> one{1.0}, zero{0.0};
    CHECK(gaussian_kl(one, one, zero, one) == doctest::Approx(0.5).epsilon(1e-12));
    // log 2 + (1 + 0) / 8 - 1/2
    const std::array<double, 1> two{2.0};
    CHECK(gaussian_kl(zero, one, zero, two) == doctest::Approx(std::log(2.0) + 0.125 - 0.5).epsilon(1e-12));
    Rng rng(11);
    for (int t = 0; t < 1000; ++t) {
        std::array<double, 3> mq, sq, mp, sp;
        for (int i = 0; i < 3; ++i) {
            mq[i] = rng.normal(0, 2);
            mp[i] = rng.normal(0, 2);
            sq[i] = rng.uniform(0.05, 3);
            sp[i] = rng.uniform(0.05, 3);
        }
        CHECK(gaussian_kl(mq, sq, mp, sp) >= 0.0);
        CHECK(gaussian_kl(mq, sq, mq, sq) == 0.0);
        const Tensor a(1, 3, 1, 1), b(1, 3, 1, 1);
        Tensor tmq(1, 3, 1, 1), tsq(1, 3, 1, 1), tmp(1, 3, 1, 1), tsp(1, 3, 1, 1);
        for (int i = 0; i < 3; ++i) {
            tmq[i] = mq[i];
            tsq[i] = sq[i];
            tmp[i] = mp[i];
            tsp[i] = sp[i];
        }
        const double v = gaussian_kl(GaussianParams{Var(tmq), Var(tsq)}, GaussianParams{Var(tmp), Var(tsp)}).item();
        CHECK(v == doctest::Approx(gaussian_kl(mq, sq, mp, sp)).epsilon(1e-12));
    }
}

TEST_CASE("adversarial and classification loss at chance") {
    const Var zeros(Tensor(4, 1, 1, 1, 0.0));
    const auto adv = adversarial_loss(zeros, zeros);
    CHECK(adv.d.item() == doctest::Approx(2 * kLn2).epsilon(1e-12));
    CHECK(adv.g.item() == doctest::Approx(kLn2).epsilon(1e-12));
    const std::array<int, 4> cond{0, 1, 1, 0};
    CHECK(classification_loss(Var(Tensor(4, 2, 1, 1, 0.3)), cond).item() == doctest::Approx(kLn2).epsilon(1e-12));
    // confident and correct: -log sigmoid(3)
    Tensor l(1, 2, 1, 1);
    l[1] = 3.0;
    const std::array<int, 1> one{1};
    CHECK(classification_loss(Var(l), one).item() ==
          doctest::Approx(std::log1p(std::exp(-3.0))).epsilon(1e-12));
    const std::array<int, 1> bad{2};
    CHECK_THROWS_AS(classification_loss(Var(l), bad), GanError);
}

TEST_CASE("generator objective arithmetic") {
    GeneratorConfig c;
    c.kl_weight = 1.0;
    c.recon_weight = 1.0;
    CHECK(total_generator_loss(LossTerms{1, 1, 1, 0, 0}, c) == doctest::Approx(2.82).epsilon(1e-12));
    CHECK(std::abs(total_generator_loss(LossTerms{1, 1, 1, 0, 0}, c) - 2.82) < 1e-9);
    // linear in each term
    const LossTerms t{0.4, 1.3, 0.2, 0.05, 0.7};
    CHECK(total_generator_loss(t, c) ==
          doctest::Approx(0.4 + 0.92 * 1.3 + 0.9 * 0.2 + 0.05 + 0.7).epsilon(1e-12));
    LossTerms t2 = t;
    t2.cls += 1.0;
    CHECK(total_generator_loss(t2, c) - total_generator_loss(t, c) == doctest::Approx(0.92).epsilon(1e-12));

    c.flags = flags_for(Variant::NoClass);
    CHECK(total_generator_loss(t2, c) == total_generator_loss(t, c));
    CHECK(total_generator_loss(LossTerms{1, 1, 1, 0, 0}, c) == doctest::Approx(1.9).epsilon(1e-12));
    c.flags = flags_for(Variant::NoShape);
    CHECK(total_generator_loss(LossTerms{1, 1, 1, 0, 0}, c) == doctest::Approx(1.92).epsilon(1e-12));
    c.flags = flags_for(Variant::NoSampling);
    CHECK(total_generator_loss(LossTerms{1, 1, 1, 0, 0}, c) == doctest::Approx(2.82).epsilon(1e-12));

    c.flags = {};
    auto s = [](double v) { return Var(Tensor::scalar(v)); };
    CHECK(total_generator_loss(s(t.adv), s(t.cls), s(t.shape), s(t.kl), s(t.recon), c).item() ==
          doctest::Approx(total_generator_loss(t, c)).epsilon(1e-12));
}

TEST_CASE("soft cross-entropy reduces to hard cross-entropy on one-hot targets") {
    Rng rng(2);
    const Var logits(testing::random_tensor(2, 4, 3, 3, rng, -2, 2));
    LabelMap m(3, 3, 0);
    for (auto& v : m.data) v = rng.integer(0, 3);
    const std::array<const LabelMap*, 2> ms{&m, &m};
    const Var target(masks_to_onehot(ms, 4));
    double want = 0.0;
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) {
                double z = 0.0;
                for (int k = 0; k < 4; ++k) z += std::exp(logits.value().at(n, k, y, x));
                want += std::log(z) - logits.value().at(n, m(y, x), y, x);
            }
    CHECK(soft_cross_entropy(logits, target).item() == doctest::Approx(want / 18).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(5);
    DiscriminatorConfig dc;
    dc.width = 2;
    dc.layers = 2;
    Discriminator d(dc, rng);
    nn::ParameterSet dps;
    d.collect(dps);
    CHECK(dps.parameter_count() <= 1000);
    const Var real_x(testing::random_tensor(2, 1, 8, 8, rng, 0, 1));
    const Var real_s(testing::random_tensor(2, 4, 8, 8, rng, 0, 1));
    Var fake_s(testing::random_tensor(2, 4, 8, 8, rng, -1, 1), true);
    const std::array<int, 2> cond{1, 0};
    auto adv_d = [&] { return adversarial_loss(d.forward(real_x, real_s).adv, d.forward(real_x, ag::softmax_channels(fake_s)).adv).d; };
    auto adv_g = [&] { return adversarial_loss(d.forward(real_x, real_s).adv, d.forward(real_x, ag::softmax_channels(fake_s)).adv).g; };
    auto cls = [&] { return classification_loss(d.forward(real_x, ag::softmax_channels(fake_s)).cls, cond); };
    CHECK(testing::grad_check(adv_d, params_of(dps)).relative_error < 1e-3);
    CHECK(testing::grad_check(adv_g, {fake_s}).relative_error < 1e-3);
    CHECK(testing::grad_check(cls, params_of(dps)).relative_error < 1e-3);
    CHECK(testing::grad_check(cls, {fake_s}).relative_error < 1e-3);

    Var mq(testing::random_tensor(1, 2, 3, 3, rng), true), sq(testing::random_tensor(1, 2, 3, 3, rng, 0.2, 2), true);
    Var mp(testing::random_tensor(1, 2, 3, 3, rng), true), sp(testing::random_tensor(1, 2, 3, 3, rng, 0.2, 2), true);
    auto kl = [&] { return gaussian_kl(GaussianParams{mq, sq}, GaussianParams{mp, sp}); };
    CHECK(testing::grad_check(kl, {mq, sq, mp, sp}).relative_error < 1e-3);

    const Var target(ag::softmax_channels(Var(testing::random_tensor(2, 4, 3, 3, rng, -2, 2))).value());
    Var logits(testing::random_tensor(2, 4, 3, 3, rng, -2, 2), true);
    CHECK(testing::grad_check([&] { return soft_cross_entropy(logits, target); }, {logits}).relative_error < 1e-3);
}

TEST_CASE("hierarchy KL gradient through a small generator") {
    GeneratorConfig c;
    c.resolution_levels = 2;
    c.latent_levels = 2;
    c.width = 2;
    c.max_width = 2;
    Rng rng(9);
    Generator g(c, rng);
    nn::ParameterSet ps;
    g.collect(ps);
    CHECK(ps.parameter_count() <= 1000);
    // move the zero-initialized heads off the point where prior == posterior
    for (auto& [_, p] : ps.params)
        for (auto& v : p.mutable_value().values()) v += rng.normal(0, 0.2);
    const Var x(testing::random_tensor(2, 1, 4, 4, rng, 0, 1));
    const Var s(testing::random_tensor(2, 4, 4, 4, rng, 0, 1));
    const Var t(testing::random_tensor(2, 4, 4, 4, rng, 0, 1));
    const std::array<int, 2> cls{0, 1};
    const Var cond(condition_tensor(cls));
    auto kl = [&] {
        Rng noise(1);
        return hierarchy_kl(g.forward(x, s, cond, t, LatentSource::Posterior, &noise, nn::Mode::Eval).latents);
    };
    CHECK(kl().item() > 0.0);
    CHECK(testing::grad_check(kl, params_of(ps)).relative_error < 1e-3);
}

TEST_CASE("evidence lower bound stays below the importance-sampled evidence") {
    Rng rng(21);
    int below = 0;
    for (int t = 0; t < 100; ++t) {
        ToyLatentModel m{rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(0.3, 2)};
        const double x = rng.normal(m.b, std::sqrt(m.a * m.a + m.s * m.s));
        const double mean = rng.normal(0, 1), sd = rng.uniform(0.3, 1.5);
        const double elbo = m.elbo(x, mean, sd);
        const double is = m.log_evidence_is(x, mean, sd, 10000, rng);
        below += elbo <= is;
        CHECK(elbo <= m.log_evidence(x) + 1e-12);
        // exact posterior closes the gap
        const double pv = m.s * m.s / (m.a * m.a + m.s * m.s);
        const double pm = m.a * (x - m.b) / (m.a * m.a + m.s * m.s);
        CHECK(m.elbo(x, pm, std::sqrt(pv)) == doctest::Approx(m.log_evidence(x)).epsilon(1e-10));
        CHECK(m.log_evidence_is(x, pm, std::sqrt(pv), 10, rng) == doctest::Approx(m.log_evidence(x)).epsilon(1e-10));
    }
    CHECK(below == 100);
}

TEST_CASE("first training steps reproduce under a fixed seed") {
    const auto data = toy(12, 3);
    const auto prior = small_prior();
    TrainState a, b, c;
    train_geogan(data, prior, small_config(7), &a);
    train_geogan(data, prior, small_config(7), &b);
    train_geogan(data, prior, small_config(8), &c);
    REQUIRE(a.total.size() == 10);
    CHECK(a.total == b.total);
    CHECK(a.d_loss == b.d_loss);
    CHECK(a.kl == b.kl);
    CHECK(a.total != c.total);
    for (double v : a.total) CHECK(std::isfinite(v));
    CHECK(a.kl.front() == 0.0);
}

TEST_CASE("sampling switch controls synthesis diversity") {
    const auto data = toy(12, 3);
    const auto prior = small_prior();
    const GeoGan det = train_geogan(data, prior, small_config(2, Variant::NoSampling));
    const GeoGan sto = train_geogan(data, prior, small_config(2));
    const auto& base = data[0];
    Rng r1(1), r2(2);
    const auto a = synthesize(det, base, {1}, r1), b = synthesize(det, base, {1}, r2);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    const auto c = synthesize(sto, base, {1}, r1), d = synthesize(sto, base, {1}, r2);
    CHECK(c.image != d.image);
    CHECK(c.latents.front().z.value().values() != d.latents.front().z.value().values());
    CHECK(c.mask.same_dims(32, 32));
    for (int v : c.mask.data) {
        CHECK(v >= 0);
        CHECK(v < 4);
    }
}

TEST_CASE("checkpoint round trip reproduces synthesis") {
    const auto data = toy(12, 3);
    const GeoGan m = train_geogan(data, small_prior(), small_config(4));
    const auto dir = std::filesystem::temp_directory_path() / "geogan_gan_test";
    m.save(dir);
    const GeoGan loaded = GeoGan::load(dir);
    CHECK(loaded.config.hash() == m.config.hash());
    Rng r1(6), r2(6);
    const auto a = synthesize(m, data[1], {0}, r1), b = synthesize(loaded, data[1], {0}, r2);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    CHECK_THROWS(GeoGan::load(dir / "missing"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("configuration errors name the field") {
    GanConfig c = small_config();
    c.gen.lambda1 = -1;
    try {
        GeoGan m(c);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "lambda1");
    }
    c = small_config();
    c.gen.latent_levels = 5;
    CHECK_THROWS_AS(GeoGan{c}, ConfigError);
    c = small_config();
    c.disc.num_labels = 3;
    CHECK_THROWS_AS(GeoGan{c}, ConfigError);
    CHECK_THROWS_AS(parse_variant("no_such"), ConfigError);
    for (auto v : {Variant::Full, Variant::NoClass, Variant::NoShape, Variant::NoSampling})
        CHECK(parse_variant(to_string(v)) == v);
    CHECK(GanConfig::from_json(small_config().to_json()).hash() == small_config().hash());
}

TEST_CASE("training rejects unusable data") {
    const auto prior = small_prior();
    auto data = toy(12, 3);
    CHECK_THROWS_AS(train_geogan(std::span<const ImageSample>{}, prior, small_config()), GanError);
    auto ni = data;
    std::erase_if(ni, [](const ImageSample& s) { return s.class_label == 1; });
    CHECK_THROWS_AS(train_geogan(ni, prior, small_config()), GanError);
    CHECK_THROWS_AS(train_geogan(data, small_prior(64), small_config()), GanError);
    auto deep = small_config();
    deep.gen.resolution_levels = 7;
    CHECK_THROWS_AS(train_geogan(data, prior, deep), GanError);
}
