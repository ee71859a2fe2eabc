#include "doctest.h"
#include "gradcheck.hpp"

#include <cmath>

#include "geogan/nn.hpp"

using namespace geogan;
using ag::Var;
using testing::grad_check;
using testing::random_tensor;
using testing::weighted_sum;

namespace {

void check_unary(Var (*op)(const Var&), double lo, double hi) {
    Rng rng(3);
    Var x(random_tensor(2, 3, 2, 2, rng, lo, hi), true);
    const Tensor w = random_tensor(2, 3, 2, 2, rng);
    auto r = grad_check([&] { return weighted_sum(op(x), w); }, {x});
    CHECK(r.relative_error < 1e-6);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    check_unary(&ag::sigmoid, -3, 3);
    check_unary(&ag::tanh, -2, 2);
    check_unary(&ag::softplus, -3, 3);
    check_unary(&ag::exp, -1, 1);
    check_unary(&ag::log, 0.5, 2);
    check_unary(&ag::square, -2, 2);
    check_unary(&ag::relu, 0.1, 1);

    Rng rng(4);
    Var a(random_tensor(1, 2, 3, 3, rng), true);
    Var b(random_tensor(1, 2, 3, 3, rng), true);
    const Tensor w = random_tensor(1, 2, 3, 3, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::mul(ag::sub(a, b), ag::add(a, b)), w); }, {a, b}).relative_error <
          1e-6);
}

TEST_CASE("conv2d gradient for stride 1 and 2") {
    Rng rng(5);
    for (int stride : {1, 2}) {
        Var x(random_tensor(2, 3, 6, 6, rng), true);
        Var wt(random_tensor(4, 3, 3, 3, rng), true);
        Var b(random_tensor(1, 4, 1, 1, rng), true);
        const int ho = (6 + 2 - 3) / stride + 1;
        const Tensor w = random_tensor(2, 4, ho, ho, rng);
        auto r = grad_check([&] { return weighted_sum(ag::conv2d(x, wt, b, stride, 1), w); }, {x, wt, b});
        CHECK(r.relative_error < 1e-6);
    }
}

TEST_CASE("conv2d agrees with a direct convolution") {
    Rng rng(6);
    const Tensor x = random_tensor(1, 2, 5, 5, rng);
    const Tensor wt = random_tensor(3, 2, 3, 3, rng);
    Var out = ag::conv2d(Var(x), Var(wt), Var(), 1, 1);
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                double acc = 0.0;
                for (int c = 0; c < 2; ++c)
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int y = i + di, xx = j + dj;
                            if (y < 0 || y >= 5 || xx < 0 || xx >= 5) continue;
                            acc += x.at(0, c, y, xx) * wt.at(o, c, di + 1, dj + 1);
                        }
                CHECK(out.value().at(0, o, i, j) == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("linear, pooling and resampling gradients") {
    Rng rng(7);
    Var x(random_tensor(3, 2, 4, 4, rng), true);
    Var wt(random_tensor(5, 32, 1, 1, rng), true);
    Var b(random_tensor(1, 5, 1, 1, rng), true);
    const Tensor w = random_tensor(3, 5, 1, 1, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::linear(x, wt, b), w); }, {x, wt, b}).relative_error < 1e-6);

    const Tensor w2 = random_tensor(3, 2, 8, 8, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::upsample2x(x), w2); }, {x}).relative_error < 1e-6);
    const Tensor w3 = random_tensor(3, 2, 2, 2, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::avg_pool2(x), w3); }, {x}).relative_error < 1e-6);
    const Tensor w4 = random_tensor(3, 2, 1, 1, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::global_avg_pool(x), w4); }, {x}).relative_error < 1e-6);
}

TEST_CASE("channel and batch plumbing gradients") {
    Rng rng(8);
    Var a(random_tensor(2, 2, 3, 3, rng), true);
    Var b(random_tensor(2, 1, 3, 3, rng), true);
    const Tensor w = random_tensor(2, 3, 3, 3, rng);
    CHECK(grad_check([&] {
              std::vector<Var> parts{a, b};
              return weighted_sum(ag::concat_channels(parts), w);
          },
                     {a, b})
              .relative_error < 1e-6);
    const Tensor w2 = random_tensor(2, 1, 3, 3, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::slice_channels(a, 1, 2), w2); }, {a}).relative_error < 1e-6);
    const Tensor w3 = random_tensor(4, 1, 3, 3, rng);
    CHECK(grad_check([&] {
              std::vector<Var> parts{b, b};
              return weighted_sum(ag::concat_batch(parts), w3);
          },
                     {b})
              .relative_error < 1e-6);
    Var c(random_tensor(2, 3, 1, 1, rng), true);
    const Tensor w4 = random_tensor(2, 3, 4, 4, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::broadcast_spatial(c, 4, 4), w4); }, {c}).relative_error < 1e-6);
}

TEST_CASE("batch norm gradient in training mode") {
    Rng rng(9);
    Var x(random_tensor(3, 2, 3, 3, rng), true);
    Var g(random_tensor(1, 2, 1, 1, rng, 0.5, 1.5), true);
    Var b(random_tensor(1, 2, 1, 1, rng), true);
    Tensor rm(1, 2, 1, 1), rv(1, 2, 1, 1, 1.0);
    const Tensor w = random_tensor(3, 2, 3, 3, rng);
    auto r = grad_check([&] { return weighted_sum(ag::batch_norm(x, g, b, rm, rv, true), w); }, {x, g, b});
    CHECK(r.relative_error < 1e-6);
}

TEST_CASE("softmax family and losses") {
    Rng rng(10);
    Var x(random_tensor(2, 4, 2, 3, rng, -2, 2), true);
    const Tensor w = random_tensor(2, 4, 2, 3, rng);
    CHECK(grad_check([&] { return weighted_sum(ag::softmax_channels(x), w); }, {x}).relative_error < 1e-6);
    CHECK(grad_check([&] { return weighted_sum(ag::log_softmax_channels(x), w); }, {x}).relative_error < 1e-6);

    std::vector<int> labels(2 * 2 * 3);
    for (auto& l : labels) l = rng.integer(0, 3);
    const std::vector<double> cw{1.0, 0.5, 2.0, 0.0};
    CHECK(grad_check([&] { return ag::cross_entropy(x, labels, cw); }, {x}).relative_error < 1e-6);

    Tensor targets(2, 4, 2, 3);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    CHECK(grad_check([&] { return ag::bce_with_logits(x, targets); }, {x}).relative_error < 1e-6);
}

TEST_CASE("cross entropy equals negative log softmax at the label") {
    Tensor z(1, 2, 1, 1);
    z[0] = 0.3;
    z[1] = -0.7;
    const std::vector<int> lab{1};
    const double expected = -(-0.7 - std::log(std::exp(0.3) + std::exp(-0.7)));
    CHECK(ag::cross_entropy(Var(z), lab).item() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("affine warp gradient with respect to image and transform") {
    Rng rng(11);
    Var img(random_tensor(2, 2, 7, 6, rng, 0, 1), true);
    Tensor th(2, 6, 1, 1);
    const double base[6] = {0.93, 0.11, 0.037, -0.07, 1.08, -0.061};
    for (int n = 0; n < 2; ++n)
        for (int k = 0; k < 6; ++k) th[n * 6 + k] = base[k] + 0.01 * n;
    Var theta(th, true);
    const std::vector<double> fill{0.0, 1.0};
    const Tensor w = random_tensor(2, 2, 7, 6, rng);
    auto r = grad_check([&] { return weighted_sum(ag::affine_warp(img, theta, fill), w); }, {img, theta}, 1e-7);
    CHECK(r.relative_error < 1e-5);
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Var x(Tensor(1, 1, 1, 1, 2.0), true);
    {
        ag::NoGradGuard guard;
        Var y = ag::square(x);
        CHECK_FALSE(y.requires_grad());
    }
    Var y = ag::square(x);
    CHECK(y.requires_grad());
    y.backward();
    CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("adam moves a quadratic toward its minimum") {
    Var p(Tensor(1, 1, 1, 1, 3.0), true);
    nn::ParameterSet ps;
    ps.add("p", p);
    nn::Adam opt(ps, {.lr = 0.1});
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        ag::square(p).backward();
        opt.step();
    }
    CHECK(std::abs(p.item()) < 0.05);
}
