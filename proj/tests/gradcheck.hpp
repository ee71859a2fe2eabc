#pragma once

// Central finite-difference oracle shared by the gradient tests.

#include <cmath>
#include <functional>
#include <vector>

#include "geogan/autograd.hpp"
#include "geogan/random.hpp"

namespace geogan::testing {

struct GradCheckResult {
    double relative_error = 0.0;
    double analytic_norm = 0.0;
};

/// Compares d f / d inputs[k] from backward() with central differences.
/// rel = ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2).
inline GradCheckResult grad_check(const std::function<ag::Var()>& f, std::vector<ag::Var> inputs, double h = 1e-6) {
    for (auto& in : inputs) in.zero_grad();
    ag::Var out = f();
    out.backward();
    std::vector<Tensor> analytic;
    for (auto& in : inputs) analytic.push_back(in.grad());

    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& x = inputs[k].mutable_value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            double fp = 0.0, fm = 0.0;
            {
                ag::NoGradGuard guard;
                x[i] = saved + h;
                fp = f().item();
                x[i] = saved - h;
                fm = f().item();
            }
            x[i] = saved;
            const double numeric = (fp - fm) / (2 * h);
            const double a = analytic[k][i];
            diff2 += (a - numeric) * (a - numeric);
            an2 += a * a;
            nu2 += numeric * numeric;
        }
    }
    GradCheckResult r;
    r.analytic_norm = std::sqrt(an2);
    const double denom = std::max(std::sqrt(an2), std::sqrt(nu2));
    r.relative_error = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
    return r;
}

inline Tensor random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(n, c, h, w);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// sum(x * weights) with fixed random weights, so every output element matters.
inline ag::Var weighted_sum(const ag::Var& x, const Tensor& weights) {
    return ag::sum(ag::mul(x, ag::Var(weights)));
}

}  // namespace geogan::testing
