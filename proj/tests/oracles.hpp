#pragma once

// Brute-force reference implementations used to check the fast metrics.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "geogan/metrics.hpp"
#include "geogan/random.hpp"

namespace geogan::testing {

inline std::vector<std::pair<int, int>> points_of(const metrics::BinaryMask& m) {
    std::vector<std::pair<int, int>> pts;
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
            if (m(r, c)) pts.emplace_back(r, c);
    return pts;
}

inline double dice_oracle(const metrics::BinaryMask& p, const metrics::BinaryMask& r) {
    const auto a = points_of(p), b = points_of(r);
    if (a.empty() && b.empty()) return 1.0;
    std::size_t both = 0;
    for (const auto& x : a) both += std::find(b.begin(), b.end(), x) != b.end();
    return 2.0 * static_cast<double>(both) / static_cast<double>(a.size() + b.size());
}

inline double directed_oracle(const std::vector<std::pair<int, int>>& a, const std::vector<std::pair<int, int>>& b) {
    double worst = 0.0;
    for (const auto& x : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& y : b) {
            const double dr = x.first - y.first, dc = x.second - y.second;
            best = std::min(best, std::sqrt(dr * dr + dc * dc));
        }
        worst = std::max(worst, best);
    }
    return worst;
}

inline double hausdorff_oracle(const metrics::BinaryMask& p, const metrics::BinaryMask& r) {
    const auto a = points_of(p), b = points_of(r);
    return std::max(directed_oracle(a, b), directed_oracle(b, a));
}

inline double mae_oracle(const metrics::BinaryMask& p, const metrics::BinaryMask& r) {
    double s = 0;
    for (int i = 0; i < p.height; ++i)
        for (int j = 0; j < p.width; ++j) s += std::abs(double(p(i, j)) - double(r(i, j)));
    return s / (p.height * p.width);
}

/// Fraction of (positive, negative) pairs ordered correctly; ties count 1/2.
inline double auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] == 1) continue;
            den += 1;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / den;
}

/// Random mask: sparse noise plus a few rectangles, so both scattered and
/// compact shapes are exercised.
inline metrics::BinaryMask random_mask(Rng& rng, int h, int w, double density) {
    metrics::BinaryMask m(h, w, 0);
    for (auto& v : m.data) v = rng.bernoulli(density) ? 1 : 0;
    const int rects = static_cast<int>(rng.integer(0, 3));
    for (int k = 0; k < rects; ++k) {
        const int r0 = static_cast<int>(rng.integer(0, h - 1)), c0 = static_cast<int>(rng.integer(0, w - 1));
        const int rh = static_cast<int>(rng.integer(1, std::max(1, h / 3)));
        const int cw = static_cast<int>(rng.integer(1, std::max(1, w / 3)));
        for (int r = r0; r < std::min(h, r0 + rh); ++r)
            for (int c = c0; c < std::min(w, c0 + cw); ++c) m(r, c) = 1;
    }
    return m;
}

}  // namespace geogan::testing
