#pragma once

#include <array>
#include <optional>

#include <nlohmann/json.hpp>

#include "geogan/nn.hpp"
#include "geogan/toydata.hpp"

namespace geogan::stn {

using ag::Var;

/// 2x3 affine map in normalized [-1,1] coordinates, row-major
/// [a0 a1 a2; a3 a4 a5]. It maps output coordinates to input coordinates,
/// so warping samples the input at A(p) for every output pixel p.
struct AffineTransform {
    std::array<double, 6> a{1, 0, 0, 0, 1, 0};

    static AffineTransform identity() { return {}; }
    double det() const { return a[0] * a[4] - a[1] * a[3]; }
    AffineTransform inverse() const;
    /// (this o other)(p) = this(other(p))
    AffineTransform compose(const AffineTransform& other) const;
    std::array<double, 2> apply(double x, double y) const;
    nlohmann::json to_json() const;
    bool operator==(const AffineTransform&) const = default;
};

/// Interpretable parameters; A = R(rotation) * [[1, shear], [0, 1]] *
/// diag(scale_x, scale_y) with translation (tx, ty).
struct AffineParams {
    double scale_x = 1, scale_y = 1, rotation = 0, shear = 0, tx = 0, ty = 0;
};

struct AffineBounds {
    static constexpr double kMinDet = 0.5;
    static constexpr double kMaxDet = 2.0;
    static constexpr double kMaxTranslation = 0.25;
    static constexpr double kMaxRotation = 0.5235987755982988;  // 30 degrees
    static constexpr double kMaxShear = 0.3;
    /// each scale is 2^(kLogScale * tanh u)
    static constexpr double kLogScale = 0.5;
};

/// Maps unbounded raw values into the bounded parameter ranges.
AffineParams squash(const std::array<double, 6>& raw);
AffineTransform to_matrix(const AffineParams& p);
/// Inverse of to_matrix for matrices with positive determinant.
AffineParams decompose(const AffineTransform& t);
bool within_bounds(const AffineTransform& t, double tol = 1e-9);

/// Differentiable squash + to_matrix: raw [N,6,1,1] -> theta [N,6,1,1].
Var squash_affine(const Var& raw);

/// Bilinear; out-of-canvas samples take the image minimum.
Image warp_image(const Image& img, const AffineTransform& t);
/// Nearest neighbour; out-of-canvas samples are background.
LabelMap warp_mask(const LabelMap& mask, const AffineTransform& t, int background = 0);
/// Differentiable bilinear warp of one-hot masks [N,K,H,W]; outside the
/// canvas reads as background (channel 0).
Var soft_warp_onehot(const Var& onehot, const Var& theta);

struct TargetCondition {
    int cls = 0;  // 0 = not infected, 1 = infected
    static TargetCondition from_one_hot(std::span<const double> v);
    std::array<double, 2> one_hot() const;
};

struct StnConfig {
    int num_labels = 4;
    int num_classes = 2;
    int width = 8;  // channels of the first encoder conv
    int hidden = 32;
    /// initial std of the affine sampling distribution in raw space
    double init_sigma = 0.5;
};

struct StnOutput {
    Var mu;     // [N,6,1,1]
    Var sigma;  // [N,6,1,1]
    Var raw;    // mu + sigma * eps
    Var theta;  // squashed matrix
};

/// Predicts a distribution over affine maps from a one-hot mask and a class
/// condition. The mean head is zero-initialized, so the initial mean map is
/// the identity.
class SpatialTransformer {
public:
    SpatialTransformer() = default;
    SpatialTransformer(const StnConfig& cfg, Rng& rng);

    /// eps is [N,6,1,1] standard normal noise; pass nullopt for the mean map.
    StnOutput forward(const Var& onehot, const Var& cond, const std::optional<Tensor>& eps) const;
    /// Deterministic mean transform for one mask.
    AffineTransform predict_affine(const LabelMap& mask, const TargetCondition& cond) const;
    /// Transform drawn with the supplied raw-space noise.
    AffineTransform sample_affine(const LabelMap& mask, const TargetCondition& cond, Rng& rng) const;

    void collect(nn::ParameterSet& ps, const std::string& prefix = "stn");
    const StnConfig& config() const { return cfg_; }

private:
    StnConfig cfg_;
    std::vector<nn::Conv2d> enc_;
    nn::Linear fc_;
    nn::Linear head_;
};

/// Transforms read back from a batch theta tensor.
AffineTransform theta_at(const Tensor& theta, int n);

}  // namespace geogan::stn
