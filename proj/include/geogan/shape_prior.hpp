#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "geogan/nn.hpp"
#include "geogan/toydata.hpp"

/// Pairwise inter-label geometry prior: a classifier over (region of label i,
/// region of label j) map pairs and the averaged shape score over all
/// ordered pathology label pairs.
namespace geogan::shape {

using ag::Var;
using BinaryMap = Grid2D<std::uint8_t>;

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Ordered pathology label pairs (i, j), i != j, in row-major order of i then j.
/// Throws unless the scheme has at least two pathology labels.
std::vector<std::pair<int, int>> ordered_pairs(const LabelScheme& scheme);

struct PairMap {
    BinaryMap map_i;  // pixels of label i
    BinaryMap map_j;  // pixels of label j, everything else background
    int i = 1;
    int j = 2;
};

std::vector<PairMap> extract_pair_maps(const LabelMap& mask, const LabelScheme& scheme);

/// Mean of the n(n-1) ordered pair probabilities.
double aggregate_shape_score(std::span<const double> pair_probabilities, int n);

struct ShapePriorConfig {
    int width = 8;
    int hidden = 32;
    int epochs = 30;
    int batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int shift_min = 6;  // translation corruption range, pixels
    int shift_max = 16;

    void validate() const;
};

/// Pair classifier. Input: the two maps plus one constant one-hot channel per
/// ordered pair; output: probability that map_i is the region of label i
/// given its companion map_j.
class ShapePriorModel {
public:
    ShapePriorModel() = default;
    ShapePriorModel(const LabelScheme& scheme, int height, int width, const ShapePriorConfig& cfg, Rng& rng);

    /// Logits [B,1,1,1] for maps [B,1,H,W] each and one pair index per sample.
    Var pair_logits(const Var& map_i, const Var& map_j, std::span<const int> pair_index) const;
    /// Differentiable per-sample shape score [B,1,1,1] of label distributions
    /// probs [B,K,H,W] (one-hot for hard masks).
    Var score(const Var& probs) const;

    /// Index of (i, j) in pairs(); throws for an unknown pair.
    int pair_id(int i, int j) const;
    double pairwise_probability(const PairMap& pair) const;
    std::vector<double> pairwise_probabilities(const LabelMap& mask) const;
    double shape_score(const LabelMap& mask) const;

    void collect(nn::ParameterSet& ps, const std::string& prefix = "shape");
    /// Copy whose parameters are constants: gradients reach the input only.
    ShapePriorModel frozen() const;
    const LabelScheme& scheme() const { return scheme_; }
    const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }
    int height() const { return height_; }
    int width() const { return width_; }
    const ShapePriorConfig& config() const { return cfg_; }

    /// Checkpoint with the label scheme and its hash embedded.
    void save(const std::filesystem::path& path) const;
    static ShapePriorModel load(const std::filesystem::path& path);

private:
    void check_dims(int h, int w) const;

    LabelScheme scheme_;
    std::vector<std::pair<int, int>> pairs_;
    int height_ = 0;
    int width_ = 0;
    ShapePriorConfig cfg_;
    std::vector<nn::Conv2d> enc_;
    nn::Linear fc_;
    nn::Linear head_;
};

struct ShapeTrainingExample {
    PairMap pair;
    int label = 1;  // 1 genuine, 0 corrupted
};

/// Genuine pairs (at least one map non-empty) and, for each genuine pair with
/// a non-empty map_i, one corrupted pair: a label swap (both maps exchanged
/// under the same key) when map_j is non-empty, else a translation of map_i.
std::vector<ShapeTrainingExample> make_training_pairs(std::span<const LabelMap> masks, const LabelScheme& scheme,
                                                      const ShapePriorConfig& cfg, Rng& rng);

struct ShapePriorRun {
    ShapePriorModel model;
    std::vector<double> loss_trace;
};

/// Trains the pair classifier; the result is meant to stay frozen.
ShapePriorRun pretrain_shape_prior(std::span<const LabelMap> masks, const LabelScheme& scheme,
                                   const ShapePriorConfig& cfg);

/// Mask with pathology labels permuted by perm (perm[k] replaces label k+1).
LabelMap permute_labels(const LabelMap& mask, std::span<const int> perm);

}  // namespace geogan::shape
