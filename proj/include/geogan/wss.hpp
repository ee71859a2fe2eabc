#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geogan/nn.hpp"
#include "geogan/toydata.hpp"

/// Weakly supervised segmentation from image-level tags: two MIL instance
/// scorers (max-max and max-min selection), an instance-level dataset built
/// from their agreeing selections, a retrained instance classifier and the
/// grid-cell relabelling that produces pixel label maps.
namespace geogan::wss {

using ag::Var;

class WssError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Criterion { MaxMax, MaxMin };
std::string to_string(Criterion c);
Criterion parse_criterion(const std::string& s);

constexpr double kScoreEps = 1e-7;
double clamp_score(double p);

/// MaxMax: argmax. MaxMin: argmax for positive bags, argmin for negative
/// ones. Ties go to the lowest index.
std::size_t select_instance(std::span<const double> scores, int bag_label, Criterion c);

/// -sum_j [y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps].
double mil_loss(std::span<const double> selected, std::span<const int> labels);
/// Image-level constraint over one selected score per criterion.
double constraint_loss(std::span<const double> per_criterion, int label);

struct ConstraintWeights {
    double w1 = 0.5;  // constraint route
    double w2 = 0.5;  // retrain route
    void validate() const;
};
double retrain_total_loss(double retrain, double constraint, const ConstraintWeights& w);

/// Differentiable clamped BCE summed over picked elements of probs (flat
/// indices). Clamped entries get zero gradient.
Var picked_bce(const Var& probs, std::span<const std::size_t> index, std::span<const int> labels);
/// Same loss from logits, without the clamp: gradient sigmoid(z) - y never
/// vanishes on a confidently wrong instance. Used for training.
Var picked_bce_logits(const Var& logits, std::span<const std::size_t> index, std::span<const int> labels);
/// Sum over bags, probs [B,1,1,1].
Var mil_loss(const Var& probs, std::span<const int> labels);

/// An image seen as a bag of N x N grid-cell instances, with per-label
/// presence tags.
struct WssBag {
    Tensor image;              // [1,1,H,W]
    std::vector<int> present;  // present[k] for pathology label k+1
    int class_label = 0;
    std::string source_id;
    int grid_n = 1;

    int size() const { return grid_n * grid_n; }
};

WssBag make_bag(const ImageSample& s, const LabelScheme& scheme, GridSpec grid);
std::vector<WssBag> make_bags(std::span<const ImageSample> samples, const LabelScheme& scheme, GridSpec grid);
/// Single-label bag from crops; the bag label becomes present[0].
WssBag from_instance_bag(const InstanceBag& bag);

struct ScorerConfig {
    int levels = 1;  // stride-2 levels in the body
    int width = 8;
    bool batch_norm = true;
    int num_outputs = 3;  // one head per pathology label
};

/// Instance scorer. A small fully convolutional encoder-decoder with skip
/// connections and a 1x1 head scores every pixel; an instance logit is the
/// mean pixel logit over its grid cell, so each cell is scored with its
/// neighbourhood in view.
class InstanceScorer {
public:
    InstanceScorer() = default;
    InstanceScorer(const ScorerConfig& cfg, Rng& rng);

    /// images [B,1,H,W] -> cell logits [B,K,N,N]
    Var cell_logits(const Var& images, int grid_n, nn::Mode mode = nn::Mode::Eval) const;
    /// Sigmoid scores of one bag, row-major [N*N, K], without a graph.
    std::vector<double> scores(const WssBag& bag) const;
    void collect(nn::ParameterSet& ps, const std::string& prefix = "scorer");
    const ScorerConfig& config() const { return cfg_; }

    /// Checkpoint with the grid size the scorer was trained for.
    void save(const std::filesystem::path& path, int grid_n) const;
    static InstanceScorer load(const std::filesystem::path& path, int* grid_n = nullptr);

private:
    ScorerConfig cfg_;
    mutable nn::ConvBlock stem_;
    mutable std::vector<nn::ConvBlock> down_;
    mutable std::vector<nn::ConvBlock> up_;
    nn::Conv2d head_;
};

struct MilConfig {
    int epochs = 40;
    int batch_bags = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    ScorerConfig scorer;
};

struct TrainedScorer {
    InstanceScorer net;
    Criterion criterion = Criterion::MaxMax;
    std::vector<double> loss_trace;  // one entry per optimizer step
    std::vector<double> epoch_loss;
};

/// Trains one scorer; each step selects one instance per (bag, label) under
/// the criterion and backpropagates the MIL loss on those instances only.
/// Throws if some label is present in all bags or in none.
TrainedScorer train_mil_classifier(std::span<const WssBag> bags, Criterion criterion, const MilConfig& cfg);

struct InstanceRecord {
    int bag = 0;       // index into the bag list
    int instance = 0;  // cell index within the bag
    int head = 0;      // pathology label - 1
    int label = 0;     // 0/1
    Criterion criterion = Criterion::MaxMax;
};

struct InstanceDataset {
    std::vector<InstanceRecord> records;
    int discarded_count = 0;
};

InstanceDataset build_instance_dataset(std::span<const WssBag> bags, const InstanceScorer& maxmax,
                                       const InstanceScorer& maxmin, double threshold = 0.5);
/// Same, from precomputed per-bag score tables (row-major [n_inst, K]).
InstanceDataset build_instance_dataset(std::span<const WssBag> bags, std::span<const std::vector<double>> maxmax,
                                       std::span<const std::vector<double>> maxmin, double threshold = 0.5);

struct RetrainConfig {
    int epochs = 40;
    int batch_bags = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    ConstraintWeights weights;
    ScorerConfig scorer;
    double threshold = 0.5;
};

struct RetrainResult {
    InstanceScorer net;
    std::vector<double> loss_trace;
};

/// Each step takes a batch of bags: the retrain route is the mean BCE over
/// the records of those bags, the constraint route the mean over (bag,
/// label) of both criteria's selected-instance BCE under the current model.
RetrainResult retrain(const InstanceDataset& ds, std::span<const WssBag> bags, const RetrainConfig& cfg);

/// Cell label: the highest-scoring pathology head among those at or above
/// the threshold, else background. Scores are row-major [N*N, K].
LabelMap relabel_from_scores(std::span<const double> scores, int grid_n, int height, int width, double threshold = 0.5);
LabelMap relabel(const InstanceScorer& net, const WssBag& bag, double threshold = 0.5);

/// Nearest-neighbour upscaling of an N x N cell matrix to H x W.
LabelMap upscale_cells(const std::vector<int>& cells, int grid_n, int height, int width);

struct WssConfig {
    int grid_n = 16;
    MilConfig mil;
    RetrainConfig retrain;
};

struct WssRun {
    std::map<std::string, LabelMap> maps;  // by sample id
    InstanceScorer classifier;
    int discarded_count = 0;
    std::size_t records = 0;
    std::vector<double> loss_trace_maxmax;
    std::vector<double> loss_trace_maxmin;
    std::vector<double> loss_trace_retrain;
    std::uint64_t seed = 0;
    int grid_n = 0;

    nlohmann::json sidecar() const;
};

/// Full pipeline on the training samples; maps are produced for `relabel`.
WssRun run_wss(std::span<const ImageSample> train, std::span<const ImageSample> relabel, const LabelScheme& scheme,
               const WssConfig& cfg);

void write_sidecar(const std::filesystem::path& path, const WssRun& run);

}  // namespace geogan::wss
