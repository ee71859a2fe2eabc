#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "geogan/metrics.hpp"
#include "geogan/nn.hpp"
#include "geogan/toydata.hpp"

/// Consumers of augmentation: a nested-skip segmentation network and a
/// binary infection classifier, with training and evaluation.
namespace geogan::down {

using ag::Var;

class TaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SegmenterConfig {
    int scales = 3;  // encoder resolutions
    int width = 8;   // channels at full resolution, doubled per scale
    int epochs = 30;
    /// Fixed optimizer step count; 0 means epochs * ceil(n / batch).
    int steps = 0;
    int batch = 16;
    double lr = 2e-3;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static SegmenterConfig from_json(const nlohmann::json& j);
};

/// Encoder-decoder with nested dense skip paths: node (i, j) at scale i
/// sees every earlier node of its row and the upsampled node (i+1, j-1).
class Segmenter {
public:
    Segmenter() = default;
    Segmenter(const LabelScheme& scheme, int height, int width, const SegmenterConfig& cfg, Rng& rng);

    /// [B,K,H,W] label logits.
    Var logits(const Var& images, nn::Mode mode = nn::Mode::Eval) const;
    LabelMap segment(const Image& image) const;

    void collect(nn::ParameterSet& ps, const std::string& prefix = "seg");
    const LabelScheme& scheme() const { return scheme_; }
    int height() const { return height_; }
    int width() const { return width_; }
    const SegmenterConfig& config() const { return cfg_; }
    void check_dims(int h, int w) const;

    void save(const std::filesystem::path& path) const;
    static Segmenter load(const std::filesystem::path& path);

private:
    LabelScheme scheme_;
    int height_ = 0;
    int width_ = 0;
    SegmenterConfig cfg_;
    // nodes_[i][j] is node (i, j); i + j < scales
    mutable std::vector<std::vector<nn::ConvBlock>> nodes_;
    nn::Conv2d head_;
};

struct EpochLog {
    int epoch = 0;
    double loss = 0;  // mean training loss over the epoch's steps
};

struct SegmenterRun {
    Segmenter model;
    std::vector<double> loss_trace;  // per optimizer step
    std::vector<EpochLog> epochs;
    std::vector<double> class_weights;

    void write_csv(const std::filesystem::path& path) const;
};

/// Pixelwise cross-entropy. A label absent from every mask gets class weight
/// 0 with a warning; a dataset carrying a single label also warns.
SegmenterRun train_segmenter(std::span<const ImageSample> data, const LabelScheme& scheme,
                             const SegmenterConfig& cfg);

/// Trains on approximate maps in place of the ground-truth masks.
SegmenterRun train_wss_segmenter(std::span<const Image> images, std::span<const LabelMap> maps,
                                 const LabelScheme& scheme, const SegmenterConfig& cfg);

LabelMap segment(const Segmenter& model, const Image& image);

metrics::MetricsReport evaluate_segmenter(const Segmenter& model, std::span<const ImageSample> test,
                                          const metrics::HausdorffOptions& hd = {});
/// Mean headline Dice only.
double mean_test_dice(const Segmenter& model, std::span<const ImageSample> test);

struct ClassifierConfig {
    int blocks = 4;  // stride-2 conv blocks before global pooling
    int width = 8;
    int epochs = 20;
    int steps = 0;
    int batch = 16;
    double lr = 2e-3;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Convolutional encoder, global average pooling, one logit for P(infected).
/// The head starts at zero, so an untrained model outputs 0.5.
class Classifier {
public:
    Classifier() = default;
    Classifier(int height, int width, const ClassifierConfig& cfg, Rng& rng);

    Var logits(const Var& images, nn::Mode mode = nn::Mode::Eval) const;
    double classify(const Image& image) const;

    void collect(nn::ParameterSet& ps, const std::string& prefix = "cls");
    const ClassifierConfig& config() const { return cfg_; }
    int height() const { return height_; }
    int width() const { return width_; }

    void save(const std::filesystem::path& path) const;
    static Classifier load(const std::filesystem::path& path);

private:
    int height_ = 0;
    int width_ = 0;
    ClassifierConfig cfg_;
    mutable std::vector<nn::ConvBlock> enc_;
    nn::Linear head_;
};

struct ClassifierRun {
    Classifier model;
    std::vector<double> loss_trace;
    std::vector<EpochLog> epochs;

    void write_csv(const std::filesystem::path& path) const;
};

/// Throws TaskError unless both classes are present.
ClassifierRun train_classifier(std::span<const ImageSample> data, const ClassifierConfig& cfg);
double classify(const Classifier& model, const Image& image);
metrics::ClassificationMetrics evaluate_classifier(const Classifier& model, std::span<const ImageSample> test);

}  // namespace geogan::down
