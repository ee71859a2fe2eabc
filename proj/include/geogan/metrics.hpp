#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geogan/toydata.hpp"

namespace geogan::metrics {

using BinaryMask = Grid2D<std::uint8_t>;

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Hausdorff distance is undefined when either mask is empty.
class EmptyMaskError : public MetricError {
public:
    using MetricError::MetricError;
};

BinaryMask binarize(const LabelMap& mask, int label);
/// Union of all non-background labels.
BinaryMask infection_region(const LabelMap& mask);
std::size_t count(const BinaryMask& m);

/// 2|P n R| / (|P| + |R|); 1 when both are empty.
double dice(const BinaryMask& pred, const BinaryMask& ref);

struct HausdorffOptions {
    double spacing = 1.0;  // mm per pixel; 1 reports pixels
    /// 100 is the classic maximum; e.g. 95 takes the 95th percentile of
    /// each directed distance set.
    double percentile = 100.0;
};

/// Symmetric Hausdorff distance under the Euclidean pixel metric.
double hausdorff(const BinaryMask& pred, const BinaryMask& ref, const HausdorffOptions& opts = {});
std::optional<double> try_hausdorff(const BinaryMask& pred, const BinaryMask& ref, const HausdorffOptions& opts = {});

/// For each pixel, the Euclidean distance to the nearest foreground pixel of
/// m (exact, separable squared-distance transform). Infinite if m is empty.
Grid2D<double> distance_transform(const BinaryMask& m);

/// Mean over pixels of |pred - ref|.
double mae(const BinaryMask& pred, const BinaryMask& ref);

/// Mann-Whitney AUC with average ranks for ties. Throws MetricError if only
/// one class is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct ClassificationMetrics {
    double accuracy = 0;
    double f1 = 0;
    std::optional<double> auc;
    double sensitivity = 0;
    double specificity = 0;
};

/// Thresholded metrics at 0.5. Ratios with an empty denominator are
/// vacuously 1. AUC is empty when labels hold a single class.
ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                             double threshold = 0.5);

/// Mean and sample standard deviation of a metric across images or seeds.
struct Summary {
    double mean = 0;
    double std = 0;
    int count = 0;
    int missing = 0;  // values that were undefined (e.g. empty-mask HD)
};

Summary summarize(std::span<const double> values, int missing = 0);

/// Per-metric summaries. Keys: DM, HD, MAE, ACC, F1, AUC, Sen, Spe, and
/// per-label DM/<name>, HD/<name>, MAE/<name>.
struct MetricsReport {
    std::map<std::string, Summary> metrics;

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
    std::string csv_header() const;
    std::string csv_row() const;
    /// Throws MetricError if a value lies outside its legal range.
    void validate() const;
};

/// Accumulates segmentation metrics over images. The headline DM/HD/MAE use
/// the union of pathology labels; per-label values are one-vs-rest. Dice of
/// an empty prediction against an empty reference carries no overlap
/// information and is counted as missing rather than as 1.
class SegmentationEvaluator {
public:
    SegmentationEvaluator(LabelScheme scheme, HausdorffOptions hd = {});
    void add(const LabelMap& pred, const LabelMap& ref);
    MetricsReport report() const;
    /// Mean headline Dice over images added so far.
    double mean_dice() const;

private:
    struct Series {
        std::vector<double> values;
        int missing = 0;
    };
    void push(const std::string& key, const BinaryMask& p, const BinaryMask& r);

    LabelScheme scheme_;
    HausdorffOptions hd_;
    std::map<std::string, Series> series_;
};

/// Adds ACC/F1/AUC/Sen/Spe summaries (single evaluation, count = 1).
void add_classification(MetricsReport& report, const ClassificationMetrics& m);

/// Combines per-seed reports: each metric's per-seed mean becomes a sample.
MetricsReport combine_seeds(std::span<const MetricsReport> per_seed);

}  // namespace geogan::metrics
