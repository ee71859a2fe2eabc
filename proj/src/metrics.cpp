#include "geogan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace geogan::metrics {

namespace {

void require_same(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (!a.same_dims(b)) {
        throw MetricError(std::string(what) + ": dimension mismatch " + dims_str(a.height, a.width) + " vs " +
                          dims_str(b.height, b.width));
    }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of sampled function f (Felzenszwalb & Huttenlocher).
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    auto meet = [&](int q, int p) {
        return ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
    };
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        double s = meet(q, v[k]);
        while (s <= z[k]) {
            --k;
            s = meet(q, v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double diff = q - v[j];
        d[q] = diff * diff + f[v[j]];
    }
}

double percentile_of(std::vector<double> v, double pct) {
    if (pct >= 100.0) return *std::max_element(v.begin(), v.end());
    std::sort(v.begin(), v.end());
    // nearest-rank
    const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

std::vector<double> directed_distances(const BinaryMask& from, const Grid2D<double>& dt_to) {
    std::vector<double> out;
    for (std::size_t i = 0; i < from.size(); ++i) {
        if (from.data[i]) out.push_back(dt_to.data[i]);
    }
    return out;
}

}  // namespace

BinaryMask binarize(const LabelMap& mask, int label) {
    BinaryMask b(mask.height, mask.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) b.data[i] = mask.data[i] == label ? 1 : 0;
    return b;
}

BinaryMask infection_region(const LabelMap& mask) {
    BinaryMask b(mask.height, mask.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) b.data[i] = mask.data[i] != 0 ? 1 : 0;
    return b;
}

std::size_t count(const BinaryMask& m) {
    return static_cast<std::size_t>(std::count_if(m.data.begin(), m.data.end(), [](auto v) { return v != 0; }));
}

double dice(const BinaryMask& pred, const BinaryMask& ref) {
    require_same(pred, ref, "dice");
    std::size_t p = 0, r = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred.data[i] != 0, b = ref.data[i] != 0;
        p += a;
        r += b;
        both += a && b;
    }
    if (p + r == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + r);
}

Grid2D<double> distance_transform(const BinaryMask& m) {
    const int h = m.height, w = m.width;
    Grid2D<double> sq(h, w, kInf);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.data[i]) sq.data[i] = 0.0;
    }
    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    // columns
    f.resize(h);
    d.resize(h);
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) f[r] = sq(r, c);
        dt1d(f, d, v, z);
        for (int r = 0; r < h; ++r) sq(r, c) = d[r];
    }
    // rows
    f.resize(w);
    d.resize(w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) f[c] = sq(r, c);
        dt1d(f, d, v, z);
        for (int c = 0; c < w; ++c) sq(r, c) = d[c];
    }
    for (auto& x : sq.data) x = std::sqrt(x);
    return sq;
}

double hausdorff(const BinaryMask& pred, const BinaryMask& ref, const HausdorffOptions& opts) {
    require_same(pred, ref, "hausdorff");
    if (count(pred) == 0 || count(ref) == 0) throw EmptyMaskError("hausdorff: undefined for an empty mask");
    if (opts.percentile <= 0.0 || opts.percentile > 100.0) throw MetricError("hausdorff: percentile must be in (0,100]");
    const auto d_pr = directed_distances(pred, distance_transform(ref));
    const auto d_rp = directed_distances(ref, distance_transform(pred));
    return opts.spacing * std::max(percentile_of(d_pr, opts.percentile), percentile_of(d_rp, opts.percentile));
}

std::optional<double> try_hausdorff(const BinaryMask& pred, const BinaryMask& ref, const HausdorffOptions& opts) {
    try {
        return hausdorff(pred, ref, opts);
    } catch (const EmptyMaskError&) {
        return std::nullopt;
    }
}

double mae(const BinaryMask& pred, const BinaryMask& ref) {
    require_same(pred, ref, "mae");
    if (pred.size() == 0) throw MetricError("mae: empty masks");
    std::size_t diff = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) diff += (pred.data[i] != 0) != (ref.data[i] != 0);
    return static_cast<double>(diff) / static_cast<double>(pred.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw MetricError("roc_auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double n_pos = 0, n_neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] == 1) {
            ++n_pos;
            rank_sum += rank[i];
        } else {
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0) throw MetricError("roc_auc: undefined with a single class present");
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

ClassificationMetrics classification_metrics(std::span<const double> scores, std::span<const int> labels,
                                             double threshold) {
    if (scores.size() != labels.size()) throw MetricError("classification_metrics: length mismatch");
    if (scores.empty()) throw MetricError("classification_metrics: no samples");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] == 1;
        tp += pred && truth;
        tn += !pred && !truth;
        fp += pred && !truth;
        fn += !pred && truth;
    }
    auto ratio = [](double num, double den) { return den > 0 ? num / den : 1.0; };
    ClassificationMetrics m;
    m.accuracy = (tp + tn) / static_cast<double>(scores.size());
    m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
    m.sensitivity = ratio(tp, tp + fn);
    m.specificity = ratio(tn, tn + fp);
    try {
        m.auc = roc_auc(scores, labels);
    } catch (const MetricError&) {
        m.auc.reset();
    }
    return m;
}

Summary summarize(std::span<const double> values, int missing) {
    Summary s;
    s.count = static_cast<int>(values.size());
    s.missing = missing;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, s] : metrics) {
        j[k] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}, {"missing", s.missing}};
    }
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    for (auto it = j.begin(); it != j.end(); ++it) {
        Summary s;
        s.mean = it.value().at("mean").get<double>();
        s.std = it.value().at("std").get<double>();
        s.count = it.value().at("count").get<int>();
        s.missing = it.value().value("missing", 0);
        r.metrics[it.key()] = s;
    }
    return r;
}

std::string MetricsReport::csv_header() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, _] : metrics) {
        os << (first ? "" : ",") << k << "_mean," << k << "_std";
        first = false;
    }
    return os.str();
}

std::string MetricsReport::csv_row() const {
    std::ostringstream os;
    os.precision(10);
    bool first = true;
    for (const auto& [_, s] : metrics) {
        os << (first ? "" : ",") << s.mean << "," << s.std;
        first = false;
    }
    return os.str();
}

void MetricsReport::validate() const {
    for (const auto& [k, s] : metrics) {
        if (s.std < 0 || std::isnan(s.std)) throw MetricError("metric " + k + ": negative std");
        const std::string base = k.substr(0, k.find('/'));
        if (base == "HD") {
            if (s.mean < 0) throw MetricError("metric " + k + ": negative distance");
        } else if (s.count > 0 && (s.mean < 0 || s.mean > 1)) {
            throw MetricError("metric " + k + ": mean outside [0,1]");
        }
    }
}

SegmentationEvaluator::SegmentationEvaluator(LabelScheme scheme, HausdorffOptions hd)
    : scheme_(std::move(scheme)), hd_(hd) {}

void SegmentationEvaluator::push(const std::string& key, const BinaryMask& p, const BinaryMask& r) {
    auto& dm = series_["DM" + key];
    if (count(p) == 0 && count(r) == 0) {
        ++dm.missing;
    } else {
        dm.values.push_back(dice(p, r));
    }
    series_["MAE" + key].values.push_back(mae(p, r));
    auto& hd = series_["HD" + key];
    if (auto v = try_hausdorff(p, r, hd_)) {
        hd.values.push_back(*v);
    } else {
        ++hd.missing;
    }
}

void SegmentationEvaluator::add(const LabelMap& pred, const LabelMap& ref) {
    if (!pred.same_dims(ref)) {
        throw MetricError("segmentation: dimension mismatch " + dims_str(pred.height, pred.width) + " vs " +
                          dims_str(ref.height, ref.width));
    }
    push("", infection_region(pred), infection_region(ref));
    for (int lab : scheme_.pathology_labels()) {
        push("/" + scheme_.name(lab), binarize(pred, lab), binarize(ref, lab));
    }
}

MetricsReport SegmentationEvaluator::report() const {
    MetricsReport r;
    for (const auto& [k, s] : series_) r.metrics[k] = summarize(s.values, s.missing);
    return r;
}

double SegmentationEvaluator::mean_dice() const {
    auto it = series_.find("DM");
    if (it == series_.end()) return 0.0;
    return summarize(it->second.values).mean;
}

void add_classification(MetricsReport& report, const ClassificationMetrics& m) {
    auto one = [](double v) {
        Summary s;
        s.mean = v;
        s.count = 1;
        return s;
    };
    report.metrics["ACC"] = one(m.accuracy);
    report.metrics["F1"] = one(m.f1);
    report.metrics["Sen"] = one(m.sensitivity);
    report.metrics["Spe"] = one(m.specificity);
    if (m.auc) {
        report.metrics["AUC"] = one(*m.auc);
    } else {
        Summary s;
        s.missing = 1;
        report.metrics["AUC"] = s;
    }
}

MetricsReport combine_seeds(std::span<const MetricsReport> per_seed) {
    std::map<std::string, std::vector<double>> values;
    std::map<std::string, int> missing;
    for (const auto& r : per_seed) {
        for (const auto& [k, s] : r.metrics) {
            if (s.count > 0) {
                values[k].push_back(s.mean);
            } else {
                ++missing[k];
            }
        }
    }
    MetricsReport out;
    for (auto& [k, v] : values) out.metrics[k] = summarize(v, missing[k]);
    for (auto& [k, m] : missing) {
        if (!out.metrics.count(k)) out.metrics[k] = summarize({}, m);
    }
    return out;
}

}  // namespace geogan::metrics
