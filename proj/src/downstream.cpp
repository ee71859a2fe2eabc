#include "geogan/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "geogan/convert.hpp"

namespace geogan::down {

namespace {

/// Shuffled pass over indices, reshuffled at the end of each epoch.
class BatchCursor {
public:
    BatchCursor(std::size_t n, Rng& rng) : order_(n), rng_(rng) { std::iota(order_.begin(), order_.end(), 0); }

    std::vector<int> next(int batch) {
        std::vector<int> out;
        for (int b = 0; b < batch; ++b) {
            if (pos_ == order_.size()) {
                rng_.shuffle(order_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

private:
    std::vector<int> order_;
    std::size_t pos_ = 0;
    Rng& rng_;
};

struct Schedule {
    int steps = 0;
    int per_epoch = 1;
    int batch = 1;
};

Schedule schedule(std::size_t n, int batch, int epochs, int steps) {
    Schedule s;
    s.batch = std::min<int>(batch, static_cast<int>(n));
    s.per_epoch = static_cast<int>((n + s.batch - 1) / s.batch);
    s.steps = steps > 0 ? steps : epochs * s.per_epoch;
    return s;
}

std::vector<EpochLog> epoch_logs(const std::vector<double>& trace, int per_epoch) {
    std::vector<EpochLog> out;
    for (std::size_t i = 0; i < trace.size(); i += per_epoch) {
        const std::size_t end = std::min(trace.size(), i + per_epoch);
        const double sum = std::accumulate(trace.begin() + i, trace.begin() + end, 0.0);
        out.push_back({static_cast<int>(out.size()), sum / static_cast<double>(end - i)});
    }
    return out;
}

void write_epoch_csv(const std::filesystem::path& path, const std::vector<EpochLog>& epochs) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw TaskError("cannot write " + path.string());
    out.precision(17);
    out << "epoch,loss\n";
    for (const auto& e : epochs) out << e.epoch << ',' << e.loss << '\n';
}

void check_finite(double loss, const char* what, std::size_t step) {
    if (!std::isfinite(loss)) throw TaskError(std::string(what) + ": non-finite loss at step " + std::to_string(step));
}

Tensor batch_images(std::span<const ImageSample> data, const std::vector<int>& idx) {
    std::vector<const Image*> imgs;
    for (int i : idx) imgs.push_back(&data[i].image);
    return images_to_tensor(imgs);
}

}  // namespace

void SegmenterConfig::validate() const {
    if (scales < 2) throw TaskError("segmenter scales must be >= 2");
    if (width < 1) throw TaskError("segmenter width must be >= 1");
    if (epochs < 0 || steps < 0) throw TaskError("segmenter epochs and steps must be >= 0");
    if (batch < 1) throw TaskError("segmenter batch must be >= 1");
    if (!(lr > 0)) throw TaskError("segmenter lr must be > 0");
}

nlohmann::json SegmenterConfig::to_json() const {
    return {{"scales", scales}, {"width", width}, {"epochs", epochs}, {"steps", steps},
            {"batch", batch},   {"lr", lr},       {"seed", seed}};
}

SegmenterConfig SegmenterConfig::from_json(const nlohmann::json& j) {
    SegmenterConfig c;
    c.scales = j.at("scales");
    c.width = j.at("width");
    c.epochs = j.at("epochs");
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.lr = j.at("lr");
    c.seed = j.at("seed");
    return c;
}

Segmenter::Segmenter(const LabelScheme& scheme, int height, int width, const SegmenterConfig& cfg, Rng& rng)
    : scheme_(scheme), height_(height), width_(width), cfg_(cfg) {
    cfg.validate();
    check_dims(height, width);
    const int S = cfg.scales;
    auto ch = [&](int i) { return cfg.width << i; };
    nodes_.resize(S);
    for (int i = 0; i < S; ++i) nodes_[i].emplace_back(i == 0 ? 1 : ch(i - 1), ch(i), i == 0 ? 1 : 2, true, rng);
    for (int j = 1; j < S; ++j)
        for (int i = 0; i + j < S; ++i) nodes_[i].emplace_back(j * ch(i) + ch(i + 1), ch(i), 1, true, rng);
    head_ = nn::Conv2d(ch(0), scheme.n(), 1, 1, 0, rng);
}

void Segmenter::check_dims(int h, int w) const {
    const int f = 1 << (cfg_.scales - 1);
    if (h <= 0 || w <= 0 || h % f || w % f) {
        throw TaskError("segmenter with " + std::to_string(cfg_.scales) + " scales needs dims divisible by " +
                        std::to_string(f) + ", got " + dims_str(h, w));
    }
    if (height_ && (h != height_ || w != width_)) {
        throw TaskError("segmenter trained on " + dims_str(height_, width_) + ", got " + dims_str(h, w));
    }
}

Var Segmenter::logits(const Var& images, nn::Mode mode) const {
    check_dims(images.shape()[2], images.shape()[3]);
    const int S = cfg_.scales;
    std::vector<std::vector<Var>> x(S);
    for (int i = 0; i < S; ++i) x[i].push_back(nodes_[i][0](i == 0 ? images : x[i - 1][0], mode));
    for (int j = 1; j < S; ++j)
        for (int i = 0; i + j < S; ++i) {
            std::vector<Var> in(x[i].begin(), x[i].end());
            in.push_back(ag::upsample2x(x[i + 1][j - 1]));
            x[i].push_back(nodes_[i][j](ag::concat_channels(in), mode));
        }
    return head_(x[0].back());
}

LabelMap Segmenter::segment(const Image& image) const {
    check_dims(image.height, image.width);
    ag::NoGradGuard guard;
    return argmax_labels(logits(Var(image_to_tensor(image))).value());
}

void Segmenter::collect(nn::ParameterSet& ps, const std::string& prefix) {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
        for (std::size_t j = 0; j < nodes_[i].size(); ++j)
            nodes_[i][j].collect(ps, prefix + ".x" + std::to_string(i) + "_" + std::to_string(j));
    head_.collect(ps, prefix + ".head");
}

void Segmenter::save(const std::filesystem::path& path) const {
    Segmenter copy = *this;
    nn::ParameterSet ps;
    copy.collect(ps);
    nn::save_checkpoint(path, ps,
                        {{"kind", "segmenter"},
                         {"scheme", scheme_.to_json()},
                         {"height", height_},
                         {"width", width_},
                         {"config", cfg_.to_json()}});
}

Segmenter Segmenter::load(const std::filesystem::path& path) {
    const auto meta = nn::read_checkpoint_meta(path);
    if (meta.value("kind", "") != "segmenter") throw TaskError(path.string() + " is not a segmenter checkpoint");
    Rng rng(0);
    Segmenter m(LabelScheme::from_json(meta.at("scheme")), meta.at("height"), meta.at("width"),
                SegmenterConfig::from_json(meta.at("config")), rng);
    nn::ParameterSet ps;
    m.collect(ps);
    nn::load_checkpoint(path, ps);
    return m;
}

void SegmenterRun::write_csv(const std::filesystem::path& path) const { write_epoch_csv(path, epochs); }

SegmenterRun train_segmenter(std::span<const ImageSample> data, const LabelScheme& scheme, const SegmenterConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw TaskError("train_segmenter: empty dataset");
    const int H = data[0].height(), W = data[0].width();
    std::vector<std::size_t> counts(scheme.n(), 0);
    for (const auto& s : data) {
        if (!s.image.same_dims(H, W) || !s.mask.same_dims(H, W)) {
            throw TaskError("train_segmenter: sample " + s.id + " is " + dims_str(s.height(), s.width()) +
                            ", expected " + dims_str(H, W));
        }
        for (int v : s.mask.data) {
            if (!scheme.registered(v)) throw TaskError("train_segmenter: unregistered label in " + s.id);
            ++counts[v];
        }
    }
    std::vector<double> weights(scheme.n(), 1.0);
    int present = 0;
    for (int k = 0; k < scheme.n(); ++k) {
        if (counts[k]) {
            ++present;
        } else {
            weights[k] = 0.0;
            spdlog::warn("train_segmenter: label '{}' is absent from every mask; class weight set to 0",
                         scheme.name(k));
        }
    }
    if (present == 1) spdlog::warn("train_segmenter: dataset carries a single label");

    Rng rng(derive_seed(cfg.seed, "segmenter"));
    SegmenterRun run{Segmenter(scheme, H, W, cfg, rng), {}, {}, weights};
    nn::ParameterSet ps;
    run.model.collect(ps);
    nn::Adam opt(ps, {.lr = cfg.lr});
    BatchCursor cursor(data.size(), rng);
    const auto sched = schedule(data.size(), cfg.batch, cfg.epochs, cfg.steps);
    for (int step = 0; step < sched.steps; ++step) {
        const auto idx = cursor.next(sched.batch);
        std::vector<const LabelMap*> masks;
        for (int i : idx) masks.push_back(&data[i].mask);
        const auto labels = masks_to_labels(masks);
        opt.zero_grad();
        const Var loss = ag::cross_entropy(run.model.logits(Var(batch_images(data, idx)), nn::Mode::Train), labels,
                                           weights);
        check_finite(loss.item(), "train_segmenter", step);
        loss.backward();
        opt.step();
        run.loss_trace.push_back(loss.item());
    }
    run.epochs = epoch_logs(run.loss_trace, sched.per_epoch);
    return run;
}

SegmenterRun train_wss_segmenter(std::span<const Image> images, std::span<const LabelMap> maps,
                                 const LabelScheme& scheme, const SegmenterConfig& cfg) {
    if (images.size() != maps.size()) {
        throw TaskError("train_wss_segmenter: " + std::to_string(images.size()) + " images but " +
                        std::to_string(maps.size()) + " label maps");
    }
    std::vector<ImageSample> data;
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!maps[i].same_dims(images[i].height, images[i].width)) {
            throw TaskError("train_wss_segmenter: map " + std::to_string(i) + " does not cover its image");
        }
        const bool infected = std::any_of(maps[i].data.begin(), maps[i].data.end(), [](int v) { return v != 0; });
        data.push_back({"wss" + std::to_string(i), images[i], maps[i], infected ? 1 : 0});
    }
    return train_segmenter(data, scheme, cfg);
}

LabelMap segment(const Segmenter& model, const Image& image) { return model.segment(image); }

metrics::MetricsReport evaluate_segmenter(const Segmenter& model, std::span<const ImageSample> test,
                                          const metrics::HausdorffOptions& hd) {
    metrics::SegmentationEvaluator ev(model.scheme(), hd);
    for (const auto& s : test) ev.add(model.segment(s.image), s.mask);
    return ev.report();
}

double mean_test_dice(const Segmenter& model, std::span<const ImageSample> test) {
    metrics::SegmentationEvaluator ev(model.scheme());
    for (const auto& s : test) ev.add(model.segment(s.image), s.mask);
    return ev.mean_dice();
}

void ClassifierConfig::validate() const {
    if (blocks < 1) throw TaskError("classifier blocks must be >= 1");
    if (width < 1) throw TaskError("classifier width must be >= 1");
    if (epochs < 0 || steps < 0) throw TaskError("classifier epochs and steps must be >= 0");
    if (batch < 1) throw TaskError("classifier batch must be >= 1");
    if (!(lr > 0)) throw TaskError("classifier lr must be > 0");
}

nlohmann::json ClassifierConfig::to_json() const {
    return {{"blocks", blocks}, {"width", width}, {"epochs", epochs}, {"steps", steps},
            {"batch", batch},   {"lr", lr},       {"seed", seed}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    c.blocks = j.at("blocks");
    c.width = j.at("width");
    c.epochs = j.at("epochs");
    c.steps = j.at("steps");
    c.batch = j.at("batch");
    c.lr = j.at("lr");
    c.seed = j.at("seed");
    return c;
}

Classifier::Classifier(int height, int width, const ClassifierConfig& cfg, Rng& rng)
    : height_(height), width_(width), cfg_(cfg) {
    cfg.validate();
    const int f = 1 << cfg.blocks;
    if (height <= 0 || width <= 0 || height % f || width % f) {
        throw TaskError("classifier with " + std::to_string(cfg.blocks) + " blocks needs dims divisible by " +
                        std::to_string(f) + ", got " + dims_str(height, width));
    }
    int in = 1;
    for (int b = 0; b < cfg.blocks; ++b) {
        const int out = cfg.width << std::min(b, 3);
        enc_.emplace_back(in, out, 2, true, rng);
        in = out;
    }
    head_ = nn::Linear(in, 1, rng);
    head_.zero();
}

Var Classifier::logits(const Var& images, nn::Mode mode) const {
    const auto& s = images.shape();
    if (s[2] != height_ || s[3] != width_) {
        throw TaskError("classifier trained on " + dims_str(height_, width_) + ", got " + dims_str(s[2], s[3]));
    }
    Var h = images;
    for (auto& b : enc_) h = b(h, mode);
    return head_(ag::global_avg_pool(h));
}

double Classifier::classify(const Image& image) const {
    ag::NoGradGuard guard;
    const double z = logits(Var(image_to_tensor(image))).item();
    return 1.0 / (1.0 + std::exp(-z));
}

void Classifier::collect(nn::ParameterSet& ps, const std::string& prefix) {
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(ps, prefix + ".enc" + std::to_string(i));
    head_.collect(ps, prefix + ".head");
}

void Classifier::save(const std::filesystem::path& path) const {
    Classifier copy = *this;
    nn::ParameterSet ps;
    copy.collect(ps);
    nn::save_checkpoint(path, ps,
                        {{"kind", "classifier"}, {"height", height_}, {"width", width_}, {"config", cfg_.to_json()}});
}

Classifier Classifier::load(const std::filesystem::path& path) {
    const auto meta = nn::read_checkpoint_meta(path);
    if (meta.value("kind", "") != "classifier") throw TaskError(path.string() + " is not a classifier checkpoint");
    Rng rng(0);
    Classifier m(meta.at("height"), meta.at("width"), ClassifierConfig::from_json(meta.at("config")), rng);
    nn::ParameterSet ps;
    m.collect(ps);
    nn::load_checkpoint(path, ps);
    return m;
}

void ClassifierRun::write_csv(const std::filesystem::path& path) const { write_epoch_csv(path, epochs); }

ClassifierRun train_classifier(std::span<const ImageSample> data, const ClassifierConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw TaskError("train_classifier: empty dataset");
    const int H = data[0].height(), W = data[0].width();
    bool has[2] = {false, false};
    for (const auto& s : data) {
        if (!s.image.same_dims(H, W)) throw TaskError("train_classifier: mixed image sizes at " + s.id);
        if (s.class_label < 0 || s.class_label > 1) throw TaskError("train_classifier: class label outside {0,1}");
        has[s.class_label] = true;
    }
    if (!has[0] || !has[1]) throw TaskError("train_classifier: both classes must be present");

    Rng rng(derive_seed(cfg.seed, "classifier"));
    ClassifierRun run{Classifier(H, W, cfg, rng), {}, {}};
    nn::ParameterSet ps;
    run.model.collect(ps);
    nn::Adam opt(ps, {.lr = cfg.lr});
    BatchCursor cursor(data.size(), rng);
    const auto sched = schedule(data.size(), cfg.batch, cfg.epochs, cfg.steps);
    for (int step = 0; step < sched.steps; ++step) {
        const auto idx = cursor.next(sched.batch);
        Tensor targets(static_cast<int>(idx.size()), 1, 1, 1);
        for (std::size_t b = 0; b < idx.size(); ++b) targets[b] = data[idx[b]].class_label;
        opt.zero_grad();
        const Var loss =
            ag::bce_with_logits(run.model.logits(Var(batch_images(data, idx)), nn::Mode::Train), targets);
        check_finite(loss.item(), "train_classifier", step);
        loss.backward();
        opt.step();
        run.loss_trace.push_back(loss.item());
    }
    run.epochs = epoch_logs(run.loss_trace, sched.per_epoch);
    return run;
}

double classify(const Classifier& model, const Image& image) { return model.classify(image); }

metrics::ClassificationMetrics evaluate_classifier(const Classifier& model, std::span<const ImageSample> test) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& s : test) {
        scores.push_back(model.classify(s.image));
        labels.push_back(s.class_label);
    }
    return metrics::classification_metrics(scores, labels);
}

}  // namespace geogan::down
