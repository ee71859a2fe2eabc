#include "geogan/wss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

namespace geogan::wss {

namespace {

double bce_term(double p, int y) {
    p = clamp_score(p);
    return -(y ? std::log(p) : std::log(1.0 - p));
}

std::vector<int> iota_n(int n) {
    std::vector<int> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Column k of a row-major [n, K] table.
std::vector<double> column(const std::vector<double>& table, int rows, int cols, int k) {
    std::vector<double> c(rows);
    for (int i = 0; i < rows; ++i) c[i] = table[static_cast<std::size_t>(i) * cols + k];
    return c;
}

void check_both_classes(std::span<const WssBag> bags, int heads) {
    if (bags.empty()) throw WssError("MIL training needs at least one bag");
    for (int k = 0; k < heads; ++k) {
        int pos = 0;
        for (const auto& b : bags) pos += b.present.at(k);
        if (pos == 0 || pos == static_cast<int>(bags.size())) {
            throw WssError("MIL training for label " + std::to_string(k + 1) +
                           " needs both positive and negative bags (single-class training set)");
        }
    }
}

Tensor stack_images(std::span<const WssBag> bags, std::span<const int> which) {
    std::vector<Tensor> parts;
    parts.reserve(which.size());
    for (int j : which) parts.push_back(bags[j].image);
    return stack_batch(parts);
}

// Row-major [N*N, K] table for sample n of cell scores [B,K,N,N]; logits or
// probabilities, selection only needs the order.
std::vector<double> score_table(const Tensor& probs, int n) {
    const int k = probs.c();
    const std::size_t cells = probs.plane();
    std::vector<double> t(cells * k);
    for (int c = 0; c < k; ++c)
        for (std::size_t i = 0; i < cells; ++i) t[i * k + c] = probs[probs.index(n, c, 0, 0) + i];
    return t;
}

// Appends the selected instance of every label of sample n under a criterion.
void pick(const WssBag& bag, const Tensor& probs, int n, Criterion c, std::vector<std::size_t>& index,
          std::vector<int>& labels) {
    const auto table = score_table(probs, n);
    const int heads = probs.c();
    for (int k = 0; k < heads; ++k) {
        const auto idx = select_instance(column(table, bag.size(), heads, k), bag.present[k], c);
        index.push_back(probs.index(n, k, 0, 0) + idx);
        labels.push_back(bag.present[k]);
    }
}

void check_grid(std::span<const WssBag> bags) {
    for (const auto& b : bags) {
        if (b.grid_n != bags.front().grid_n || !b.image.same_shape(bags.front().image)) {
            throw WssError("bag " + b.source_id + ": all bags must share image size and grid");
        }
        if (b.present.empty()) throw WssError("bag " + b.source_id + " has no label tags");
    }
}

}  // namespace

std::string to_string(Criterion c) { return c == Criterion::MaxMax ? "maxmax" : "maxmin"; }

Criterion parse_criterion(const std::string& s) {
    if (s == "maxmax" || s == "MaxMax") return Criterion::MaxMax;
    if (s == "maxmin" || s == "MaxMin") return Criterion::MaxMin;
    throw WssError("unknown selection criterion '" + s + "'");
}

double clamp_score(double p) { return std::clamp(p, kScoreEps, 1.0 - kScoreEps); }

std::size_t select_instance(std::span<const double> scores, int bag_label, Criterion c) {
    if (scores.empty()) throw WssError("select_instance: empty score list");
    const bool take_max = c == Criterion::MaxMax || bag_label == 1;
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (take_max ? scores[i] > scores[best] : scores[i] < scores[best]) best = i;
    }
    return best;
}

double mil_loss(std::span<const double> selected, std::span<const int> labels) {
    if (selected.size() != labels.size()) {
        throw WssError("mil_loss: " + std::to_string(selected.size()) + " scores vs " + std::to_string(labels.size()) +
                       " labels");
    }
    double loss = 0.0;
    for (std::size_t j = 0; j < selected.size(); ++j) loss += bce_term(selected[j], labels[j]);
    return loss;
}

double constraint_loss(std::span<const double> per_criterion, int label) {
    if (per_criterion.size() != 2) throw WssError("constraint_loss: need one selected score per criterion");
    return bce_term(per_criterion[0], label) + bce_term(per_criterion[1], label);
}

void ConstraintWeights::validate() const {
    if (!(w1 > 0) || !(w2 > 0)) throw WssError("constraint weights must be positive");
}

double retrain_total_loss(double retrain, double constraint, const ConstraintWeights& w) {
    return w.w1 * constraint + w.w2 * retrain;
}

Var picked_bce(const Var& probs, std::span<const std::size_t> index, std::span<const int> labels) {
    if (index.size() != labels.size()) throw WssError("picked_bce: need one label per picked element");
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<int> y(labels.begin(), labels.end());
    double loss = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= probs.value().size()) throw WssError("picked_bce: index out of range");
        loss += bce_term(probs.value()[idx[i]], y[i]);
    }
    return ag::custom_op(Tensor::scalar(loss), {probs}, [idx, y](ag::Node& self) {
        ag::Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double v = p.value[idx[i]];
            if (v < kScoreEps || v > 1.0 - kScoreEps) continue;
            g[idx[i]] += up * (y[i] ? -1.0 / v : 1.0 / (1.0 - v));
        }
    });
}

Var picked_bce_logits(const Var& logits, std::span<const std::size_t> index, std::span<const int> labels) {
    if (index.size() != labels.size()) throw WssError("picked_bce_logits: need one label per picked element");
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<int> y(labels.begin(), labels.end());
    double loss = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= logits.value().size()) throw WssError("picked_bce_logits: index out of range");
        const double z = logits.value()[idx[i]];
        // softplus(z) - y z, stable for large |z|
        loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y[i] * z;
    }
    return ag::custom_op(Tensor::scalar(loss), {logits}, [idx, y](ag::Node& self) {
        ag::Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            g[idx[i]] += up * (1.0 / (1.0 + std::exp(-p.value[idx[i]])) - y[i]);
        }
    });
}

Var mil_loss(const Var& probs, std::span<const int> labels) {
    if (probs.value().size() != labels.size()) throw WssError("mil_loss: one probability per bag expected");
    std::vector<std::size_t> idx(labels.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return picked_bce(probs, idx, labels);
}

WssBag make_bag(const ImageSample& s, const LabelScheme& scheme, GridSpec grid) {
    grid.validate(s.height(), s.width());
    WssBag b;
    b.image = Tensor(1, 1, s.height(), s.width());
    std::copy(s.image.data.begin(), s.image.data.end(), b.image.data());
    const auto present = labels_present(s.mask);
    for (int lab : scheme.pathology_labels()) {
        b.present.push_back(std::find(present.begin(), present.end(), lab) != present.end() ? 1 : 0);
    }
    b.class_label = s.class_label;
    b.source_id = s.id;
    b.grid_n = grid.n;
    return b;
}

std::vector<WssBag> make_bags(std::span<const ImageSample> samples, const LabelScheme& scheme, GridSpec grid) {
    std::vector<WssBag> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(make_bag(s, scheme, grid));
    return out;
}

WssBag from_instance_bag(const InstanceBag& bag) {
    if (bag.instances.empty()) throw WssError("bag " + bag.source_id + " has no instances");
    const Image img = reassemble_instances(bag);
    WssBag b;
    b.image = Tensor(1, 1, img.height, img.width);
    std::copy(img.data.begin(), img.data.end(), b.image.data());
    b.present = {bag.bag_label};
    b.class_label = bag.bag_label;
    b.source_id = bag.source_id;
    b.grid_n = bag.grid_n;
    return b;
}

InstanceScorer::InstanceScorer(const ScorerConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.levels < 0 || cfg.width < 1 || cfg.num_outputs < 1) throw WssError("invalid scorer configuration");
    stem_ = nn::ConvBlock(1, cfg.width, 1, cfg.batch_norm, rng);
    int ch = cfg.width;
    for (int l = 0; l < cfg.levels; ++l) {
        down_.emplace_back(ch, 2 * ch, 2, cfg.batch_norm, rng);
        ch *= 2;
    }
    for (int l = 0; l < cfg.levels; ++l) {
        up_.emplace_back(ch + ch / 2, ch / 2, 1, cfg.batch_norm, rng);
        ch /= 2;
    }
    head_ = nn::Conv2d(cfg.width, cfg.num_outputs, 1, 1, 0, rng);
}

Var InstanceScorer::cell_logits(const Var& images, int grid_n, nn::Mode mode) const {
    const auto& s = images.shape();
    const int factor = 1 << cfg_.levels;
    if (s[2] % factor || s[3] % factor) {
        throw WssError("image " + dims_str(s[2], s[3]) + " not divisible by 2^levels");
    }
    if (grid_n < 1 || s[2] % grid_n || s[3] % grid_n) {
        throw WssError("grid " + std::to_string(grid_n) + " does not divide " + dims_str(s[2], s[3]));
    }
    std::vector<Var> skips{stem_(images, mode)};
    for (auto& b : down_) skips.push_back(b(skips.back(), mode));
    Var h = skips.back();
    for (int l = 0; l < cfg_.levels; ++l) {
        const std::array<Var, 2> parts{ag::upsample2x(h), skips[cfg_.levels - 1 - l]};
        h = up_[l](ag::concat_channels(parts), mode);
    }
    return ag::block_avg_pool(head_(h), s[2] / grid_n, s[3] / grid_n);
}

std::vector<double> InstanceScorer::scores(const WssBag& bag) const {
    ag::NoGradGuard guard;
    const Var p = ag::sigmoid(cell_logits(Var(bag.image), bag.grid_n));
    return score_table(p.value(), 0);
}

void InstanceScorer::collect(nn::ParameterSet& ps, const std::string& prefix) {
    stem_.collect(ps, prefix + ".stem");
    for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(ps, prefix + ".down" + std::to_string(i));
    for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(ps, prefix + ".up" + std::to_string(i));
    head_.collect(ps, prefix + ".head");
}

void InstanceScorer::save(const std::filesystem::path& path, int grid_n) const {
    InstanceScorer copy = *this;
    nn::ParameterSet ps;
    copy.collect(ps);
    nn::save_checkpoint(path, ps,
                        {{"kind", "wss_scorer"},
                         {"grid_n", grid_n},
                         {"levels", cfg_.levels},
                         {"width", cfg_.width},
                         {"batch_norm", cfg_.batch_norm},
                         {"num_outputs", cfg_.num_outputs}});
}

InstanceScorer InstanceScorer::load(const std::filesystem::path& path, int* grid_n) {
    const auto meta = nn::read_checkpoint_meta(path);
    if (meta.value("kind", "") != "wss_scorer") throw WssError(path.string() + " is not a WSS scorer checkpoint");
    ScorerConfig cfg;
    cfg.levels = meta.at("levels");
    cfg.width = meta.at("width");
    cfg.batch_norm = meta.at("batch_norm");
    cfg.num_outputs = meta.at("num_outputs");
    Rng rng(0);
    InstanceScorer net(cfg, rng);
    nn::ParameterSet ps;
    net.collect(ps);
    nn::load_checkpoint(path, ps);
    if (grid_n) *grid_n = meta.at("grid_n");
    return net;
}

TrainedScorer train_mil_classifier(std::span<const WssBag> bags, Criterion criterion, const MilConfig& cfg) {
    const int heads = cfg.scorer.num_outputs;
    check_both_classes(bags, heads);
    check_grid(bags);
    Rng rng(derive_seed(cfg.seed, "mil/" + to_string(criterion)));
    TrainedScorer out;
    out.criterion = criterion;
    out.net = InstanceScorer(cfg.scorer, rng);
    nn::ParameterSet ps;
    out.net.collect(ps);
    nn::Adam opt(ps, {.lr = cfg.lr});

    auto order = iota_n(static_cast<int>(bags.size()));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_sum = 0.0;
        std::size_t epoch_terms = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_bags) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_bags);
            const std::span<const int> batch(order.data() + start, end - start);
            opt.zero_grad();
            // selection reads the scores of this same forward pass
            const Var logits = out.net.cell_logits(Var(stack_images(bags, batch)), bags[0].grid_n, nn::Mode::Train);
            std::vector<std::size_t> index;
            std::vector<int> labels;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                pick(bags[batch[i]], logits.value(), static_cast<int>(i), criterion, index, labels);
            }
            const Var total = picked_bce_logits(logits, index, labels);
            const Var loss = ag::scale(total, 1.0 / static_cast<double>(index.size()));
            loss.backward();
            opt.step();
            out.loss_trace.push_back(loss.item());
            epoch_sum += total.item();
            epoch_terms += index.size();
        }
        out.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_terms));
    }
    return out;
}

InstanceDataset build_instance_dataset(std::span<const WssBag> bags, std::span<const std::vector<double>> maxmax,
                                       std::span<const std::vector<double>> maxmin, double threshold) {
    if (maxmax.size() != bags.size() || maxmin.size() != bags.size()) {
        throw WssError("build_instance_dataset: one score table per bag and criterion required");
    }
    InstanceDataset ds;
    for (std::size_t j = 0; j < bags.size(); ++j) {
        const auto& bag = bags[j];
        const int heads = static_cast<int>(bag.present.size());
        const std::pair<Criterion, const std::vector<double>*> tables[] = {{Criterion::MaxMax, &maxmax[j]},
                                                                            {Criterion::MaxMin, &maxmin[j]}};
        for (const auto& [crit, table] : tables) {
            const int rows = static_cast<int>(table->size()) / heads;
            for (int k = 0; k < heads; ++k) {
                const auto col = column(*table, rows, heads, k);
                const auto idx = select_instance(col, bag.present[k], crit);
                const int pred = col[idx] >= threshold ? 1 : 0;
                if (pred != bag.present[k]) {
                    ++ds.discarded_count;
                    continue;
                }
                ds.records.push_back({static_cast<int>(j), static_cast<int>(idx), k, pred, crit});
            }
        }
    }
    return ds;
}

InstanceDataset build_instance_dataset(std::span<const WssBag> bags, const InstanceScorer& maxmax,
                                       const InstanceScorer& maxmin, double threshold) {
    std::vector<std::vector<double>> a, b;
    for (const auto& bag : bags) {
        a.push_back(maxmax.scores(bag));
        b.push_back(maxmin.scores(bag));
    }
    return build_instance_dataset(bags, a, b, threshold);
}

RetrainResult retrain(const InstanceDataset& ds, std::span<const WssBag> bags, const RetrainConfig& cfg) {
    cfg.weights.validate();
    if (ds.records.empty()) throw WssError("retrain: instance dataset is empty");
    check_grid(bags);
    const int heads = cfg.scorer.num_outputs;
    for (int k = 0; k < heads; ++k) {
        bool pos = false, neg = false;
        for (const auto& r : ds.records) {
            if (r.head != k) continue;
            pos = pos || r.label == 1;
            neg = neg || r.label == 0;
        }
        if (!pos || !neg) {
            throw WssError("retrain: instance dataset lacks both classes for label " + std::to_string(k + 1));
        }
    }
    std::vector<std::vector<const InstanceRecord*>> by_bag(bags.size());
    for (const auto& r : ds.records) {
        if (r.bag < 0 || r.bag >= static_cast<int>(bags.size())) throw WssError("retrain: record refers to no bag");
        by_bag[r.bag].push_back(&r);
    }

    Rng rng(derive_seed(cfg.seed, "retrain"));
    RetrainResult out;
    out.net = InstanceScorer(cfg.scorer, rng);
    nn::ParameterSet ps;
    out.net.collect(ps);
    nn::Adam opt(ps, {.lr = cfg.lr});

    auto order = iota_n(static_cast<int>(bags.size()));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_bags) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_bags);
            const std::span<const int> batch(order.data() + start, end - start);
            opt.zero_grad();
            const Var logits = out.net.cell_logits(Var(stack_images(bags, batch)), bags[0].grid_n, nn::Mode::Train);
            std::vector<std::size_t> rec_idx, con_idx;
            std::vector<int> rec_lab, con_lab;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const int n = static_cast<int>(i);
                for (const auto* r : by_bag[batch[i]]) {
                    rec_idx.push_back(logits.value().index(n, r->head, 0, 0) + r->instance);
                    rec_lab.push_back(r->label);
                }
                pick(bags[batch[i]], logits.value(), n, Criterion::MaxMax, con_idx, con_lab);
                pick(bags[batch[i]], logits.value(), n, Criterion::MaxMin, con_idx, con_lab);
            }
            // per (bag, label): both criteria summed, as in constraint_loss
            const double pairs = static_cast<double>(con_idx.size()) / 2.0;
            Var loss = ag::scale(picked_bce_logits(logits, con_idx, con_lab), cfg.weights.w1 / pairs);
            if (!rec_idx.empty()) {
                const Var l_re = picked_bce_logits(logits, rec_idx, rec_lab);
                loss = ag::add(loss, ag::scale(l_re, cfg.weights.w2 / static_cast<double>(rec_idx.size())));
            }
            loss.backward();
            opt.step();
            out.loss_trace.push_back(loss.item());
        }
    }
    return out;
}

LabelMap upscale_cells(const std::vector<int>& cells, int grid_n, int height, int width) {
    if (static_cast<int>(cells.size()) != grid_n * grid_n) throw WssError("upscale_cells: need N*N cells");
    GridSpec{grid_n}.validate(height, width);
    const int ch = height / grid_n, cw = width / grid_n;
    LabelMap m(height, width, 0);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) m(r, c) = cells[(r / ch) * grid_n + c / cw];
    return m;
}

LabelMap relabel_from_scores(std::span<const double> scores, int grid_n, int height, int width, double threshold) {
    const int cells = grid_n * grid_n;
    if (cells == 0 || scores.size() % cells != 0) throw WssError("relabel: score table does not match the grid");
    const int heads = static_cast<int>(scores.size()) / cells;
    std::vector<int> lab(cells, 0);
    for (int i = 0; i < cells; ++i) {
        double best = -1.0;
        for (int k = 0; k < heads; ++k) {
            const double s = scores[static_cast<std::size_t>(i) * heads + k];
            if (s >= threshold && s > best) {
                best = s;
                lab[i] = k + 1;
            }
        }
    }
    return upscale_cells(lab, grid_n, height, width);
}

LabelMap relabel(const InstanceScorer& net, const WssBag& bag, double threshold) {
    return relabel_from_scores(net.scores(bag), bag.grid_n, bag.image.h(), bag.image.w(), threshold);
}

nlohmann::json WssRun::sidecar() const {
    return {{"discarded_count", discarded_count},
            {"instance_records", records},
            {"seed", seed},
            {"grid_n", grid_n},
            {"loss_trace",
             {{"maxmax", loss_trace_maxmax}, {"maxmin", loss_trace_maxmin}, {"retrain", loss_trace_retrain}}}};
}

WssRun run_wss(std::span<const ImageSample> train, std::span<const ImageSample> relabel_set, const LabelScheme& scheme,
               const WssConfig& cfg) {
    const GridSpec grid{cfg.grid_n};
    const auto bags = make_bags(train, scheme, grid);
    auto mil = cfg.mil;
    mil.scorer.num_outputs = scheme.n() - 1;
    const auto mm = train_mil_classifier(bags, Criterion::MaxMax, mil);
    const auto mn = train_mil_classifier(bags, Criterion::MaxMin, mil);
    const auto ds = build_instance_dataset(bags, mm.net, mn.net, cfg.retrain.threshold);
    auto rc = cfg.retrain;
    rc.scorer.num_outputs = scheme.n() - 1;
    auto re = retrain(ds, bags, rc);

    WssRun run;
    run.classifier = re.net;
    run.discarded_count = ds.discarded_count;
    run.records = ds.records.size();
    run.loss_trace_maxmax = mm.loss_trace;
    run.loss_trace_maxmin = mn.loss_trace;
    run.loss_trace_retrain = re.loss_trace;
    run.seed = cfg.mil.seed;
    run.grid_n = cfg.grid_n;
    for (const auto& s : relabel_set) run.maps[s.id] = relabel(re.net, make_bag(s, scheme, grid), rc.threshold);
    return run;
}

void write_sidecar(const std::filesystem::path& path, const WssRun& run) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw WssError("cannot write " + path.string());
    out << run.sidecar().dump(2) << "\n";
}

}  // namespace geogan::wss
