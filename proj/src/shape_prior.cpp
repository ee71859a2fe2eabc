#include "geogan/shape_prior.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace geogan::shape {

namespace {

BinaryMap label_map(const LabelMap& mask, int label) {
    BinaryMap m(mask.height, mask.width, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) m.data[i] = mask.data[i] == label ? 1 : 0;
    return m;
}

bool any(const BinaryMap& m) { return std::any_of(m.data.begin(), m.data.end(), [](auto v) { return v != 0; }); }

BinaryMap shifted(const BinaryMap& m, int dy, int dx) {
    BinaryMap out(m.height, m.width, 0);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) {
            const int sr = r - dy, sc = c - dx;
            if (sr >= 0 && sr < m.height && sc >= 0 && sc < m.width) out(r, c) = m(sr, sc);
        }
    return out;
}

Tensor map_tensor(std::span<const BinaryMap* const> maps) {
    const int h = maps.front()->height, w = maps.front()->width;
    Tensor t(static_cast<int>(maps.size()), 1, h, w);
    for (std::size_t n = 0; n < maps.size(); ++n)
        std::transform(maps[n]->data.begin(), maps[n]->data.end(), t.data() + n * maps[n]->size(),
                       [](std::uint8_t v) { return static_cast<double>(v); });
    return t;
}

}  // namespace

std::vector<std::pair<int, int>> ordered_pairs(const LabelScheme& scheme) {
    const auto labels = scheme.pathology_labels();
    if (labels.size() < 2) {
        throw ShapeError("shape prior needs at least two pathology labels, scheme has " +
                         std::to_string(labels.size()));
    }
    std::vector<std::pair<int, int>> out;
    for (int i : labels)
        for (int j : labels)
            if (i != j) out.emplace_back(i, j);
    return out;
}

std::vector<PairMap> extract_pair_maps(const LabelMap& mask, const LabelScheme& scheme) {
    for (int v : mask.data) {
        if (!scheme.registered(v)) throw ShapeError("mask holds unregistered label " + std::to_string(v));
    }
    std::vector<PairMap> out;
    for (auto [i, j] : ordered_pairs(scheme)) out.push_back({label_map(mask, i), label_map(mask, j), i, j});
    return out;
}

double aggregate_shape_score(std::span<const double> pair_probabilities, int n) {
    if (n < 2 || pair_probabilities.size() != static_cast<std::size_t>(n * (n - 1))) {
        throw ShapeError("shape score over " + std::to_string(n) + " labels needs " + std::to_string(n * (n - 1)) +
                         " pair probabilities, got " + std::to_string(pair_probabilities.size()));
    }
    double s = 0.0;
    for (double p : pair_probabilities) s += p;
    return s / static_cast<double>(pair_probabilities.size());
}

void ShapePriorConfig::validate() const {
    if (width < 1 || hidden < 1) throw ShapeError("shape prior: width and hidden must be positive");
    if (epochs < 0 || batch < 1) throw ShapeError("shape prior: epochs >= 0 and batch >= 1 required");
    if (!(lr > 0)) throw ShapeError("shape prior: lr must be positive");
    if (shift_min < 1 || shift_max < shift_min) throw ShapeError("shape prior: need 1 <= shift_min <= shift_max");
}

ShapePriorModel::ShapePriorModel(const LabelScheme& scheme, int height, int width, const ShapePriorConfig& cfg,
                                 Rng& rng)
    : scheme_(scheme), pairs_(ordered_pairs(scheme)), height_(height), width_(width), cfg_(cfg) {
    cfg.validate();
    if (height % 8 || width % 8 || height < 8 || width < 8) {
        throw ShapeError("shape prior: dims " + dims_str(height, width) + " must be multiples of 8");
    }
    const int w = cfg.width;
    const int in = 2 + static_cast<int>(pairs_.size());
    enc_.emplace_back(in, w, 3, 2, 1, rng);
    enc_.emplace_back(w, 2 * w, 3, 2, 1, rng);
    enc_.emplace_back(2 * w, 2 * w, 3, 2, 1, rng);
    // flattened, not pooled: where a region sits is part of its geometry
    fc_ = nn::Linear(2 * w * (height / 8) * (width / 8), cfg.hidden, rng);
    head_ = nn::Linear(cfg.hidden, 1, rng);
    head_.zero();
}

int ShapePriorModel::pair_id(int i, int j) const {
    for (std::size_t k = 0; k < pairs_.size(); ++k)
        if (pairs_[k] == std::pair{i, j}) return static_cast<int>(k);
    throw ShapeError("no ordered pair (" + std::to_string(i) + ", " + std::to_string(j) + ") in the scheme");
}

void ShapePriorModel::check_dims(int h, int w) const {
    if (h != height_ || w != width_) {
        throw ShapeError("shape prior expects " + dims_str(height_, width_) + " maps, got " + dims_str(h, w));
    }
}

Var ShapePriorModel::pair_logits(const Var& map_i, const Var& map_j, std::span<const int> pair_index) const {
    const auto& s = map_i.shape();
    check_dims(s[2], s[3]);
    if (map_j.shape() != s || s[1] != 1 || static_cast<int>(pair_index.size()) != s[0]) {
        throw ShapeError("pair_logits: maps must be [B,1,H,W] with one pair index per sample");
    }
    const int p = static_cast<int>(pairs_.size());
    Tensor ids(s[0], p, s[2], s[3]);
    for (int n = 0; n < s[0]; ++n) {
        if (pair_index[n] < 0 || pair_index[n] >= p) throw ShapeError("pair_logits: pair index out of range");
        std::fill_n(ids.data() + ids.index(n, pair_index[n], 0, 0), ids.plane(), 1.0);
    }
    const std::array<Var, 3> parts{map_i, map_j, Var(ids)};
    Var h = ag::concat_channels(parts);
    for (const auto& c : enc_) h = ag::leaky_relu(c(h));
    return head_(ag::leaky_relu(fc_(h)));
}

Var ShapePriorModel::score(const Var& probs) const {
    const auto& s = probs.shape();
    if (s[1] != scheme_.n()) {
        throw ShapeError("shape score expects " + std::to_string(scheme_.n()) + " label channels, got " +
                         std::to_string(s[1]));
    }
    std::vector<Var> a, b;
    std::vector<int> ids;
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
        a.push_back(ag::slice_channels(probs, pairs_[k].first, pairs_[k].first + 1));
        b.push_back(ag::slice_channels(probs, pairs_[k].second, pairs_[k].second + 1));
        ids.insert(ids.end(), s[0], static_cast<int>(k));
    }
    // all pairs in one batch, pair-major
    const Var p = ag::sigmoid(pair_logits(ag::concat_batch(a), ag::concat_batch(b), ids));
    std::vector<Var> per_pair;
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
        per_pair.push_back(ag::slice_batch(p, static_cast<int>(k) * s[0], static_cast<int>(k + 1) * s[0]));
    }
    Var total = per_pair[0];
    for (std::size_t k = 1; k < per_pair.size(); ++k) total = ag::add(total, per_pair[k]);
    return ag::scale(total, 1.0 / static_cast<double>(pairs_.size()));
}

double ShapePriorModel::pairwise_probability(const PairMap& pair) const {
    if (!pair.map_i.same_dims(pair.map_j)) throw ShapeError("pair maps differ in size");
    check_dims(pair.map_i.height, pair.map_i.width);
    ag::NoGradGuard guard;
    const std::array<const BinaryMap*, 1> a{&pair.map_i}, b{&pair.map_j};
    const std::array<int, 1> id{pair_id(pair.i, pair.j)};
    return ag::sigmoid(pair_logits(Var(map_tensor(a)), Var(map_tensor(b)), id)).item();
}

std::vector<double> ShapePriorModel::pairwise_probabilities(const LabelMap& mask) const {
    std::vector<double> out;
    for (const auto& p : extract_pair_maps(mask, scheme_)) out.push_back(pairwise_probability(p));
    return out;
}

double ShapePriorModel::shape_score(const LabelMap& mask) const {
    const auto p = pairwise_probabilities(mask);
    return aggregate_shape_score(p, static_cast<int>(scheme_.pathology_labels().size()));
}

void ShapePriorModel::collect(nn::ParameterSet& ps, const std::string& prefix) {
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(ps, prefix + ".enc" + std::to_string(i));
    fc_.collect(ps, prefix + ".fc");
    head_.collect(ps, prefix + ".head");
}

ShapePriorModel ShapePriorModel::frozen() const {
    ShapePriorModel m = *this;
    auto cut = [](Var& v) {
        if (v.defined()) v = v.detach();
    };
    for (auto& c : m.enc_) {
        cut(c.weight);
        cut(c.bias);
    }
    cut(m.fc_.weight);
    cut(m.fc_.bias);
    cut(m.head_.weight);
    cut(m.head_.bias);
    return m;
}

void ShapePriorModel::save(const std::filesystem::path& path) const {
    ShapePriorModel copy = *this;
    nn::ParameterSet ps;
    copy.collect(ps);
    nlohmann::json meta{{"kind", "shape_prior"},
                        {"scheme", scheme_.to_json()},
                        {"scheme_hash", scheme_.hash()},
                        {"height", height_},
                        {"width", width_},
                        {"width_channels", cfg_.width},
                        {"hidden", cfg_.hidden}};
    nn::save_checkpoint(path, ps, meta);
}

ShapePriorModel ShapePriorModel::load(const std::filesystem::path& path) {
    const auto meta = nn::read_checkpoint_meta(path);
    if (meta.value("kind", "") != "shape_prior") throw ShapeError(path.string() + " is not a shape prior checkpoint");
    const auto scheme = LabelScheme::from_json(meta.at("scheme"));
    if (scheme.hash() != meta.at("scheme_hash").get<std::uint64_t>()) {
        throw ShapeError(path.string() + ": embedded label scheme does not match its hash");
    }
    ShapePriorConfig cfg;
    cfg.width = meta.at("width_channels");
    cfg.hidden = meta.at("hidden");
    Rng rng(0);
    ShapePriorModel m(scheme, meta.at("height"), meta.at("width"), cfg, rng);
    nn::ParameterSet ps;
    m.collect(ps);
    nn::load_checkpoint(path, ps);
    return m;
}

std::vector<ShapeTrainingExample> make_training_pairs(std::span<const LabelMap> masks, const LabelScheme& scheme,
                                                      const ShapePriorConfig& cfg, Rng& rng) {
    std::vector<ShapeTrainingExample> out;
    for (const auto& mask : masks) {
        for (auto& p : extract_pair_maps(mask, scheme)) {
            const bool has_i = any(p.map_i), has_j = any(p.map_j);
            if (!has_i && !has_j) continue;
            out.push_back({p, 1});
            if (!has_i) continue;
            PairMap neg = p;
            if (has_j) {
                std::swap(neg.map_i, neg.map_j);
            } else {
                for (int attempt = 0; attempt < 20; ++attempt) {
                    const double ang = rng.uniform(0, 2 * std::acos(-1.0));
                    const double len = rng.uniform(cfg.shift_min, cfg.shift_max);
                    neg.map_i = shifted(p.map_i, static_cast<int>(std::lround(len * std::sin(ang))),
                                        static_cast<int>(std::lround(len * std::cos(ang))));
                    if (any(neg.map_i)) break;
                }
                if (!any(neg.map_i)) continue;
            }
            out.push_back({std::move(neg), 0});
        }
    }
    return out;
}

ShapePriorRun pretrain_shape_prior(std::span<const LabelMap> masks, const LabelScheme& scheme,
                                   const ShapePriorConfig& cfg) {
    cfg.validate();
    if (masks.empty()) throw ShapeError("pretrain_shape_prior: no masks");
    Rng rng(derive_seed(cfg.seed, "shape_prior"));
    auto examples = make_training_pairs(masks, scheme, cfg, rng);
    const bool usable = std::any_of(examples.begin(), examples.end(), [](const auto& e) {
        return e.label == 1 && any(e.pair.map_i) && any(e.pair.map_j);
    });
    if (!usable) throw ShapeError("pretrain_shape_prior: no label pair with both maps non-empty");

    ShapePriorRun run;
    run.model = ShapePriorModel(scheme, masks.front().height, masks.front().width, cfg, rng);
    nn::ParameterSet ps;
    run.model.collect(ps);
    nn::Adam opt(ps, {.lr = cfg.lr});
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::vector<const BinaryMap*> a, b;
            std::vector<int> ids;
            Tensor target(static_cast<int>(end - start), 1, 1, 1);
            for (std::size_t k = start; k < end; ++k) {
                const auto& e = examples[order[k]];
                a.push_back(&e.pair.map_i);
                b.push_back(&e.pair.map_j);
                ids.push_back(run.model.pair_id(e.pair.i, e.pair.j));
                target[k - start] = e.label;
            }
            opt.zero_grad();
            const Var loss = ag::bce_with_logits(run.model.pair_logits(Var(map_tensor(a)), Var(map_tensor(b)), ids),
                                                 target);
            loss.backward();
            opt.step();
            run.loss_trace.push_back(loss.item());
        }
    }
    return run;
}

LabelMap permute_labels(const LabelMap& mask, std::span<const int> perm) {
    LabelMap out = mask;
    for (auto& v : out.data) {
        if (v > 0) {
            if (v > static_cast<int>(perm.size())) throw ShapeError("permute_labels: label outside permutation");
            v = perm[v - 1];
        }
    }
    return out;
}

}  // namespace geogan::shape
