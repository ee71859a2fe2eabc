#include "geogan/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "geogan/random.hpp"

namespace geogan {

std::string dims_str(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

LabelScheme::LabelScheme(std::vector<std::string> names) : names_(std::move(names)) {
    for (int i = 0; i < n(); ++i) encoding_[names_[i]] = i;
    if (encoding_.size() != names_.size()) throw DataError("LabelScheme: duplicate label names");
}

LabelScheme::LabelScheme(std::vector<std::string> names, std::map<std::string, int> encoding)
    : names_(std::move(names)), encoding_(std::move(encoding)) {
    if (encoding_.size() != names_.size()) throw DataError("LabelScheme: encoding size differs from name list");
    std::set<int> seen;
    for (const auto& [name, v] : encoding_) {
        if (v < 0 || v >= n() || !seen.insert(v).second || names_[v] != name) {
            throw DataError("LabelScheme: encoding is not a bijection onto 0..n-1 (label '" + name + "')");
        }
    }
}

LabelScheme LabelScheme::covid_default() {
    return LabelScheme({"background", "ground_glass", "consolidation", "pleural_effusion"});
}

int LabelScheme::encode(const std::string& name) const {
    auto it = encoding_.find(name);
    if (it == encoding_.end()) throw DataError("unknown label name '" + name + "'");
    return it->second;
}

std::vector<int> LabelScheme::pathology_labels() const {
    std::vector<int> out;
    for (int i = 1; i < n(); ++i) out.push_back(i);
    return out;
}

std::uint64_t LabelScheme::hash() const { return fnv1a(to_json().dump()); }

nlohmann::json LabelScheme::to_json() const {
    nlohmann::json enc = nlohmann::json::object();
    for (const auto& [k, v] : encoding_) enc[k] = v;
    return {{"n", n()}, {"names", names_}, {"encoding", enc}};
}

LabelScheme LabelScheme::from_json(const nlohmann::json& j) {
    auto names = j.at("names").get<std::vector<std::string>>();
    std::map<std::string, int> enc;
    for (auto it = j.at("encoding").begin(); it != j.at("encoding").end(); ++it) enc[it.key()] = it.value().get<int>();
    if (j.contains("n") && j.at("n").get<int>() != static_cast<int>(names.size())) {
        throw DataError("scheme.json: n disagrees with names");
    }
    return LabelScheme(std::move(names), std::move(enc));
}

void validate_sample(const ImageSample& s, const LabelScheme& scheme) {
    if (!s.image.same_dims(s.mask)) {
        throw DataError("sample " + s.id + ": image " + dims_str(s.image.height, s.image.width) + " vs mask " +
                        dims_str(s.mask.height, s.mask.width));
    }
    if (s.image.size() == 0) throw DataError("sample " + s.id + ": empty image");
    for (int v : s.mask.data) {
        if (!scheme.registered(v)) {
            throw DataError("sample " + s.id + ": mask value " + std::to_string(v) + " not registered in a " +
                            std::to_string(scheme.n()) + "-label scheme");
        }
    }
    if (s.class_label != 0 && s.class_label != 1) throw DataError("sample " + s.id + ": class label must be 0 or 1");
    if (s.class_label == 0) {
        for (int v : s.mask.data) {
            if (v != 0) throw DataError("sample " + s.id + ": not-infected sample carries pathology label");
        }
    }
}

std::vector<int> labels_present(const LabelMap& mask) {
    std::set<int> s(mask.data.begin(), mask.data.end());
    return {s.begin(), s.end()};
}

void GridSpec::validate(int height, int width) const {
    if (n < 1) throw DataError("grid N must be >= 1");
    if (height % n != 0 || width % n != 0) {
        throw DataError("image " + dims_str(height, width) + " is not divisible by grid N=" + std::to_string(n));
    }
}

InstanceBag split_into_instances(const ImageSample& sample, const GridSpec& grid) {
    grid.validate(sample.height(), sample.width());
    const int ch = grid.cell_height(sample.height());
    const int cw = grid.cell_width(sample.width());
    InstanceBag bag;
    bag.bag_label = sample.class_label;
    bag.source_id = sample.id;
    bag.grid_n = grid.n;
    bag.instances.reserve(static_cast<std::size_t>(grid.n) * grid.n);
    for (int k = 0; k < grid.n * grid.n; ++k) {
        const int r0 = (k / grid.n) * ch;
        const int c0 = (k % grid.n) * cw;
        Image crop(ch, cw);
        for (int r = 0; r < ch; ++r)
            for (int c = 0; c < cw; ++c) crop(r, c) = sample.image(r0 + r, c0 + c);
        bag.instances.push_back(std::move(crop));
    }
    return bag;
}

Image reassemble_instances(const InstanceBag& bag) {
    if (bag.instances.empty()) throw DataError("reassemble_instances: empty bag");
    const int n = bag.grid_n;
    const int ch = bag.instances.front().height, cw = bag.instances.front().width;
    Image img(ch * n, cw * n);
    for (int k = 0; k < n * n; ++k) {
        const auto& crop = bag.instances.at(k);
        for (int r = 0; r < ch; ++r)
            for (int c = 0; c < cw; ++c) img((k / n) * ch + r, (k % n) * cw + c) = crop(r, c);
    }
    return img;
}

void DatasetSplit::validate(const std::vector<std::string>& ids) const {
    std::set<std::string> seen;
    for (const auto* list : {&train, &validation, &test}) {
        for (const auto& id : *list) {
            if (!seen.insert(id).second) throw DataError("split: id '" + id + "' appears in more than one fold");
        }
    }
    const std::set<std::string> all(ids.begin(), ids.end());
    if (seen != all) throw DataError("split: folds do not cover the dataset exactly");
}

DatasetSplit make_split(const std::vector<std::string>& ids, int n_train, int n_val, std::uint64_t seed) {
    if (n_train < 0 || n_val < 0 || n_train + n_val > static_cast<int>(ids.size())) {
        throw DataError("make_split: fold sizes exceed dataset size");
    }
    std::vector<std::string> order = ids;
    Rng rng(seed);
    rng.shuffle(order);
    DatasetSplit s;
    s.seed = seed;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.validation.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    s.test.assign(order.begin() + n_train + n_val, order.end());
    return s;
}

namespace {

struct Ellipse {
    double cy, cx, ry, rx;
    bool contains(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

struct Gaussian2D {
    double cy, cx, sy, sx, angle;
    double operator()(double y, double x) const {
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double dy = y - cy, dx = x - cx;
        const double u = ca * dx + sa * dy;
        const double v = -sa * dx + ca * dy;
        return std::exp(-0.5 * (u * u / (sx * sx) + v * v / (sy * sy)));
    }
};

// Appearance per pathology label: target intensity and texture noise.
struct Appearance {
    double intensity;
    double texture;
};

Appearance appearance_for(int label) {
    switch (label) {
        case 1: return {0.36, 0.05};  // ground glass: faint, grainy
        case 2: return {0.86, 0.02};  // consolidation: dense
        case 3: return {0.68, 0.0};   // effusion: homogeneous fluid
        default: return {0.55, 0.03};
    }
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

std::vector<ImageSample> generate_toy_dataset(const ToyOptions& opts, const LabelScheme& scheme) {
    if (opts.count < 1) throw DataError("generate_toy_dataset: count must be >= 1");
    auto pow2 = [](int v) { return v >= 32 && (v & (v - 1)) == 0; };
    if (!pow2(opts.height) || !pow2(opts.width)) {
        throw DataError("generate_toy_dataset: dims must be powers of two >= 32, got " +
                        dims_str(opts.height, opts.width));
    }
    if (opts.infected_fraction < 0.0 || opts.infected_fraction > 1.0) {
        throw DataError("generate_toy_dataset: infected_fraction must lie in [0,1]");
    }
    const int n_infected = static_cast<int>(std::lround(opts.count * opts.infected_fraction));
    std::vector<int> infected(opts.count, 0);
    std::fill(infected.begin(), infected.begin() + n_infected, 1);
    Rng assign_rng(derive_seed(opts.seed, "toy.assign"));
    assign_rng.shuffle(infected);

    const auto pathologies = scheme.pathology_labels();
    const int H = opts.height, W = opts.width;
    const double sh = H / 64.0, sw = W / 64.0;  // geometry was tuned at 64x64

    std::vector<ImageSample> out;
    out.reserve(opts.count);
    for (int idx = 0; idx < opts.count; ++idx) {
        Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(idx)));
        ImageSample s;
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s_%04d", opts.id_prefix.c_str(), idx);
        s.id = buf;
        s.class_label = infected[idx];
        s.image = Image(H, W, 0.0);
        s.mask = LabelMap(H, W, 0);

        const Ellipse body{H * 0.5 + rng.uniform(-1.5, 1.5) * sh, W * 0.5 + rng.uniform(-1.5, 1.5) * sw,
                           H * rng.uniform(0.42, 0.47), W * rng.uniform(0.44, 0.48)};
        std::vector<Ellipse> lungs;
        for (double side : {0.31, 0.69}) {
            lungs.push_back({H * (0.5 + rng.uniform(-0.03, 0.03)), W * (side + rng.uniform(-0.02, 0.02)),
                             H * rng.uniform(0.28, 0.34), W * rng.uniform(0.14, 0.17)});
        }
        Grid2D<std::uint8_t> in_lung(H, W, 0);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                double v = 0.02;
                if (body.contains(r, c)) v = 0.52;
                for (const auto& l : lungs) {
                    if (l.contains(r, c)) {
                        v = 0.12;
                        in_lung(r, c) = 1;
                    }
                }
                s.image(r, c) = v;
            }

        if (s.class_label == 1 && !pathologies.empty()) {
            std::vector<int> present;
            for (int lab : pathologies) {
                if (rng.bernoulli(opts.label_presence)) present.push_back(lab);
            }
            if (present.empty()) present.push_back(pathologies[rng.integer(0, static_cast<int>(pathologies.size()) - 1)]);

            for (int lab : present) {
                const int blobs = rng.integer(1, 3);
                for (int b = 0; b < blobs; ++b) {
                    const Ellipse& lung = lungs[rng.integer(0, 1)];
                    std::vector<Gaussian2D> parts;
                    double cy = 0, cx = 0, base_s = 0;
                    if (lab == 3) {
                        // effusion hugs the dependent (lower) lung boundary
                        cy = lung.cy + lung.ry * rng.uniform(0.78, 0.92);
                        cx = lung.cx + lung.rx * rng.uniform(-0.35, 0.35);
                        base_s = rng.uniform(3.0, 4.0) * sh;
                    } else {
                        const double ang = rng.uniform(0, 2 * std::numbers::pi);
                        const double rad = std::sqrt(rng.uniform(0, 1)) * 0.6;
                        cy = lung.cy + lung.ry * rad * std::sin(ang);
                        cx = lung.cx + lung.rx * rad * std::cos(ang);
                        base_s = (lab == 1 ? rng.uniform(4.0, 5.5) : rng.uniform(3.0, 4.0)) * sh;
                    }
                    const int n_g = rng.integer(1, 3);
                    for (int g = 0; g < n_g; ++g) {
                        const double jitter = g == 0 ? 0.0 : base_s * 0.9;
                        double sy = base_s * rng.uniform(0.8, 1.2), sx = base_s * rng.uniform(0.8, 1.2) * sw / sh;
                        if (lab == 3) {
                            sx *= 1.5;
                            sy *= 0.8;
                        }
                        parts.push_back({cy + rng.uniform(-jitter, jitter), cx + rng.uniform(-jitter, jitter), sy, sx,
                                         lab == 3 ? 0.0 : rng.uniform(0, std::numbers::pi)});
                    }
                    const Appearance app = appearance_for(lab);
                    for (int r = 0; r < H; ++r)
                        for (int c = 0; c < W; ++c) {
                            if (!in_lung(r, c)) continue;
                            double p = 0.0;
                            for (const auto& g : parts) p += g(r, c);
                            p = std::min(p, 1.0);
                            if (p >= 0.5) s.mask(r, c) = lab;
                            // soft edge: half-intensity exactly on the mask boundary
                            const double wgt = std::clamp((p - 0.25) / 0.5, 0.0, 1.0);
                            if (wgt > 0) {
                                const double target = app.intensity + app.texture * rng.normal();
                                s.image(r, c) = (1 - wgt) * s.image(r, c) + wgt * target;
                            }
                        }
                }
            }
        }
        for (auto& v : s.image.data) v = quantize(v + 0.02 * rng.normal());
        validate_sample(s, scheme);
        out.push_back(std::move(s));
    }
    return out;
}

DatasetSplit SplitDataset::split() const {
    DatasetSplit s;
    for (const auto& x : train) s.train.push_back(x.id);
    for (const auto& x : val) s.validation.push_back(x.id);
    for (const auto& x : test) s.test.push_back(x.id);
    return s;
}

SplitDataset assign_split(std::vector<ImageSample> samples, const LabelScheme& scheme, const DatasetSplit& split) {
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    split.validate(ids);
    std::map<std::string, ImageSample*> by_id;
    for (auto& s : samples) by_id[s.id] = &s;
    SplitDataset ds;
    ds.scheme = scheme;
    for (const auto& id : split.train) ds.train.push_back(std::move(*by_id.at(id)));
    for (const auto& id : split.validation) ds.val.push_back(std::move(*by_id.at(id)));
    for (const auto& id : split.test) ds.test.push_back(std::move(*by_id.at(id)));
    return ds;
}

}  // namespace geogan
