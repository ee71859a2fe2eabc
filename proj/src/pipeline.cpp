#include "geogan/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "geogan/augment.hpp"
#include "geogan/downstream.hpp"
#include "geogan/geogan.hpp"
#include "geogan/metrics.hpp"
#include "geogan/shape_prior.hpp"
#include "geogan/wss.hpp"

#ifndef GEOGAN_GIT_DESCRIBE
#define GEOGAN_GIT_DESCRIBE "unknown"
#endif

namespace geogan::pipeline {

namespace fs = std::filesystem;

namespace {

enum class Kind { Int, Real, Choice };

struct Field {
    std::string key;
    std::string fallback;
    Kind kind;
    double min = 0;
    double max = 0;
    std::vector<std::string> choices = {};
};

const std::vector<Field>& schema() {
    static const double big = 1e9;
    static const std::vector<Field> s{
        {"seed", "0", Kind::Int, 0, big},
        {"toy.count", "250", Kind::Int, 1, big},
        {"toy.train", "200", Kind::Int, 1, big},
        {"toy.val", "0", Kind::Int, 0, big},
        {"toy.size", "64", Kind::Int, 32, 1024},
        {"toy.infected_fraction", "0.5", Kind::Real, 0, 1},
        {"toy.label_presence", "0.7", Kind::Real, 0, 1},
        {"wss.grid", "16", Kind::Int, 1, 1024},
        {"wss.mil_epochs", "40", Kind::Int, 0, big},
        {"wss.retrain_epochs", "40", Kind::Int, 0, big},
        {"wss.batch", "16", Kind::Int, 1, big},
        {"wss.lr", "0.001", Kind::Real, 1e-12, 10},
        {"wss.width", "8", Kind::Int, 1, 1024},
        {"wss.levels", "1", Kind::Int, 0, 8},
        {"wss.threshold", "0.5", Kind::Real, 0, 1},
        {"shape.count", "24", Kind::Int, 1, big},
        {"shape.source", "masks", Kind::Choice, 0, 0, {"masks", "wss"}},
        {"shape.epochs", "30", Kind::Int, 0, big},
        {"shape.width", "8", Kind::Int, 1, 1024},
        {"shape.hidden", "32", Kind::Int, 1, 4096},
        {"shape.lr", "0.001", Kind::Real, 1e-12, 10},
        {"gan.variant", "full", Kind::Choice, 0, 0, {"full", "no_class", "no_shape", "no_sampling"}},
        {"gan.steps", "300", Kind::Int, 0, big},
        {"gan.lambda1", "0.92", Kind::Real, 0, big},
        {"gan.lambda2", "0.9", Kind::Real, 0, big},
        {"gan.lr", "0.001", Kind::Real, 1e-12, 10},
        {"gan.batch", "16", Kind::Int, 1, big},
        {"gan.kl_weight", "1", Kind::Real, 1e-12, big},
        {"gan.recon_weight", "1", Kind::Real, 0, big},
        {"gan.mask_skip", "4", Kind::Real, 0, big},
        {"gan.width", "8", Kind::Int, 1, 1024},
        {"gan.max_width", "16", Kind::Int, 1, 1024},
        {"gan.resolution_levels", "6", Kind::Int, 2, 12},
        {"gan.latent_levels", "4", Kind::Int, 1, 12},
        {"gan.disc_width", "8", Kind::Int, 1, 1024},
        {"gan.disc_layers", "5", Kind::Int, 1, 12},
        {"gan.stn_width", "8", Kind::Int, 1, 1024},
        {"gan.stn_hidden", "32", Kind::Int, 1, 4096},
        {"aug.samples_per_base", "1", Kind::Int, 1, big},
        {"aug.policy", "preserve", Kind::Choice, 0, 0, {"preserve", "balance"}},
        {"aug.base_split", "train", Kind::Choice, 0, 0, {"train", "val"}},
        {"seg.data", "real", Kind::Choice, 0, 0, {"real", "augmented", "wss"}},
        {"seg.steps", "600", Kind::Int, 0, big},
        {"seg.batch", "16", Kind::Int, 1, big},
        {"seg.lr", "0.002", Kind::Real, 1e-12, 10},
        {"seg.width", "8", Kind::Int, 1, 1024},
        {"seg.scales", "3", Kind::Int, 2, 8},
        {"cls.data", "real", Kind::Choice, 0, 0, {"real", "augmented"}},
        {"cls.steps", "300", Kind::Int, 0, big},
        {"cls.batch", "16", Kind::Int, 1, big},
        {"cls.lr", "0.002", Kind::Real, 1e-12, 10},
        {"cls.width", "8", Kind::Int, 1, 1024},
        {"cls.blocks", "4", Kind::Int, 1, 10},
    };
    return s;
}

const Field& field(const std::string& key) {
    for (const auto& f : schema())
        if (f.key == key) return f;
    throw SchemaError(key, "unknown configuration key");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double parse_number(const std::string& key, const std::string& v, bool integral) {
    std::size_t used = 0;
    double x = 0;
    try {
        x = integral ? static_cast<double>(std::stoll(v, &used)) : std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) {
        throw SchemaError(key, "expected " + std::string(integral ? "an integer" : "a number") + ", got '" + v + "'");
    }
    return x;
}

std::string file_hash(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ss.str())));
    return buf;
}

// --- run directory layout --------------------------------------------------

struct Layout {
    fs::path root;
    fs::path data() const { return root / "data"; }
    fs::path wss() const { return root / "wss"; }
    fs::path scorer() const { return wss() / "scorer.ckpt"; }
    fs::path maps() const { return wss() / "maps"; }
    fs::path prior() const { return root / "shape" / "prior.ckpt"; }
    fs::path gan(const std::string& v) const { return root / "geogan" / v; }
    fs::path augmented(const std::string& v) const { return root / "augmented" / v; }
    fs::path seg(const std::string& tag) const { return root / "seg" / tag; }
    fs::path cls(const std::string& tag) const { return root / "cls" / tag; }
    fs::path reports() const { return root / "reports"; }
    fs::path manifests() const { return root / "manifests"; }
};

void require(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw MissingArtifact(producer, p);
}

SplitDataset need_data(const Layout& L) {
    require(L.data() / "labels.csv", "toy-data");
    return load_dataset(L.data());
}

std::uint64_t module_seed(const Config& c, const std::string& module) { return derive_seed(c.seed(), module); }

wss::WssConfig wss_config(const Config& c) {
    wss::WssConfig w;
    w.grid_n = c.integer("wss.grid");
    w.mil.epochs = c.integer("wss.mil_epochs");
    w.mil.batch_bags = c.integer("wss.batch");
    w.mil.lr = c.real("wss.lr");
    w.mil.seed = module_seed(c, "wss");
    w.mil.scorer.width = c.integer("wss.width");
    w.mil.scorer.levels = c.integer("wss.levels");
    w.retrain.epochs = c.integer("wss.retrain_epochs");
    w.retrain.batch_bags = c.integer("wss.batch");
    w.retrain.lr = c.real("wss.lr");
    w.retrain.seed = module_seed(c, "wss");
    w.retrain.scorer = w.mil.scorer;
    w.retrain.threshold = c.real("wss.threshold");
    return w;
}

gan::GanConfig gan_config(const Config& c, int num_labels) {
    gan::GanConfig g;
    auto& gen = g.gen;
    gen.resolution_levels = c.integer("gan.resolution_levels");
    gen.latent_levels = c.integer("gan.latent_levels");
    gen.lambda1 = c.real("gan.lambda1");
    gen.lambda2 = c.real("gan.lambda2");
    gen.lr = c.real("gan.lr");
    gen.batch = c.integer("gan.batch");
    gen.kl_weight = c.real("gan.kl_weight");
    gen.recon_weight = c.real("gan.recon_weight");
    gen.mask_skip = c.real("gan.mask_skip");
    gen.width = c.integer("gan.width");
    gen.max_width = c.integer("gan.max_width");
    gen.num_labels = num_labels;
    gen.flags = gan::flags_for(gan::parse_variant(c.str("gan.variant")));
    g.stn.num_labels = num_labels;
    g.stn.width = c.integer("gan.stn_width");
    g.stn.hidden = c.integer("gan.stn_hidden");
    g.disc.num_labels = num_labels;
    g.disc.width = c.integer("gan.disc_width");
    g.disc.layers = c.integer("gan.disc_layers");
    g.steps = c.integer("gan.steps");
    g.seed = module_seed(c, "geogan");
    return g;
}

down::SegmenterConfig seg_config(const Config& c) {
    down::SegmenterConfig s;
    s.steps = c.integer("seg.steps");
    s.epochs = 0;
    s.batch = c.integer("seg.batch");
    s.lr = c.real("seg.lr");
    s.width = c.integer("seg.width");
    s.scales = c.integer("seg.scales");
    s.seed = module_seed(c, "segmenter");
    return s;
}

down::ClassifierConfig cls_config(const Config& c) {
    down::ClassifierConfig s;
    s.steps = c.integer("cls.steps");
    s.epochs = 0;
    s.batch = c.integer("cls.batch");
    s.lr = c.real("cls.lr");
    s.width = c.integer("cls.width");
    s.blocks = c.integer("cls.blocks");
    s.seed = module_seed(c, "classifier");
    return s;
}

std::string data_tag(const Config& c, const std::string& key) {
    const auto& d = c.str(key);
    return d == "augmented" ? "augmented_" + c.str("gan.variant") : d;
}

std::vector<ImageSample> training_set(const Config& c, const Layout& L, const std::string& key) {
    const auto& d = c.str(key);
    if (d == "augmented") {
        const auto dir = L.augmented(c.str("gan.variant"));
        require(dir / "labels.csv", "generate");
        return load_dataset(dir).train;
    }
    auto data = need_data(L).train;
    if (d == "wss") {
        for (auto& s : data) {
            const auto p = L.maps() / (s.id + ".png");
            require(p, "wss-relabel");
            s.mask = read_mask_png(p);
            s.class_label = labels_present(s.mask).size() > 1 ? 1 : 0;
        }
    }
    return data;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << j.dump(2) << "\n";
}

void write_trace(const fs::path& p, const std::vector<double>& trace) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out.precision(17);
    out << "step,loss\n";
    for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << trace[i] << '\n';
}

// --- subcommands -----------------------------------------------------------

using Outputs = std::vector<fs::path>;

Outputs toy_data(const Config& c, const Layout& L) {
    ToyOptions o;
    o.count = c.integer("toy.count");
    o.height = o.width = c.integer("toy.size");
    o.infected_fraction = c.real("toy.infected_fraction");
    o.label_presence = c.real("toy.label_presence");
    o.seed = module_seed(c, "toydata");
    const int n_train = c.integer("toy.train"), n_val = c.integer("toy.val");
    if (n_train + n_val > o.count) throw SchemaError("toy.train", "train + val exceeds toy.count");
    const auto scheme = LabelScheme::covid_default();
    auto samples = generate_toy_dataset(o, scheme);
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.id);
    const auto split = make_split(ids, n_train, n_val, module_seed(c, "split"));
    fs::remove_all(L.data());
    save_dataset(L.data(), assign_split(std::move(samples), scheme, split));
    return {L.data()};
}

Outputs wss_train(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    const auto cfg = wss_config(c);
    const auto run = wss::run_wss(ds.train, {}, ds.scheme, cfg);
    fs::create_directories(L.wss());
    run.classifier.save(L.scorer(), cfg.grid_n);
    wss::write_sidecar(L.wss() / "train.json", run);
    return {L.scorer(), L.wss() / "train.json"};
}

Outputs wss_relabel(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    require(L.scorer(), "wss-train");
    int grid = 0;
    const auto net = wss::InstanceScorer::load(L.scorer(), &grid);
    const double threshold = c.real("wss.threshold");
    fs::remove_all(L.maps());
    fs::create_directories(L.maps());
    metrics::SegmentationEvaluator ev(ds.scheme);
    for (const auto& s : ds.train) {
        const auto map = wss::relabel(net, wss::make_bag(s, ds.scheme, GridSpec{grid}), threshold);
        write_mask_png(L.maps() / (s.id + ".png"), map);
        ev.add(map, s.mask);
    }
    const nlohmann::json side{{"grid_n", grid}, {"threshold", threshold}, {"maps", ds.train.size()},
                              {"seed", c.seed()}, {"dice_vs_masks", ev.report().to_json()}};
    write_json(L.wss() / "maps.json", side);
    return {L.maps(), L.wss() / "maps.json"};
}

Outputs shape_pretrain(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    std::vector<LabelMap> masks;
    const int n = std::min<int>(c.integer("shape.count"), static_cast<int>(ds.train.size()));
    for (int i = 0; i < n; ++i) {
        if (c.str("shape.source") == "wss") {
            const auto p = L.maps() / (ds.train[i].id + ".png");
            require(p, "wss-relabel");
            masks.push_back(read_mask_png(p));
        } else {
            masks.push_back(ds.train[i].mask);
        }
    }
    shape::ShapePriorConfig sc;
    sc.epochs = c.integer("shape.epochs");
    sc.width = c.integer("shape.width");
    sc.hidden = c.integer("shape.hidden");
    sc.lr = c.real("shape.lr");
    sc.seed = module_seed(c, "shape_prior");
    const auto run = shape::pretrain_shape_prior(masks, ds.scheme, sc);
    fs::create_directories(L.prior().parent_path());
    run.model.save(L.prior());
    write_trace(L.prior().parent_path() / "loss.csv", run.loss_trace);
    return {L.prior(), L.prior().parent_path() / "loss.csv"};
}

Outputs geogan_train(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    require(L.prior(), "shape-pretrain");
    const auto prior = shape::ShapePriorModel::load(L.prior());
    gan::TrainState st;
    const auto models = gan::train_geogan(ds.train, prior, gan_config(c, ds.scheme.n()), &st);
    const auto dir = L.gan(c.str("gan.variant"));
    fs::remove_all(dir);
    fs::create_directories(dir);
    models.save(dir);
    st.write_csv(dir / "trace.csv");
    return {dir};
}

Outputs generate(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    const auto gdir = L.gan(c.str("gan.variant"));
    require(gdir / "generator.ckpt", "geogan-train");
    const auto models = gan::GeoGan::load(gdir);
    aug::AugmentationPlan plan;
    plan.samples_per_base = c.integer("aug.samples_per_base");
    plan.policy = aug::parse_policy(c.str("aug.policy"));
    plan.base_split = aug::parse_base_split(c.str("aug.base_split"));
    plan.seed = module_seed(c, "augment");
    const auto out = L.augmented(c.str("gan.variant"));
    fs::remove_all(out);
    aug::build_augmented_dataset(models, ds, plan, out);
    return {out};
}

Outputs seg_train(const Config& c, const Layout& L) {
    const auto data = training_set(c, L, "seg.data");
    const auto run = down::train_segmenter(data, LabelScheme::covid_default(), seg_config(c));
    const auto dir = L.seg(data_tag(c, "seg.data"));
    fs::create_directories(dir);
    run.model.save(dir / "model.ckpt");
    run.write_csv(dir / "metrics.csv");
    write_trace(dir / "trace.csv", run.loss_trace);
    return {dir / "model.ckpt", dir / "metrics.csv", dir / "trace.csv"};
}

Outputs seg_eval(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    const auto tag = data_tag(c, "seg.data");
    require(L.seg(tag) / "model.ckpt", "seg-train");
    const auto model = down::Segmenter::load(L.seg(tag) / "model.ckpt");
    const auto report = down::evaluate_segmenter(model, ds.test);
    const auto p = L.reports() / ("seg_" + tag + ".json");
    write_json(p, report.to_json());
    return {p};
}

Outputs cls_train(const Config& c, const Layout& L) {
    const auto data = training_set(c, L, "cls.data");
    const auto run = down::train_classifier(data, cls_config(c));
    const auto dir = L.cls(data_tag(c, "cls.data"));
    fs::create_directories(dir);
    run.model.save(dir / "model.ckpt");
    run.write_csv(dir / "metrics.csv");
    write_trace(dir / "trace.csv", run.loss_trace);
    return {dir / "model.ckpt", dir / "metrics.csv", dir / "trace.csv"};
}

Outputs cls_eval(const Config& c, const Layout& L) {
    const auto ds = need_data(L);
    const auto tag = data_tag(c, "cls.data");
    require(L.cls(tag) / "model.ckpt", "cls-train");
    const auto model = down::Classifier::load(L.cls(tag) / "model.ckpt");
    metrics::MetricsReport report;
    metrics::add_classification(report, down::evaluate_classifier(model, ds.test));
    const auto p = L.reports() / ("cls_" + tag + ".json");
    write_json(p, report.to_json());
    return {p};
}

Outputs ablate(const Config& base, const Layout& L) {
    need_data(L);
    require(L.prior(), "shape-pretrain");
    Config c = base;
    c.set("seg.data", "augmented");
    Outputs out;
    for (auto step : {geogan_train, generate, seg_train, seg_eval}) {
        const auto o = step(c, L);
        out.insert(out.end(), o.begin(), o.end());
    }
    const auto from = L.reports() / ("seg_" + data_tag(c, "seg.data") + ".json");
    const auto to = L.reports() / ("ablate_" + c.str("gan.variant") + ".json");
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
    out.push_back(to);
    return out;
}

using Handler = Outputs (*)(const Config&, const Layout&);

const std::vector<std::pair<std::string, Handler>>& handlers() {
    static const std::vector<std::pair<std::string, Handler>> h{
        {"toy-data", toy_data},   {"wss-train", wss_train},   {"wss-relabel", wss_relabel},
        {"shape-pretrain", shape_pretrain}, {"geogan-train", geogan_train}, {"generate", generate},
        {"seg-train", seg_train}, {"seg-eval", seg_eval},     {"cls-train", cls_train},
        {"cls-eval", cls_eval},   {"ablate", ablate},
    };
    return h;
}

void hash_outputs(const fs::path& root, const Outputs& outs, nlohmann::json& into) {
    for (const auto& o : outs) {
        if (fs::is_directory(o)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(o))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) into[fs::relative(f, root).generic_string()] = file_hash(f);
        } else if (fs::exists(o)) {
            into[fs::relative(o, root).generic_string()] = file_hash(o);
        }
    }
}

}  // namespace

Config::Config() {
    for (const auto& f : schema()) values_[f.key] = f.fallback;
}

void Config::load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("--config", "cannot read " + path.string());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw SchemaError(path.string() + ":" + std::to_string(n), "expected key = value, got '" + line + "'");
        }
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void Config::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw SchemaError(assignment, "expected key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    field(key);
    values_[key] = value;
}

const std::string& Config::str(const std::string& key) const {
    field(key);
    return values_.at(key);
}

int Config::integer(const std::string& key) const {
    return static_cast<int>(parse_number(key, str(key), true));
}

double Config::real(const std::string& key) const { return parse_number(key, str(key), false); }

std::uint64_t Config::seed() const { return static_cast<std::uint64_t>(parse_number("seed", str("seed"), true)); }

void Config::validate() const {
    for (const auto& f : schema()) {
        const auto& v = values_.at(f.key);
        if (f.kind == Kind::Choice) {
            if (std::find(f.choices.begin(), f.choices.end(), v) == f.choices.end()) {
                std::string all;
                for (const auto& ch : f.choices) all += (all.empty() ? "" : ", ") + ch;
                throw SchemaError(f.key, "'" + v + "' is not one of " + all);
            }
            continue;
        }
        const double x = parse_number(f.key, v, f.kind == Kind::Int);
        if (!(x >= f.min && x <= f.max)) {
            std::ostringstream msg;
            msg << "value " << v << " outside [" << f.min << ", " << f.max << "]";
            throw SchemaError(f.key, msg.str());
        }
    }
    if (integer("gan.latent_levels") > integer("gan.resolution_levels")) {
        throw SchemaError("gan.latent_levels", "must not exceed gan.resolution_levels");
    }
    if (integer("gan.max_width") < integer("gan.width")) {
        throw SchemaError("gan.max_width", "must be >= gan.width");
    }
}

nlohmann::json Config::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
}

std::uint64_t Config::hash() const { return fnv1a(to_json().dump()); }

std::vector<std::string> subcommands() {
    std::vector<std::string> out;
    for (const auto& [name, _] : handlers()) out.push_back(name);
    return out;
}

std::string git_describe() { return GEOGAN_GIT_DESCRIBE; }

RunResult run_subcommand(const std::string& name, const Config& cfg, const fs::path& out) {
    Handler h = nullptr;
    for (const auto& [n, fn] : handlers())
        if (n == name) h = fn;
    if (!h) throw SchemaError("subcommand", "unknown subcommand '" + name + "'");
    cfg.validate();
    const Layout L{out};
    const auto t0 = std::chrono::steady_clock::now();
    const auto outputs = h(cfg, L);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    RunResult r;
    r.manifest = {{"subcommand", name},
                  {"config", cfg.to_json()},
                  {"config_hash", cfg.hash()},
                  {"seed", cfg.seed()},
                  {"git_describe", git_describe()},
                  {"wall_time_s", wall},
                  {"artifacts", nlohmann::json::object()}};
    hash_outputs(out, outputs, r.manifest["artifacts"]);
    std::string file = name;
    if (name == "geogan-train" || name == "generate" || name == "ablate") file += "_" + cfg.str("gan.variant");
    if (name == "seg-train" || name == "seg-eval") file += "_" + data_tag(cfg, "seg.data");
    if (name == "cls-train" || name == "cls-eval") file += "_" + data_tag(cfg, "cls.data");
    r.manifest_path = L.manifests() / (file + ".json");
    write_json(r.manifest_path, r.manifest);
    return r;
}

int run_and_report(const std::string& name, const Config& cfg, const fs::path& out) {
    try {
        const auto r = run_subcommand(name, cfg, out);
        std::cout << name << ": ok (" << r.manifest["wall_time_s"].get<double>() << " s), manifest "
                  << r.manifest_path.string() << "\n";
        return 0;
    } catch (const SchemaError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const gan::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace geogan::pipeline
