#include "geogan/geogan.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "geogan/convert.hpp"

namespace geogan::gan {

namespace {

constexpr double kSigmaFloor = 1e-4;

Tensor normal_like(const Tensor& t, Rng& rng) {
    Tensor e(t.shape());
    for (auto& v : e.values()) v = rng.normal();
    return e;
}

Var concat(std::initializer_list<Var> parts) {
    const std::vector<Var> v(parts);
    return ag::concat_channels(v);
}

double fraction_positive(const Tensor& logits, bool positive) {
    double n = 0;
    for (double v : logits.values()) n += positive ? v > 0 : v < 0;
    return n / static_cast<double>(logits.size());
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::NoClass: return "no_class";
        case Variant::NoShape: return "no_shape";
        case Variant::NoSampling: return "no_sampling";
    }
    return "full";
}

Variant parse_variant(const std::string& s) {
    for (auto v : {Variant::Full, Variant::NoClass, Variant::NoShape, Variant::NoSampling})
        if (to_string(v) == s) return v;
    throw ConfigError("variant", "unknown ablation '" + s + "' (full, no_class, no_shape, no_sampling)");
}

AblationFlags flags_for(Variant v) {
    AblationFlags f;
    f.use_class_loss = v != Variant::NoClass;
    f.use_shape_loss = v != Variant::NoShape;
    f.use_sampling = v != Variant::NoSampling;
    return f;
}

void GeneratorConfig::validate() const {
    if (resolution_levels < 2) throw ConfigError("resolution_levels", "must be >= 2");
    if (latent_levels < 1 || latent_levels > resolution_levels) {
        throw ConfigError("latent_levels", "must lie in [1, resolution_levels]");
    }
    if (!(lambda1 >= 0)) throw ConfigError("lambda1", "must be >= 0");
    if (!(lambda2 >= 0)) throw ConfigError("lambda2", "must be >= 0");
    if (!(kl_weight > 0)) throw ConfigError("kl_weight", "must be > 0");
    if (!(recon_weight >= 0)) throw ConfigError("recon_weight", "must be >= 0");
    if (!(lr > 0)) throw ConfigError("lr", "must be > 0");
    if (batch < 1) throw ConfigError("batch", "must be >= 1");
    if (width < 1 || max_width < width) throw ConfigError("width", "need 1 <= width <= max_width");
    if (latent_channels < 1) throw ConfigError("latent_channels", "must be >= 1");
    if (!(mask_skip >= 0)) throw ConfigError("mask_skip", "must be >= 0");
    if (num_labels < 2) throw ConfigError("num_labels", "must be >= 2");
    if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
}

int GeneratorConfig::channels(int level) const { return std::min(max_width, width << std::min(level, 8)); }

nlohmann::json GeneratorConfig::to_json() const {
    return {{"resolution_levels", resolution_levels},
            {"latent_levels", latent_levels},
            {"lambda1", lambda1},
            {"lambda2", lambda2},
            {"lr", lr},
            {"batch", batch},
            {"kl_weight", kl_weight},
            {"recon_weight", recon_weight},
            {"width", width},
            {"max_width", max_width},
            {"latent_channels", latent_channels},
            {"mask_skip", mask_skip},
            {"num_labels", num_labels},
            {"num_classes", num_classes},
            {"use_class_loss", flags.use_class_loss},
            {"use_shape_loss", flags.use_shape_loss},
            {"use_sampling", flags.use_sampling}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.resolution_levels = j.at("resolution_levels");
    c.latent_levels = j.at("latent_levels");
    c.lambda1 = j.at("lambda1");
    c.lambda2 = j.at("lambda2");
    c.lr = j.at("lr");
    c.batch = j.at("batch");
    c.kl_weight = j.at("kl_weight");
    c.recon_weight = j.at("recon_weight");
    c.width = j.at("width");
    c.max_width = j.at("max_width");
    c.latent_channels = j.at("latent_channels");
    c.mask_skip = j.at("mask_skip");
    c.num_labels = j.at("num_labels");
    c.num_classes = j.at("num_classes");
    c.flags.use_class_loss = j.at("use_class_loss");
    c.flags.use_shape_loss = j.at("use_shape_loss");
    c.flags.use_sampling = j.at("use_sampling");
    return c;
}

std::array<int, 2> latent_shape(int height, int width, int level, int latent_levels) {
    if (level < 1 || level > latent_levels) {
        throw GanError("latent level " + std::to_string(level) + " outside 1.." + std::to_string(latent_levels));
    }
    const int f = 1 << (level - 1);
    if (height % f || width % f) {
        throw GanError("latent level " + std::to_string(level) + " needs dims divisible by " + std::to_string(f) +
                       ", got " + dims_str(height, width));
    }
    return {height / f, width / f};
}

Var gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    if (q.mu.shape() != p.mu.shape() || q.sigma.shape() != p.sigma.shape() || q.mu.shape() != q.sigma.shape()) {
        throw GanError("gaussian_kl: parameter shapes differ");
    }
    return ag::gaussian_kl(q.mu, q.sigma, p.mu, p.sigma);
}

double gaussian_kl(std::span<const double> mu_q, std::span<const double> sigma_q, std::span<const double> mu_p,
                   std::span<const double> sigma_p) {
    const std::size_t n = mu_q.size();
    if (sigma_q.size() != n || mu_p.size() != n || sigma_p.size() != n) {
        throw GanError("gaussian_kl: parameter lengths differ");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(sigma_q[i] > 0) || !(sigma_p[i] > 0)) throw GanError("gaussian_kl: sigma must be positive");
        const double d = mu_q[i] - mu_p[i];
        kl += std::log(sigma_p[i] / sigma_q[i]) + (sigma_q[i] * sigma_q[i] + d * d) / (2 * sigma_p[i] * sigma_p[i]) -
              0.5;
    }
    return kl;
}

Generator::Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int K = cfg.num_labels, zc = cfg.latent_channels;
    const int in_p = 1 + K + cfg.num_classes;
    for (int r = 0; r < cfg.resolution_levels; ++r) {
        const int in = r == 0 ? in_p : cfg.channels(r - 1);
        prior_enc_.emplace_back(in, cfg.channels(r), r == 0 ? 1 : 2, true, rng);
        post_enc_.emplace_back(r == 0 ? in + K : in, cfg.channels(r), r == 0 ? 1 : 2, true, rng);
    }
    for (int l = 1; l <= cfg.latent_levels; ++l) {
        const int ctx = cfg.channels(l - 1) + (l < cfg.latent_levels ? zc : 0);
        prior_head_.emplace_back(ctx, 2 * zc, 3, 1, 1, rng);
        post_head_.emplace_back(ctx, 2 * zc, 3, 1, 1, rng);
        // prior and posterior start equal
        prior_head_.back().zero();
        post_head_.back().zero();
    }
    for (int r = cfg.resolution_levels - 2; r >= 0; --r) {
        const int in = cfg.channels(r + 1) + cfg.channels(r) + (r < cfg.latent_levels ? zc : 0);
        dec_.emplace_back(in, cfg.channels(r), 1, true, rng);
    }
    out_ = nn::Conv2d(cfg.channels(0), K, 1, 1, 0, rng);
}

void Generator::check_dims(int height, int width) const {
    const int f = 1 << (cfg_.resolution_levels - 1);
    if (height % f || width % f) {
        throw GanError("generator with " + std::to_string(cfg_.resolution_levels) + " resolution levels needs dims " +
                       "divisible by " + std::to_string(f) + ", got " + dims_str(height, width));
    }
}

std::vector<Var> Generator::encode(const std::vector<nn::ConvBlock>& enc, const Var& input, nn::Mode mode) const {
    std::vector<Var> f;
    Var h = input;
    for (auto& b : const_cast<std::vector<nn::ConvBlock>&>(enc)) {
        h = b(h, mode);
        f.push_back(h);
    }
    return f;
}

GaussianParams Generator::head_params(const nn::Conv2d& head, const Var& ctx) const {
    const int zc = cfg_.latent_channels;
    const Var out = head(ctx);
    return {ag::slice_channels(out, 0, zc), ag::add_scalar(ag::softplus(ag::slice_channels(out, zc, 2 * zc)), kSigmaFloor)};
}

GeneratorOutput Generator::forward(const Var& image, const Var& mask, const Var& cond, const std::optional<Var>& target,
                                   LatentSource source, Rng* noise, nn::Mode mode) const {
    const auto& s = image.shape();
    check_dims(s[2], s[3]);
    if (s[1] != 1 || mask.shape()[1] != cfg_.num_labels || mask.shape()[0] != s[0] || mask.shape()[2] != s[2] ||
        mask.shape()[3] != s[3]) {
        throw GanError("generator expects image [B,1,H,W] and mask [B," + std::to_string(cfg_.num_labels) + ",H,W]");
    }
    if (source == LatentSource::Posterior && !target) throw GanError("posterior latents need a target mask");
    if (cfg_.flags.use_sampling && !noise) throw GanError("latent sampling needs a random stream");

    const Var u = concat({image, mask, ag::broadcast_spatial(cond, s[2], s[3])});
    const auto fp = encode(prior_enc_, u, mode);
    std::vector<Var> fq;
    if (target) fq = encode(post_enc_, concat({u, *target}), mode);

    const int L = cfg_.latent_levels;
    GeneratorOutput out;
    out.latents.resize(L);
    for (int l = L; l >= 1; --l) {
        auto& level = out.latents[l - 1];
        auto ctx = [&](const Var& f) { return l == L ? f : concat({f, ag::upsample2x(out.latents[l].z)}); };
        level.prior = head_params(prior_head_[l - 1], ctx(fp[l - 1]));
        if (target) level.posterior = head_params(post_head_[l - 1], ctx(fq[l - 1]));
        const GaussianParams& from = source == LatentSource::Posterior ? *level.posterior : level.prior;
        level.z = cfg_.flags.use_sampling
                      ? ag::add(from.mu, ag::mul(from.sigma, Var(normal_like(from.mu.value(), *noise))))
                      : from.mu;
    }
    Var h = fp.back();
    int i = 0;
    for (int r = cfg_.resolution_levels - 2; r >= 0; --r, ++i) {
        const Var up = ag::upsample2x(h);
        h = dec_[i](r < L ? concat({up, fp[r], out.latents[r].z}) : concat({up, fp[r]}), mode);
    }
    out.logits = ag::add(out_(h), ag::scale(mask, cfg_.mask_skip));
    out.probs = ag::softmax_channels(out.logits);
    return out;
}

void Generator::collect(nn::ParameterSet& ps, const std::string& prefix) {
    for (std::size_t i = 0; i < prior_enc_.size(); ++i) prior_enc_[i].collect(ps, prefix + ".penc" + std::to_string(i));
    for (std::size_t i = 0; i < post_enc_.size(); ++i) post_enc_[i].collect(ps, prefix + ".qenc" + std::to_string(i));
    for (std::size_t i = 0; i < prior_head_.size(); ++i) prior_head_[i].collect(ps, prefix + ".phead" + std::to_string(i));
    for (std::size_t i = 0; i < post_head_.size(); ++i) post_head_[i].collect(ps, prefix + ".qhead" + std::to_string(i));
    for (std::size_t i = 0; i < dec_.size(); ++i) dec_[i].collect(ps, prefix + ".dec" + std::to_string(i));
    out_.collect(ps, prefix + ".out");
}

Var hierarchy_kl(const LatentHierarchy& h) {
    if (h.empty()) throw GanError("hierarchy_kl: no latent levels");
    std::vector<Var> terms;
    for (const auto& level : h) {
        if (!level.posterior) throw GanError("hierarchy_kl: level without posterior");
        terms.push_back(gaussian_kl(*level.posterior, level.prior));
    }
    return ag::scale(ag::sum_scalars(terms), 1.0 / h.front().z.shape()[0]);
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.layers < 1 || cfg.width < 1) throw ConfigError("disc", "layers and width must be positive");
    int in = 1 + cfg.num_labels;
    for (int k = 0; k < cfg.layers; ++k) {
        const int out = k == 0 ? cfg.width : 2 * cfg.width;
        enc_.emplace_back(in, out, 3, 2, 1, rng);
        in = out;
    }
    adv_ = nn::Linear(in, 1, rng);
    cls_ = nn::Linear(in, cfg.num_classes, rng);
}

DiscOutput Discriminator::forward(const Var& image, const Var& mask) const {
    Var h = concat({image, mask});
    for (const auto& c : enc_) h = ag::leaky_relu(c(h));
    h = ag::global_avg_pool(h);
    return {adv_(h), cls_(h)};
}

void Discriminator::collect(nn::ParameterSet& ps, const std::string& prefix) {
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(ps, prefix + ".enc" + std::to_string(i));
    adv_.collect(ps, prefix + ".adv");
    cls_.collect(ps, prefix + ".cls");
}

AdversarialLoss adversarial_loss(const Var& real_logits, const Var& fake_logits) {
    const Tensor ones(real_logits.shape(), 1.0), zeros(fake_logits.shape(), 0.0);
    const Tensor fake_ones(fake_logits.shape(), 1.0);
    return {ag::add(ag::bce_with_logits(real_logits, ones), ag::bce_with_logits(fake_logits, zeros)),
            ag::bce_with_logits(fake_logits, fake_ones)};
}

Var classification_loss(const Var& class_logits, std::span<const int> cond) {
    if (static_cast<int>(cond.size()) != class_logits.shape()[0]) {
        throw GanError("classification_loss: one condition per sample required");
    }
    for (int c : cond) {
        if (c < 0 || c >= class_logits.shape()[1]) throw GanError("classification_loss: condition out of range");
    }
    return ag::cross_entropy(class_logits, cond);
}

Var soft_cross_entropy(const Var& logits, const Var& target) {
    if (logits.shape() != target.shape()) throw GanError("soft_cross_entropy: shapes differ");
    const auto& s = logits.shape();
    const double pixels = static_cast<double>(s[0]) * s[2] * s[3];
    return ag::scale(ag::sum(ag::mul(target, ag::log_softmax_channels(logits))), -1.0 / pixels);
}

double total_generator_loss(const LossTerms& t, const GeneratorConfig& cfg) {
    double total = t.adv + cfg.kl_weight * t.kl + cfg.recon_weight * t.recon;
    if (cfg.flags.use_class_loss) total += cfg.lambda1 * t.cls;
    if (cfg.flags.use_shape_loss) total += cfg.lambda2 * t.shape;
    return total;
}

Var total_generator_loss(const Var& adv, const Var& cls, const Var& shape, const Var& kl, const Var& recon,
                         const GeneratorConfig& cfg) {
    std::vector<Var> terms{adv, ag::scale(kl, cfg.kl_weight)};
    if (recon.defined()) terms.push_back(ag::scale(recon, cfg.recon_weight));
    if (cfg.flags.use_class_loss) terms.push_back(ag::scale(cls, cfg.lambda1));
    if (cfg.flags.use_shape_loss) terms.push_back(ag::scale(shape, cfg.lambda2));
    return ag::sum_scalars(terms);
}

void GanConfig::validate() const {
    gen.validate();
    if (steps < 0) throw ConfigError("steps", "must be >= 0");
    if (stn.num_labels != gen.num_labels || disc.num_labels != gen.num_labels) {
        throw ConfigError("num_labels", "stn, generator and discriminator must agree");
    }
    if (stn.num_classes != gen.num_classes || disc.num_classes != gen.num_classes) {
        throw ConfigError("num_classes", "stn, generator and discriminator must agree");
    }
}

nlohmann::json GanConfig::to_json() const {
    return {{"gen", gen.to_json()},
            {"stn",
             {{"num_labels", stn.num_labels},
              {"num_classes", stn.num_classes},
              {"width", stn.width},
              {"hidden", stn.hidden},
              {"init_sigma", stn.init_sigma}}},
            {"disc",
             {{"width", disc.width},
              {"layers", disc.layers},
              {"num_labels", disc.num_labels},
              {"num_classes", disc.num_classes}}},
            {"steps", steps},
            {"seed", seed},
            {"height", height},
            {"width", width}};
}

GanConfig GanConfig::from_json(const nlohmann::json& j) {
    GanConfig c;
    c.gen = GeneratorConfig::from_json(j.at("gen"));
    const auto& s = j.at("stn");
    c.stn.num_labels = s.at("num_labels");
    c.stn.num_classes = s.at("num_classes");
    c.stn.width = s.at("width");
    c.stn.hidden = s.at("hidden");
    c.stn.init_sigma = s.at("init_sigma");
    const auto& d = j.at("disc");
    c.disc.width = d.at("width");
    c.disc.layers = d.at("layers");
    c.disc.num_labels = d.at("num_labels");
    c.disc.num_classes = d.at("num_classes");
    c.steps = j.at("steps");
    c.seed = j.at("seed");
    c.height = j.at("height");
    c.width = j.at("width");
    return c;
}

std::uint64_t GanConfig::hash() const { return fnv1a(to_json().dump()); }

void TrainState::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw GanError("cannot write " + path.string());
    out.precision(17);
    out << "step,adv,class,shape,kl,recon,total,d_loss,d_real_acc,d_fake_acc\n";
    for (std::size_t i = 0; i < total.size(); ++i) {
        out << i << ',' << adv[i] << ',' << cls[i] << ',' << shape[i] << ',' << kl[i] << ',' << recon[i] << ','
            << total[i] << ',' << d_loss[i] << ',' << d_real_acc[i] << ',' << d_fake_acc[i] << '\n';
    }
}

GeoGan::GeoGan(const GanConfig& cfg) : config(cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "geogan/init"));
    stn = stn::SpatialTransformer(cfg.stn, rng);
    generator = Generator(cfg.gen, rng);
    disc = Discriminator(cfg.disc, rng);
}

void GeoGan::save(const std::filesystem::path& dir) const {
    GeoGan copy = *this;
    const nlohmann::json meta{{"kind", "geogan"}, {"config", config.to_json()}, {"config_hash", config.hash()}};
    nn::ParameterSet a, b, c;
    copy.stn.collect(a);
    copy.generator.collect(b);
    copy.disc.collect(c);
    nn::save_checkpoint(dir / "stn.ckpt", a, meta);
    nn::save_checkpoint(dir / "generator.ckpt", b, meta);
    nn::save_checkpoint(dir / "discriminator.ckpt", c, meta);
}

GeoGan GeoGan::load(const std::filesystem::path& dir) {
    const auto meta = nn::read_checkpoint_meta(dir / "generator.ckpt");
    if (meta.value("kind", "") != "geogan") throw GanError(dir.string() + " holds no GeoGAN checkpoint");
    GeoGan m(GanConfig::from_json(meta.at("config")));
    if (m.config.hash() != meta.at("config_hash").get<std::uint64_t>()) {
        throw GanError(dir.string() + ": configuration does not match its hash");
    }
    nn::ParameterSet a, b, c;
    m.stn.collect(a);
    m.generator.collect(b);
    m.disc.collect(c);
    nn::load_checkpoint(dir / "stn.ckpt", a);
    nn::load_checkpoint(dir / "generator.ckpt", b);
    nn::load_checkpoint(dir / "discriminator.ckpt", c);
    return m;
}

Synthesis synthesize(const GeoGan& models, const ImageSample& base, const stn::TargetCondition& cond, Rng& rng) {
    const auto& gc = models.config.gen;
    if (models.config.height && !base.image.same_dims(models.config.height, models.config.width)) {
        throw GanError("synthesize: model trained on " + dims_str(models.config.height, models.config.width) +
                       ", base " + base.id + " is " + dims_str(base.height(), base.width()));
    }
    models.generator.check_dims(base.height(), base.width());
    ag::NoGradGuard guard;
    Synthesis out;
    out.affine = gc.flags.use_sampling ? models.stn.sample_affine(base.mask, cond, rng)
                                       : models.stn.predict_affine(base.mask, cond);
    out.image = stn::warp_image(base.image, out.affine);
    const LabelMap warped = stn::warp_mask(base.mask, out.affine);
    const std::array<int, 1> cls{cond.cls};
    auto g = models.generator.forward(Var(image_to_tensor(out.image)), Var(mask_to_onehot(warped, gc.num_labels)),
                                      Var(condition_tensor(cls, gc.num_classes)), std::nullopt, LatentSource::Prior,
                                      &rng, nn::Mode::Eval);
    out.mask = argmax_labels(g.probs.value());
    out.latents = std::move(g.latents);
    return out;
}

TrainState train_geogan(GeoGan& m, std::span<const ImageSample> data, const shape::ShapePriorModel& prior, int steps) {
    const auto& cfg = m.config;
    const auto& gc = cfg.gen;
    if (data.empty()) throw GanError("train_geogan: empty dataset");
    const int H = data[0].height(), W = data[0].width();
    bool has[2] = {false, false};
    for (const auto& s : data) {
        if (!s.image.same_dims(H, W) || !s.mask.same_dims(H, W)) throw GanError("train_geogan: mixed image sizes");
        if (s.class_label < 0 || s.class_label > 1) throw GanError("train_geogan: class label outside {0,1}");
        has[s.class_label] = true;
        for (int v : s.mask.data)
            if (v < 0 || v >= gc.num_labels) throw GanError("train_geogan: mask label outside the scheme in " + s.id);
    }
    if (!has[0] || !has[1]) throw GanError("train_geogan: dataset needs both classes");
    m.generator.check_dims(H, W);
    if (m.config.height && (m.config.height != H || m.config.width != W)) {
        throw GanError("train_geogan: model was trained on " + dims_str(m.config.height, m.config.width) +
                       ", data is " + dims_str(H, W));
    }
    m.config.height = H;
    m.config.width = W;
    if (prior.height() != H || prior.width() != W || prior.scheme().n() != gc.num_labels) {
        throw GanError("train_geogan: shape prior was trained on other dims or labels");
    }
    const auto frozen = prior.frozen();

    Rng rng(derive_seed(cfg.seed, "geogan/train"));
    nn::ParameterSet g_ps, d_ps;
    m.stn.collect(g_ps);
    m.generator.collect(g_ps);
    m.disc.collect(d_ps);
    nn::Adam g_opt(g_ps, {.lr = gc.lr, .beta1 = 0.5});
    nn::Adam d_opt(d_ps, {.lr = gc.lr, .beta1 = 0.5});

    TrainState st;
    st.seed = cfg.seed;
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::size_t cursor = order.size();
    const int B = std::min<int>(gc.batch, static_cast<int>(data.size()));
    const double pixels = static_cast<double>(H) * W;

    for (int step = 0; step < steps; ++step) {
        std::vector<const Image*> imgs;
        std::vector<const LabelMap*> masks;
        std::vector<int> cls;
        for (int b = 0; b < B; ++b) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const auto& s = data[order[cursor++]];
            imgs.push_back(&s.image);
            masks.push_back(&s.mask);
            cls.push_back(s.class_label);
        }
        const Var x(images_to_tensor(imgs));
        const Var s(masks_to_onehot(masks, gc.num_labels));
        const Var cond(condition_tensor(cls, gc.num_classes));
        const double lo = *std::min_element(x.value().values().begin(), x.value().values().end());
        const std::array<double, 1> fill{lo};

        // generator forward, shared by both updates
        Tensor eps(B, 6, 1, 1);
        if (gc.flags.use_sampling) eps = normal_like(eps, rng);
        const auto a = m.stn.forward(s, cond, eps);
        const Var x_w = ag::affine_warp(x, a.theta, fill);
        const Var s_w = stn::soft_warp_onehot(s, a.theta);
        const Var target = s_w.detach();
        const auto g = m.generator.forward(x_w, s_w, cond, target, LatentSource::Posterior, &rng, nn::Mode::Train);

        // discriminator step on the detached fake
        d_opt.zero_grad();
        const auto d_real = m.disc.forward(x, s);
        const auto d_fake = m.disc.forward(x_w.detach(), g.probs.detach());
        const auto adv_d = adversarial_loss(d_real.adv, d_fake.adv);
        const Var d_loss = ag::add(adv_d.d, classification_loss(d_real.cls, cls));
        d_loss.backward();
        d_opt.step();

        // generator + STN step against the updated discriminator
        g_opt.zero_grad();
        const auto d_gen = m.disc.forward(x_w, g.probs);
        const Var adv = adversarial_loss(d_real.adv.detach(), d_gen.adv).g;
        const Var cl = classification_loss(d_gen.cls, cls);
        const Var shape = ag::sub(Var(Tensor::scalar(1.0)), ag::mean(frozen.score(g.probs)));
        const Var kl = ag::scale(hierarchy_kl(g.latents), 1.0 / pixels);
        const Var recon = soft_cross_entropy(g.logits, target);
        const Var total = total_generator_loss(adv, cl, shape, kl, recon, gc);
        if (!std::isfinite(total.item()) || !std::isfinite(d_loss.item())) {
            throw GanError("train_geogan: non-finite loss at step " + std::to_string(st.step));
        }
        total.backward();
        g_opt.step();

        st.adv.push_back(adv.item());
        st.cls.push_back(cl.item());
        st.shape.push_back(shape.item());
        st.kl.push_back(kl.item());
        st.recon.push_back(recon.item());
        st.total.push_back(total.item());
        st.d_loss.push_back(d_loss.item());
        st.d_real_acc.push_back(fraction_positive(d_real.adv.value(), true));
        st.d_fake_acc.push_back(fraction_positive(d_fake.adv.value(), false));
        ++st.step;
    }
    return st;
}

GeoGan train_geogan(std::span<const ImageSample> data, const shape::ShapePriorModel& prior, const GanConfig& cfg,
                    TrainState* state) {
    GeoGan m(cfg);
    auto st = train_geogan(m, data, prior, cfg.steps);
    if (state) *state = std::move(st);
    return m;
}

double ToyLatentModel::log_likelihood(double x, double z) const {
    const double d = x - a * z - b;
    return -0.5 * std::log(2 * std::numbers::pi * s * s) - d * d / (2 * s * s);
}

double ToyLatentModel::log_evidence(double x) const {
    const double var = a * a + s * s;
    const double d = x - b;
    return -0.5 * std::log(2 * std::numbers::pi * var) - d * d / (2 * var);
}

double ToyLatentModel::elbo(double x, double m, double v) const {
    const double d = x - a * m - b;
    const double expected_ll = -0.5 * std::log(2 * std::numbers::pi * s * s) - (d * d + a * a * v * v) / (2 * s * s);
    const std::array<double, 1> mq{m}, sq{v}, mp{0.0}, sp{1.0};
    return expected_ll - gaussian_kl(mq, sq, mp, sp);
}

double ToyLatentModel::log_evidence_is(double x, double m, double v, int samples, Rng& rng) const {
    if (samples < 1 || !(v > 0)) throw GanError("log_evidence_is: need samples >= 1 and v > 0");
    std::vector<double> lw(samples);
    for (auto& w : lw) {
        const double z = m + v * rng.normal();
        const double log_prior = -0.5 * std::log(2 * std::numbers::pi) - 0.5 * z * z;
        const double e = (z - m) / v;
        const double log_q = -0.5 * std::log(2 * std::numbers::pi * v * v) - 0.5 * e * e;
        w = log_likelihood(x, z) + log_prior - log_q;
    }
    const double top = *std::max_element(lw.begin(), lw.end());
    double acc = 0.0;
    for (double w : lw) acc += std::exp(w - top);
    return top + std::log(acc / samples);
}

}  // namespace geogan::gan
