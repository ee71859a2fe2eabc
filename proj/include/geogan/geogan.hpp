#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geogan/nn.hpp"
#include "geogan/shape_prior.hpp"
#include "geogan/stn.hpp"
#include "geogan/toydata.hpp"

/// Geometry-aware GAN: spatial transformer + hierarchical-latent mask
/// generator + discriminator with an auxiliary class head, and the
/// alternating training loop.
namespace geogan::gan {

using ag::Var;

class GanError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration; the message starts with the offending field.
class ConfigError : public GanError {
public:
    ConfigError(const std::string& field, const std::string& what) : GanError(field + ": " + what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct AblationFlags {
    bool use_class_loss = true;
    bool use_shape_loss = true;
    bool use_sampling = true;
};

enum class Variant { Full, NoClass, NoShape, NoSampling };
std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
AblationFlags flags_for(Variant v);

struct GeneratorConfig {
    int resolution_levels = 6;
    int latent_levels = 4;
    double lambda1 = 0.92;  // class term
    double lambda2 = 0.9;   // shape term
    double lr = 1e-3;
    int batch = 16;
    double kl_weight = 1.0;     // beta
    double recon_weight = 1.0;  // mask reconstruction in the ELBO data term
    int width = 8;              // channels at full resolution
    int max_width = 16;
    int latent_channels = 1;
    double mask_skip = 4.0;  // input mask added to the output logits with this gain
    int num_labels = 4;
    int num_classes = 2;
    AblationFlags flags;

    void validate() const;
    int channels(int level) const;
    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Spatial shape of z_l (l = 1..L) for an h x w input: (h, w) * 2^(1-l).
std::array<int, 2> latent_shape(int height, int width, int level, int latent_levels);

struct GaussianParams {
    Var mu;
    Var sigma;  // softplus-positive
};

/// Closed-form KL(q || p) for diagonal Gaussians, summed over elements.
Var gaussian_kl(const GaussianParams& q, const GaussianParams& p);
double gaussian_kl(std::span<const double> mu_q, std::span<const double> sigma_q, std::span<const double> mu_p,
                   std::span<const double> sigma_p);

struct LatentLevel {
    GaussianParams prior;
    std::optional<GaussianParams> posterior;
    Var z;
};

/// Index 0 is level 1 (finest).
using LatentHierarchy = std::vector<LatentLevel>;

enum class LatentSource { Prior, Posterior };

struct GeneratorOutput {
    Var logits;  // [B,K,H,W]
    Var probs;   // softmax over labels
    LatentHierarchy latents;
};

/// Encoder-decoder over (warped image, warped mask, condition). Latents are
/// drawn coarse to fine; z_l enters the decoder skip at its resolution.
class Generator {
public:
    Generator() = default;
    Generator(const GeneratorConfig& cfg, Rng& rng);

    /// target is required for the posterior; noise supplies one standard
    /// normal draw per latent element unless sampling is disabled.
    GeneratorOutput forward(const Var& image, const Var& mask, const Var& cond, const std::optional<Var>& target,
                            LatentSource source, Rng* noise, nn::Mode mode) const;

    void collect(nn::ParameterSet& ps, const std::string& prefix = "generator");
    const GeneratorConfig& config() const { return cfg_; }
    void check_dims(int height, int width) const;

private:
    std::vector<Var> encode(const std::vector<nn::ConvBlock>& enc, const Var& input, nn::Mode mode) const;
    GaussianParams head_params(const nn::Conv2d& head, const Var& ctx) const;

    GeneratorConfig cfg_;
    mutable std::vector<nn::ConvBlock> prior_enc_;
    mutable std::vector<nn::ConvBlock> post_enc_;
    std::vector<nn::Conv2d> prior_head_;
    std::vector<nn::Conv2d> post_head_;
    mutable std::vector<nn::ConvBlock> dec_;
    nn::Conv2d out_;
};

/// Total KL over the hierarchy, per sample (summed over elements, averaged
/// over the batch).
Var hierarchy_kl(const LatentHierarchy& h);

struct DiscriminatorConfig {
    int width = 8;
    int layers = 5;
    int num_labels = 4;
    int num_classes = 2;
};

struct DiscOutput {
    Var adv;        // [B,1,1,1] real/fake logit
    Var cls;        // [B,C,1,1] class logits
};

/// Strided convolutional encoder over the (image, mask) channel stack with
/// a real/fake head and an auxiliary class head.
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const DiscriminatorConfig& cfg, Rng& rng);
    DiscOutput forward(const Var& image, const Var& mask) const;
    void collect(nn::ParameterSet& ps, const std::string& prefix = "disc");
    const DiscriminatorConfig& config() const { return cfg_; }

private:
    DiscriminatorConfig cfg_;
    std::vector<nn::Conv2d> enc_;
    nn::Linear adv_;
    nn::Linear cls_;
};

struct AdversarialLoss {
    Var d;  // -[log D(real) + log(1 - D(fake))], batch mean
    Var g;  // -log D(fake), batch mean
};
AdversarialLoss adversarial_loss(const Var& real_logits, const Var& fake_logits);
/// -log D_class(c | x), batch mean.
Var classification_loss(const Var& class_logits, std::span<const int> cond);
/// Soft-target pixelwise cross-entropy -sum_k t_k log p_k, mean over pixels.
Var soft_cross_entropy(const Var& logits, const Var& target);

struct LossTerms {
    double adv = 0;
    double cls = 0;
    double shape = 0;  // 1 - shape score
    double kl = 0;
    double recon = 0;
};
double total_generator_loss(const LossTerms& t, const GeneratorConfig& cfg);
Var total_generator_loss(const Var& adv, const Var& cls, const Var& shape, const Var& kl, const Var& recon,
                         const GeneratorConfig& cfg);

struct GanConfig {
    GeneratorConfig gen;
    stn::StnConfig stn;
    DiscriminatorConfig disc;
    int steps = 300;
    std::uint64_t seed = 0;
    int height = 0;  // training image dims, fixed by the first training call
    int width = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static GanConfig from_json(const nlohmann::json& j);
    std::uint64_t hash() const;
};

struct TrainState {
    long step = 0;
    std::uint64_t seed = 0;
    std::vector<double> adv, cls, shape, kl, recon, total;
    std::vector<double> d_loss, d_real_acc, d_fake_acc;

    void write_csv(const std::filesystem::path& path) const;
};

/// Trained models.
struct GeoGan {
    GanConfig config;
    stn::SpatialTransformer stn;
    Generator generator;
    Discriminator disc;

    GeoGan() = default;
    explicit GeoGan(const GanConfig& cfg);

    void save(const std::filesystem::path& dir) const;
    static GeoGan load(const std::filesystem::path& dir);
};

struct Synthesis {
    Image image;
    LabelMap mask;
    stn::AffineTransform affine;
    LatentHierarchy latents;
};

/// One synthetic pair from a base sample: A drawn from the STN, x' the
/// warped base image, s' the generator's mask refined from the warped base
/// mask with prior latents.
Synthesis synthesize(const GeoGan& models, const ImageSample& base, const stn::TargetCondition& cond, Rng& rng);

/// Alternating training; throws GanError on a non-finite loss or invalid
/// data. The shape prior is only read.
TrainState train_geogan(GeoGan& models, std::span<const ImageSample> data, const shape::ShapePriorModel& prior,
                        int steps);
GeoGan train_geogan(std::span<const ImageSample> data, const shape::ShapePriorModel& prior, const GanConfig& cfg,
                    TrainState* state = nullptr);

/// 1-D latent model z ~ N(0,1), x | z ~ N(a z + b, s^2), used to check the
/// evidence lower bound.
struct ToyLatentModel {
    double a = 1.0;
    double b = 0.0;
    double s = 1.0;

    double log_likelihood(double x, double z) const;
    double log_evidence(double x) const;
    /// Closed form for q = N(m, v^2).
    double elbo(double x, double m, double v) const;
    /// log (1/n sum p(x, z_i) / q(z_i)), z_i ~ q.
    double log_evidence_is(double x, double m, double v, int samples, Rng& rng) const;
};

}  // namespace geogan::gan
