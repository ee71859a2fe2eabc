#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geogan/autograd.hpp"
#include "geogan/random.hpp"

namespace geogan::nn {

using ag::Var;

/// Named view over a model's trainable parameters and persistent buffers.
struct ParameterSet {
    std::vector<std::pair<std::string, Var>> params;
    std::vector<std::pair<std::string, Tensor*>> buffers;

    void add(const std::string& name, const Var& v) { params.emplace_back(name, v); }
    void add_buffer(const std::string& name, Tensor* t) { buffers.emplace_back(name, t); }
    std::size_t parameter_count() const;
    void zero_grad();
    /// Value snapshot of every parameter and buffer, in registration order.
    std::vector<Tensor> snapshot() const;
};

enum class Mode { Train, Eval };

struct Conv2d {
    Var weight;
    Var bias;
    int stride = 1;
    int pad = 1;

    Conv2d() = default;
    Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, bool with_bias = true);
    Var operator()(const Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }
    void collect(ParameterSet& ps, const std::string& prefix) const;
    void zero();
};

struct Linear {
    Var weight;
    Var bias;

    Linear() = default;
    Linear(int in, int out, Rng& rng);
    Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
    void collect(ParameterSet& ps, const std::string& prefix) const;
    /// Zero weights and bias, so the layer initially emits its bias only.
    void zero();
};

struct BatchNorm2d {
    Var gamma;
    Var beta;
    Tensor running_mean;
    Tensor running_var;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int channels);
    Var operator()(const Var& x, Mode mode) {
        return ag::batch_norm(x, gamma, beta, running_mean, running_var, mode == Mode::Train);
    }
    void collect(ParameterSet& ps, const std::string& prefix);
};

/// conv3x3 -> [batchnorm] -> leaky relu
struct ConvBlock {
    Conv2d conv;
    BatchNorm2d bn;
    bool use_bn = true;

    ConvBlock() = default;
    ConvBlock(int in, int out, int stride, bool use_bn, Rng& rng);
    Var operator()(const Var& x, Mode mode);
    void collect(ParameterSet& ps, const std::string& prefix);
};

/// Adam with the usual bias correction.
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(ParameterSet params, Options opts);
    void step();
    void zero_grad() { params_.zero_grad(); }
    long steps() const { return t_; }
    const Options& options() const { return opts_; }

private:
    ParameterSet params_;
    Options opts_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    long t_ = 0;
};

/// Largest absolute elementwise difference between two snapshots.
double max_abs_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b);

/// Checkpoint: magic, JSON header (metadata + tensor table), raw doubles.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& ps, const nlohmann::json& meta);
/// Loads tensors into ps (names and shapes must match) and returns the metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet& ps);
/// Metadata only, without touching the tensors.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

}  // namespace geogan::nn
