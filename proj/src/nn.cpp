#include "geogan/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace geogan::nn {

namespace {

constexpr char kMagic[8] = {'G', 'G', 'C', 'K', 'P', 'T', '0', '1'};

Tensor kaiming_uniform(int out, int in, int kh, int kw, Rng& rng) {
    Tensor t(out, in, kh, kw);
    const double fan_in = static_cast<double>(in) * kh * kw;
    const double bound = std::sqrt(6.0 / fan_in) / std::sqrt(1.0 + 0.2 * 0.2);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

std::size_t ParameterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : params) n += v.value().size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& [_, v] : params) v.zero_grad();
}

std::vector<Tensor> ParameterSet::snapshot() const {
    std::vector<Tensor> out;
    for (const auto& [_, v] : params) out.push_back(v.value());
    for (const auto& [_, b] : buffers) out.push_back(*b);
    return out;
}

Conv2d::Conv2d(int in, int out, int kernel, int stride_, int pad_, Rng& rng, bool with_bias)
    : weight(kaiming_uniform(out, in, kernel, kernel, rng), true), stride(stride_), pad(pad_) {
    if (with_bias) bias = Var(Tensor(1, out, 1, 1), true);
}

void Conv2d::collect(ParameterSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    if (bias.defined()) ps.add(prefix + ".bias", bias);
}

Linear::Linear(int in, int out, Rng& rng)
    : weight(kaiming_uniform(out, in, 1, 1, rng), true), bias(Tensor(1, out, 1, 1), true) {}

void Linear::collect(ParameterSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    ps.add(prefix + ".bias", bias);
}

void Conv2d::zero() {
    weight.mutable_value().fill(0.0);
    if (bias.defined()) bias.mutable_value().fill(0.0);
}

void Linear::zero() {
    weight.mutable_value().fill(0.0);
    bias.mutable_value().fill(0.0);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(Tensor(1, channels, 1, 1, 1.0), true),
      beta(Tensor(1, channels, 1, 1, 0.0), true),
      running_mean(1, channels, 1, 1, 0.0),
      running_var(1, channels, 1, 1, 1.0) {}

void BatchNorm2d::collect(ParameterSet& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
    ps.add_buffer(prefix + ".running_mean", &running_mean);
    ps.add_buffer(prefix + ".running_var", &running_var);
}

ConvBlock::ConvBlock(int in, int out, int stride, bool use_bn_, Rng& rng)
    : conv(in, out, 3, stride, 1, rng, !use_bn_), use_bn(use_bn_) {
    if (use_bn) bn = BatchNorm2d(out);
}

Var ConvBlock::operator()(const Var& x, Mode mode) {
    Var y = conv(x);
    if (use_bn) y = bn(y, mode);
    return ag::leaky_relu(y, 0.2);
}

void ConvBlock::collect(ParameterSet& ps, const std::string& prefix) {
    conv.collect(ps, prefix + ".conv");
    if (use_bn) bn.collect(ps, prefix + ".bn");
}

Adam::Adam(ParameterSet params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (const auto& [_, v] : params_.params) {
        m_.push_back(Tensor::zeros_like(v.value()));
        v_.push_back(Tensor::zeros_like(v.value()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.params.size(); ++k) {
        Var& p = params_.params[k].second;
        if (!p.has_grad()) continue;
        const Tensor& g = p.grad();
        Tensor& w = p.mutable_value();
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = opts_.beta1 * m[i] + (1 - opts_.beta1) * g[i];
            v[i] = opts_.beta2 * v[i] + (1 - opts_.beta2) * g[i] * g[i];
            w[i] -= opts_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opts_.eps);
        }
    }
}

double max_abs_diff(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: snapshot length mismatch");
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (!a[k].same_shape(b[k])) throw std::invalid_argument("max_abs_diff: shape mismatch");
        for (std::size_t i = 0; i < a[k].size(); ++i) worst = std::max(worst, std::abs(a[k][i] - b[k][i]));
    }
    return worst;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& ps, const nlohmann::json& meta) {
    nlohmann::json header;
    header["meta"] = meta;
    auto& table = header["tensors"];
    table = nlohmann::json::array();
    std::vector<const Tensor*> order;
    for (const auto& [name, v] : ps.params) {
        table.push_back({{"name", name}, {"shape", v.value().shape()}});
        order.push_back(&v.value());
    }
    for (const auto& [name, t] : ps.buffers) {
        table.push_back({{"name", name}, {"shape", t->shape()}});
        order.push_back(t);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const std::string text = header.dump();
    const auto len = static_cast<std::uint64_t>(text.size());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Tensor* t : order) {
        out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("short write on checkpoint " + path.string());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path) {
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("not a checkpoint file: " + path.string());
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    return nlohmann::json::parse(text);
}

}  // namespace

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return read_header(in, path).at("meta");
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet& ps) {
    std::ifstream in(path, std::ios::binary);
    const auto header = read_header(in, path);
    const auto& table = header.at("tensors");
    std::vector<std::pair<std::string, Tensor*>> targets;
    for (auto& [name, v] : ps.params) targets.emplace_back(name, &v.mutable_value());
    for (auto& [name, t] : ps.buffers) targets.emplace_back(name, t);
    if (table.size() != targets.size()) {
        throw std::runtime_error("checkpoint " + path.string() + " holds " + std::to_string(table.size()) +
                                 " tensors, model expects " + std::to_string(targets.size()));
    }
    for (std::size_t k = 0; k < targets.size(); ++k) {
        const auto& entry = table[k];
        const auto shape = entry.at("shape").get<Tensor::Shape>();
        if (entry.at("name").get<std::string>() != targets[k].first || shape != targets[k].second->shape()) {
            throw std::runtime_error("checkpoint tensor mismatch at " + targets[k].first);
        }
        in.read(reinterpret_cast<char*>(targets[k].second->data()),
                static_cast<std::streamsize>(targets[k].second->size() * sizeof(double)));
    }
    if (!in) throw std::runtime_error("truncated checkpoint " + path.string());
    return header.at("meta");
}

}  // namespace geogan::nn
