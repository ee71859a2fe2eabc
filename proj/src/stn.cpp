#include "geogan/stn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geogan/convert.hpp"

namespace geogan::stn {

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kSigmaFloor = 1e-3;

struct SquashJacobian {
    double a[6];
    double d[6][6];  // d a_i / d raw_j
};

SquashJacobian squash_with_jacobian(const double* u) {
    using B = AffineBounds;
    double t[6], dt[6];
    for (int k = 0; k < 6; ++k) {
        t[k] = std::tanh(u[k]);
        dt[k] = 1.0 - t[k] * t[k];
    }
    const double sx = std::exp2(B::kLogScale * t[0]);
    const double sy = std::exp2(B::kLogScale * t[1]);
    const double th = B::kMaxRotation * t[2];
    const double k = B::kMaxShear * t[3];
    const double c = std::cos(th), s = std::sin(th);

    SquashJacobian J{};
    J.a[0] = c * sx;
    J.a[1] = sy * (c * k - s);
    J.a[2] = B::kMaxTranslation * t[4];
    J.a[3] = s * sx;
    J.a[4] = sy * (s * k + c);
    J.a[5] = B::kMaxTranslation * t[5];

    // chain through the parameters
    const double dsx = sx * kLn2 * B::kLogScale * dt[0];
    const double dsy = sy * kLn2 * B::kLogScale * dt[1];
    const double dth = B::kMaxRotation * dt[2];
    const double dk = B::kMaxShear * dt[3];
    J.d[0][0] = c * dsx;
    J.d[0][2] = -s * sx * dth;
    J.d[1][1] = (c * k - s) * dsy;
    J.d[1][2] = sy * (-s * k - c) * dth;
    J.d[1][3] = sy * c * dk;
    J.d[2][4] = B::kMaxTranslation * dt[4];
    J.d[3][0] = s * dsx;
    J.d[3][2] = c * sx * dth;
    J.d[4][1] = (s * k + c) * dsy;
    J.d[4][2] = sy * (c * k - s) * dth;
    J.d[4][3] = sy * s * dk;
    J.d[5][5] = B::kMaxTranslation * dt[5];
    return J;
}

Tensor theta_tensor(const AffineTransform& t) {
    Tensor th(1, 6, 1, 1);
    for (int k = 0; k < 6; ++k) th[k] = t.a[k];
    return th;
}

}  // namespace

AffineTransform AffineTransform::inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-12) throw std::domain_error("AffineTransform::inverse: singular linear part");
    AffineTransform r;
    r.a[0] = a[4] / d;
    r.a[1] = -a[1] / d;
    r.a[3] = -a[3] / d;
    r.a[4] = a[0] / d;
    r.a[2] = -(r.a[0] * a[2] + r.a[1] * a[5]);
    r.a[5] = -(r.a[3] * a[2] + r.a[4] * a[5]);
    return r;
}

AffineTransform AffineTransform::compose(const AffineTransform& o) const {
    AffineTransform r;
    r.a[0] = a[0] * o.a[0] + a[1] * o.a[3];
    r.a[1] = a[0] * o.a[1] + a[1] * o.a[4];
    r.a[2] = a[0] * o.a[2] + a[1] * o.a[5] + a[2];
    r.a[3] = a[3] * o.a[0] + a[4] * o.a[3];
    r.a[4] = a[3] * o.a[1] + a[4] * o.a[4];
    r.a[5] = a[3] * o.a[2] + a[4] * o.a[5] + a[5];
    return r;
}

std::array<double, 2> AffineTransform::apply(double x, double y) const {
    return {a[0] * x + a[1] * y + a[2], a[3] * x + a[4] * y + a[5]};
}

nlohmann::json AffineTransform::to_json() const { return nlohmann::json(a); }

AffineParams squash(const std::array<double, 6>& raw) {
    using B = AffineBounds;
    AffineParams p;
    p.scale_x = std::exp2(B::kLogScale * std::tanh(raw[0]));
    p.scale_y = std::exp2(B::kLogScale * std::tanh(raw[1]));
    p.rotation = B::kMaxRotation * std::tanh(raw[2]);
    p.shear = B::kMaxShear * std::tanh(raw[3]);
    p.tx = B::kMaxTranslation * std::tanh(raw[4]);
    p.ty = B::kMaxTranslation * std::tanh(raw[5]);
    return p;
}

AffineTransform to_matrix(const AffineParams& p) {
    const double c = std::cos(p.rotation), s = std::sin(p.rotation);
    AffineTransform t;
    t.a = {c * p.scale_x, p.scale_y * (c * p.shear - s), p.tx, s * p.scale_x, p.scale_y * (s * p.shear + c), p.ty};
    return t;
}

AffineParams decompose(const AffineTransform& t) {
    AffineParams p;
    p.scale_x = std::hypot(t.a[0], t.a[3]);
    p.rotation = std::atan2(t.a[3], t.a[0]);
    const double c = std::cos(p.rotation), s = std::sin(p.rotation);
    p.scale_y = -s * t.a[1] + c * t.a[4];
    p.shear = (c * t.a[1] + s * t.a[4]) / p.scale_y;
    p.tx = t.a[2];
    p.ty = t.a[5];
    return p;
}

bool within_bounds(const AffineTransform& t, double tol) {
    using B = AffineBounds;
    const double d = t.det();
    const auto p = decompose(t);
    return d >= B::kMinDet - tol && d <= B::kMaxDet + tol && std::abs(p.tx) <= B::kMaxTranslation + tol &&
           std::abs(p.ty) <= B::kMaxTranslation + tol && std::abs(p.rotation) <= B::kMaxRotation + tol;
}

Var squash_affine(const Var& raw) {
    const auto& s = raw.shape();
    if (s[1] != 6 || s[2] != 1 || s[3] != 1) {
        throw std::invalid_argument("squash_affine: expected [N,6,1,1], got " + raw.value().shape_str());
    }
    const int nb = s[0];
    Tensor out(nb, 6, 1, 1);
    std::vector<SquashJacobian> jac(nb);
    for (int n = 0; n < nb; ++n) {
        jac[n] = squash_with_jacobian(raw.value().data() + n * 6);
        std::copy(jac[n].a, jac[n].a + 6, out.data() + n * 6);
    }
    return ag::custom_op(std::move(out), {raw}, [jac = std::move(jac), nb](ag::Node& self) {
        ag::Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        for (int n = 0; n < nb; ++n) {
            for (int j = 0; j < 6; ++j) {
                double acc = 0.0;
                for (int i = 0; i < 6; ++i) acc += self.grad[n * 6 + i] * jac[n].d[i][j];
                g[n * 6 + j] += acc;
            }
        }
    });
}

Image warp_image(const Image& img, const AffineTransform& t) {
    ag::NoGradGuard guard;
    const double fill = img.data.empty() ? 0.0 : *std::min_element(img.data.begin(), img.data.end());
    const std::array<double, 1> f{fill};
    const Var out = ag::affine_warp(Var(image_to_tensor(img)), Var(theta_tensor(t)), f);
    return tensor_to_image(out.value());
}

LabelMap warp_mask(const LabelMap& mask, const AffineTransform& t, int background) {
    const int h = mask.height, w = mask.width;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double rx = cy > 0 ? cx / cy : 0.0;
    const double ry = cx > 0 ? cy / cx : 0.0;
    const auto& a = t.a;
    LabelMap out(h, w, background);
    for (int i = 0; i < h; ++i) {
        const double v = i - cy;
        for (int j = 0; j < w; ++j) {
            const double u = j - cx;
            const double sx = a[0] * u + a[1] * rx * v + a[2] * cx + cx;
            const double sy = a[3] * ry * u + a[4] * v + a[5] * cy + cy;
            const int xi = static_cast<int>(std::floor(sx + 0.5));
            const int yi = static_cast<int>(std::floor(sy + 0.5));
            if (xi >= 0 && xi < w && yi >= 0 && yi < h) out(i, j) = mask(yi, xi);
        }
    }
    return out;
}

Var soft_warp_onehot(const Var& onehot, const Var& theta) {
    std::vector<double> fill(onehot.shape()[1], 0.0);
    fill[0] = 1.0;
    return ag::affine_warp(onehot, theta, fill);
}

TargetCondition TargetCondition::from_one_hot(std::span<const double> v) {
    if (v.size() != 2) throw std::invalid_argument("TargetCondition: expected a length-2 vector");
    const bool a = v[0] == 1.0 && v[1] == 0.0;
    const bool b = v[0] == 0.0 && v[1] == 1.0;
    if (!a && !b) throw std::invalid_argument("TargetCondition: exactly one entry must be 1");
    return TargetCondition{b ? 1 : 0};
}

std::array<double, 2> TargetCondition::one_hot() const {
    if (cls != 0 && cls != 1) throw std::invalid_argument("TargetCondition: class must be 0 or 1");
    return cls == 1 ? std::array<double, 2>{0, 1} : std::array<double, 2>{1, 0};
}

SpatialTransformer::SpatialTransformer(const StnConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w = cfg.width;
    enc_.emplace_back(cfg.num_labels, w, 3, 2, 1, rng);
    enc_.emplace_back(w, 2 * w, 3, 2, 1, rng);
    enc_.emplace_back(2 * w, 2 * w, 3, 2, 1, rng);
    fc_ = nn::Linear(2 * w + cfg.num_classes, cfg.hidden, rng);
    head_ = nn::Linear(cfg.hidden, 12, rng);
    head_.zero();
    const double b = std::log(std::expm1(std::max(cfg.init_sigma - kSigmaFloor, 1e-6)));
    for (int k = 6; k < 12; ++k) head_.bias.mutable_value()[k] = b;
}

StnOutput SpatialTransformer::forward(const Var& onehot, const Var& cond, const std::optional<Tensor>& eps) const {
    Var h = onehot;
    for (const auto& c : enc_) h = ag::leaky_relu(c(h));
    h = ag::global_avg_pool(h);
    const std::array<Var, 2> parts{h, cond};
    h = ag::leaky_relu(fc_(ag::concat_channels(parts)));
    const Var out = head_(h);
    StnOutput o;
    o.mu = ag::slice_channels(out, 0, 6);
    o.sigma = ag::add_scalar(ag::softplus(ag::slice_channels(out, 6, 12)), kSigmaFloor);
    if (eps) {
        if (eps->shape() != o.mu.shape()) throw std::invalid_argument("SpatialTransformer: eps must be [N,6,1,1]");
        o.raw = ag::add(o.mu, ag::mul(o.sigma, Var(*eps)));
    } else {
        o.raw = o.mu;
    }
    o.theta = squash_affine(o.raw);
    return o;
}

AffineTransform SpatialTransformer::predict_affine(const LabelMap& mask, const TargetCondition& cond) const {
    ag::NoGradGuard guard;
    const std::array<int, 1> cls{cond.cls};
    const auto o = forward(Var(mask_to_onehot(mask, cfg_.num_labels)), Var(condition_tensor(cls)), std::nullopt);
    return theta_at(o.theta.value(), 0);
}

AffineTransform SpatialTransformer::sample_affine(const LabelMap& mask, const TargetCondition& cond, Rng& rng) const {
    ag::NoGradGuard guard;
    const std::array<int, 1> cls{cond.cls};
    Tensor eps(1, 6, 1, 1);
    for (auto& e : eps.values()) e = rng.normal();
    const auto o = forward(Var(mask_to_onehot(mask, cfg_.num_labels)), Var(condition_tensor(cls)), eps);
    return theta_at(o.theta.value(), 0);
}

void SpatialTransformer::collect(nn::ParameterSet& ps, const std::string& prefix) {
    for (std::size_t i = 0; i < enc_.size(); ++i) enc_[i].collect(ps, prefix + ".enc" + std::to_string(i));
    fc_.collect(ps, prefix + ".fc");
    head_.collect(ps, prefix + ".head");
}

AffineTransform theta_at(const Tensor& theta, int n) {
    AffineTransform t;
    for (int k = 0; k < 6; ++k) t.a[k] = theta[static_cast<std::size_t>(n) * 6 + k];
    return t;
}

}  // namespace geogan::stn
