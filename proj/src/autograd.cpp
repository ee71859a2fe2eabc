#include "geogan/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace geogan::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward_fn = std::move(fn);
    }
    return Var::from_node(std::move(node));
}

// Parent accessor used inside backward closures.
Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() + " vs " +
                                    b.value().shape_str());
    }
}

template <typename F, typename G>
Var unary(const Var& a, F f, G dfdx) {
    Tensor out = Tensor::zeros_like(a.value());
    const Tensor& in = a.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(std::move(out), {a}, [dfdx](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(p.value[i], self.value[i]);
    });
}

// cols layout: rows (ci, kh, kw), columns (sample, oh, ow) for samples [n0, n1).
void im2col(const Tensor& x, int n0, int n1, int k, int stride, int pad, int ho, int wo, double* cols) {
    const int ci = x.c(), h = x.h(), w = x.w();
    const std::size_t ncols = static_cast<std::size_t>(n1 - n0) * ho * wo;
    for (int c = 0; c < ci; ++c) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                double* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * ncols;
                std::size_t col = 0;
                for (int n = n0; n < n1; ++n) {
                    const double* src = x.data() + x.index(n, c, 0, 0);
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride - pad + kh;
                        if (ih < 0 || ih >= h) {
                            std::fill(row + col, row + col + wo, 0.0);
                            col += wo;
                            continue;
                        }
                        for (int ow = 0; ow < wo; ++ow, ++col) {
                            const int iw = ow * stride - pad + kw;
                            row[col] = (iw >= 0 && iw < w) ? src[ih * w + iw] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, int n0, int n1, int k, int stride, int pad, int ho, int wo, Tensor& dx) {
    const int ci = dx.c(), h = dx.h(), w = dx.w();
    const std::size_t ncols = static_cast<std::size_t>(n1 - n0) * ho * wo;
    for (int c = 0; c < ci; ++c) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const double* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) * ncols;
                std::size_t col = 0;
                for (int n = n0; n < n1; ++n) {
                    double* dst = dx.data() + dx.index(n, c, 0, 0);
                    for (int oh = 0; oh < ho; ++oh) {
                        const int ih = oh * stride - pad + kh;
                        if (ih < 0 || ih >= h) {
                            col += wo;
                            continue;
                        }
                        for (int ow = 0; ow < wo; ++ow, ++col) {
                            const int iw = ow * stride - pad + kw;
                            if (iw >= 0 && iw < w) dst[ih * w + iw] += row[col];
                        }
                    }
                }
            }
        }
    }
}

// Batch chunking keeps im2col buffers bounded.
int chunk_samples(int n, int ho, int wo) {
    constexpr int kMaxCols = 32768;
    return std::max(1, std::min(n, kMaxCols / std::max(1, ho * wo)));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_ && node_->has_grad) node_->grad.fill(0.0);
}

void Var::backward() const {
    if (node_->value.size() != 1) {
        throw std::logic_error("backward() requires a single-element output");
    }
    if (!node_->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    out.add_inplace(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& p = parent(self, k);
            if (p.requires_grad) p.grad_buffer().add_inplace(self.grad);
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) pa.grad_buffer().add_inplace(self.grad);
        if (pb.requires_grad) {
            Tensor& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            Tensor& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(const Var& a) {
    return unary(
        a, [](double x) { return x > 30 ? x : std::log1p(std::exp(x)); },
        [](double x, double) {
            if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------- reductions

Var sum(const Var& a) {
    return make_result(Tensor::scalar(a.value().sum()), {a}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const double s = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(std::max<std::size_t>(1, a.value().size()));
    return scale(sum(a), 1.0 / n);
}

Var sum_scalars(std::span<const Var> terms) {
    if (terms.empty()) return Var(Tensor::scalar(0.0));
    double total = 0.0;
    std::vector<Var> inputs(terms.begin(), terms.end());
    for (const auto& t : inputs) total += t.item();
    return make_result(Tensor::scalar(total), inputs, [](Node& self) {
        for (auto& p : self.parents) {
            if (p->requires_grad) p->grad_buffer()[0] += self.grad[0];
        }
    });
}

// ---------------------------------------------------------------- shape

Var reshape(const Var& a, int n, int c, int h, int w) {
    const auto shape = a.shape();
    return make_result(a.value().reshaped(n, c, h, w), {a}, [shape](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var flatten(const Var& a) {
    const auto& s = a.shape();
    return reshape(a, s[0], s[1] * s[2] * s[3], 1, 1);
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const auto& s0 = parts.front().shape();
    int channels = 0;
    for (const auto& p : parts) {
        if (p.shape()[0] != s0[0] || p.shape()[2] != s0[2] || p.shape()[3] != s0[3]) {
            throw std::invalid_argument("concat_channels: incompatible shapes " + parts.front().value().shape_str() +
                                        " and " + p.value().shape_str());
        }
        channels += p.shape()[1];
    }
    Tensor out(s0[0], channels, s0[2], s0[3]);
    const std::size_t plane = out.plane();
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const int pc = p.shape()[1];
        for (int n = 0; n < s0[0]; ++n) {
            std::copy_n(p.value().data() + p.value().index(n, 0, 0, 0), pc * plane, out.data() + out.index(n, off, 0, 0));
        }
        off += pc;
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_result(std::move(out), inputs, [offsets, plane](Node& self) {
        const int nb = self.value.n();
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node& p = *self.parents[k];
            if (!p.requires_grad) continue;
            Tensor& g = p.grad_buffer();
            const int pc = g.c();
            for (int n = 0; n < nb; ++n) {
                const double* src = self.grad.data() + self.grad.index(n, offsets[k], 0, 0);
                double* dst = g.data() + g.index(n, 0, 0, 0);
                for (std::size_t i = 0; i < pc * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

Var slice_channels(const Var& a, int begin, int end) {
    const auto& s = a.shape();
    if (begin < 0 || end > s[1] || begin >= end) throw std::out_of_range("slice_channels: bad range");
    Tensor out(s[0], end - begin, s[2], s[3]);
    const std::size_t plane = out.plane();
    for (int n = 0; n < s[0]; ++n) {
        std::copy_n(a.value().data() + a.value().index(n, begin, 0, 0), (end - begin) * plane,
                    out.data() + out.index(n, 0, 0, 0));
    }
    return make_result(std::move(out), {a}, [begin, plane](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const int cnt = self.value.c();
        for (int n = 0; n < self.value.n(); ++n) {
            const double* src = self.grad.data() + self.grad.index(n, 0, 0, 0);
            double* dst = g.data() + g.index(n, begin, 0, 0);
            for (std::size_t i = 0; i < cnt * plane; ++i) dst[i] += src[i];
        }
    });
}

Var concat_batch(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_batch: no inputs");
    std::vector<Tensor> values;
    for (const auto& p : parts) values.push_back(p.value());
    Tensor out = stack_batch(values);
    std::vector<Var> inputs(parts.begin(), parts.end());
    return make_result(std::move(out), inputs, [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
            const std::size_t cnt = p->value.size();
            if (p->requires_grad) {
                Tensor& g = p->grad_buffer();
                for (std::size_t i = 0; i < cnt; ++i) g[i] += self.grad[off + i];
            }
            off += cnt;
        }
    });
}

Var slice_batch(const Var& a, int begin, int end) {
    Tensor out = a.value().batch_slice(begin, end);
    const std::size_t per = out.size() / std::max(1, end - begin);
    return make_result(std::move(out), {a}, [begin, per](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const std::size_t off = begin * per;
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
    });
}

Var broadcast_spatial(const Var& a, int h, int w) {
    const auto& s = a.shape();
    if (s[2] != 1 || s[3] != 1) throw std::invalid_argument("broadcast_spatial: input must be [N,C,1,1]");
    Tensor out(s[0], s[1], h, w);
    const std::size_t plane = out.plane();
    for (int n = 0; n < s[0]; ++n) {
        for (int c = 0; c < s[1]; ++c) {
            std::fill_n(out.data() + out.index(n, c, 0, 0), plane, a.value().at(n, c, 0, 0));
        }
    }
    return make_result(std::move(out), {a}, [plane](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double* src = self.grad.data() + i * plane;
            double acc = 0.0;
            for (std::size_t j = 0; j < plane; ++j) acc += src[j];
            g[i] += acc;
        }
    });
}

// ---------------------------------------------------------------- layers

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    const int co = ws[0], k = ws[2];
    if (ws[1] != xs[1] || ws[2] != ws[3]) {
        throw std::invalid_argument("conv2d: weight " + weight.value().shape_str() + " incompatible with input " +
                                    x.value().shape_str());
    }
    const int ho = (xs[2] + 2 * pad - k) / stride + 1;
    const int wo = (xs[3] + 2 * pad - k) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output for input " + x.value().shape_str());
    const int nb = xs[0];
    const int kdim = xs[1] * k * k;
    Tensor out(nb, co, ho, wo);
    const int chunk = chunk_samples(nb, ho, wo);
    std::vector<double> cols;
    std::vector<double> res;
    CMapMat wmat(weight.value().data(), co, kdim);
    for (int n0 = 0; n0 < nb; n0 += chunk) {
        const int n1 = std::min(nb, n0 + chunk);
        const int ncols = (n1 - n0) * ho * wo;
        cols.resize(static_cast<std::size_t>(kdim) * ncols);
        res.resize(static_cast<std::size_t>(co) * ncols);
        im2col(x.value(), n0, n1, k, stride, pad, ho, wo, cols.data());
        MapMat rmat(res.data(), co, ncols);
        rmat.noalias() = wmat * CMapMat(cols.data(), kdim, ncols);
        for (int n = n0; n < n1; ++n) {
            for (int c = 0; c < co; ++c) {
                const double b = bias.defined() ? bias.value()[c] : 0.0;
                const double* src = res.data() + static_cast<std::size_t>(c) * ncols + (n - n0) * ho * wo;
                double* dst = out.data() + out.index(n, c, 0, 0);
                for (int i = 0; i < ho * wo; ++i) dst[i] = src[i] + b;
            }
        }
    }
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_result(std::move(out), inputs, [=](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        const int ci = px.value.c();
        std::vector<double> cols_b;
        std::vector<double> gout;
        CMapMat wm(pw.value.data(), co, kdim);
        for (int n0 = 0; n0 < nb; n0 += chunk) {
            const int n1 = std::min(nb, n0 + chunk);
            const int ncols = (n1 - n0) * ho * wo;
            gout.resize(static_cast<std::size_t>(co) * ncols);
            for (int n = n0; n < n1; ++n) {
                for (int c = 0; c < co; ++c) {
                    const double* src = self.grad.data() + self.grad.index(n, c, 0, 0);
                    std::copy_n(src, ho * wo, gout.data() + static_cast<std::size_t>(c) * ncols + (n - n0) * ho * wo);
                }
            }
            CMapMat gm(gout.data(), co, ncols);
            if (pw.requires_grad) {
                cols_b.resize(static_cast<std::size_t>(kdim) * ncols);
                im2col(px.value, n0, n1, k, stride, pad, ho, wo, cols_b.data());
                MapMat gw(pw.grad_buffer().data(), co, kdim);
                gw.noalias() += gm * CMapMat(cols_b.data(), kdim, ncols).transpose();
            }
            if (px.requires_grad) {
                cols_b.resize(static_cast<std::size_t>(kdim) * ncols);
                MapMat dcols(cols_b.data(), kdim, ncols);
                dcols.noalias() = wm.transpose() * gm;
                col2im(cols_b.data(), n0, n1, k, stride, pad, ho, wo, px.grad_buffer());
            }
        }
        (void)ci;
        if (has_bias) {
            Node& pb = parent(self, 2);
            if (pb.requires_grad) {
                Tensor& gb = pb.grad_buffer();
                for (int n = 0; n < nb; ++n) {
                    for (int c = 0; c < co; ++c) {
                        const double* src = self.grad.data() + self.grad.index(n, c, 0, 0);
                        double acc = 0.0;
                        for (int i = 0; i < ho * wo; ++i) acc += src[i];
                        gb[c] += acc;
                    }
                }
            }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const int nb = x.shape()[0];
    const int in = static_cast<int>(x.value().size() / std::max(1, nb));
    const int out_dim = weight.shape()[0];
    if (weight.shape()[1] != in) {
        throw std::invalid_argument("linear: expected " + std::to_string(weight.shape()[1]) + " inputs, got " +
                                    std::to_string(in));
    }
    Tensor out(nb, out_dim, 1, 1);
    CMapMat xm(x.value().data(), nb, in);
    CMapMat wm(weight.value().data(), out_dim, in);
    MapMat om(out.data(), nb, out_dim);
    om.noalias() = xm * wm.transpose();
    if (bias.defined()) {
        for (int n = 0; n < nb; ++n)
            for (int o = 0; o < out_dim; ++o) om(n, o) += bias.value()[o];
    }
    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_result(std::move(out), inputs, [=](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        CMapMat gm(self.grad.data(), nb, out_dim);
        if (px.requires_grad) {
            MapMat gx(px.grad_buffer().data(), nb, in);
            gx.noalias() += gm * CMapMat(pw.value.data(), out_dim, in);
        }
        if (pw.requires_grad) {
            MapMat gw(pw.grad_buffer().data(), out_dim, in);
            gw.noalias() += gm.transpose() * CMapMat(px.value.data(), nb, in);
        }
        if (has_bias) {
            Node& pb = parent(self, 2);
            if (pb.requires_grad) {
                Tensor& gb = pb.grad_buffer();
                for (int n = 0; n < nb; ++n)
                    for (int o = 0; o < out_dim; ++o) gb[o] += gm(n, o);
            }
        }
    });
}

Var upsample2x(const Var& x) {
    const auto& s = x.shape();
    Tensor out(s[0], s[1], s[2] * 2, s[3] * 2);
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
            for (int i = 0; i < s[2] * 2; ++i)
                for (int j = 0; j < s[3] * 2; ++j) out.at(n, c, i, j) = x.value().at(n, c, i / 2, j / 2);
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const auto& s2 = self.value.shape();
        for (int n = 0; n < s2[0]; ++n)
            for (int c = 0; c < s2[1]; ++c)
                for (int i = 0; i < s2[2]; ++i)
                    for (int j = 0; j < s2[3]; ++j) g.at(n, c, i / 2, j / 2) += self.grad.at(n, c, i, j);
    });
}

Var avg_pool2(const Var& x) {
    const auto& s = x.shape();
    if (s[2] % 2 || s[3] % 2) throw std::invalid_argument("avg_pool2: odd spatial size " + x.value().shape_str());
    Tensor out(s[0], s[1], s[2] / 2, s[3] / 2);
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
            for (int i = 0; i < s[2]; ++i)
                for (int j = 0; j < s[3]; ++j) out.at(n, c, i / 2, j / 2) += 0.25 * x.value().at(n, c, i, j);
    return make_result(std::move(out), {x}, [](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const auto& s1 = g.shape();
        for (int n = 0; n < s1[0]; ++n)
            for (int c = 0; c < s1[1]; ++c)
                for (int i = 0; i < s1[2]; ++i)
                    for (int j = 0; j < s1[3]; ++j) g.at(n, c, i, j) += 0.25 * self.grad.at(n, c, i / 2, j / 2);
    });
}

Var block_avg_pool(const Var& x, int kh, int kw) {
    const auto& s = x.shape();
    if (kh < 1 || kw < 1 || s[2] % kh || s[3] % kw) {
        throw std::invalid_argument("block_avg_pool: block does not tile " + x.value().shape_str());
    }
    const double inv = 1.0 / (kh * kw);
    Tensor out(s[0], s[1], s[2] / kh, s[3] / kw);
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c)
            for (int i = 0; i < s[2]; ++i)
                for (int j = 0; j < s[3]; ++j) out.at(n, c, i / kh, j / kw) += inv * x.value().at(n, c, i, j);
    return make_result(std::move(out), {x}, [kh, kw, inv](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const auto& s1 = g.shape();
        for (int n = 0; n < s1[0]; ++n)
            for (int c = 0; c < s1[1]; ++c)
                for (int i = 0; i < s1[2]; ++i)
                    for (int j = 0; j < s1[3]; ++j) g.at(n, c, i, j) += inv * self.grad.at(n, c, i / kh, j / kw);
    });
}

Var global_avg_pool(const Var& x) {
    const auto& s = x.shape();
    Tensor out(s[0], s[1], 1, 1);
    const std::size_t plane = x.value().plane();
    for (int n = 0; n < s[0]; ++n)
        for (int c = 0; c < s[1]; ++c) {
            const double* src = x.value().data() + x.value().index(n, c, 0, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            out.at(n, c, 0, 0) = acc / static_cast<double>(plane);
        }
    return make_result(std::move(out), {x}, [plane](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = self.grad[i] / static_cast<double>(plane);
            double* dst = g.data() + i * plane;
            for (std::size_t j = 0; j < plane; ++j) dst[j] += v;
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, double momentum, double eps) {
    const auto& s = x.shape();
    const int nb = s[0], ch = s[1];
    const std::size_t plane = x.value().plane();
    const double count = static_cast<double>(nb) * static_cast<double>(plane);
    std::vector<double> mu(ch), inv_std(ch);
    for (int c = 0; c < ch; ++c) {
        if (training) {
            double m = 0.0;
            for (int n = 0; n < nb; ++n) {
                const double* src = x.value().data() + x.value().index(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) m += src[i];
            }
            m /= count;
            double v = 0.0;
            for (int n = 0; n < nb; ++n) {
                const double* src = x.value().data() + x.value().index(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) v += (src[i] - m) * (src[i] - m);
            }
            v /= count;
            mu[c] = m;
            inv_std[c] = 1.0 / std::sqrt(v + eps);
            if (grad_enabled()) {
                const double unbiased = count > 1 ? v * count / (count - 1) : v;
                running_mean[c] = (1 - momentum) * running_mean[c] + momentum * m;
                running_var[c] = (1 - momentum) * running_var[c] + momentum * unbiased;
            }
        } else {
            mu[c] = running_mean[c];
            inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
        }
    }
    Tensor xhat = Tensor::zeros_like(x.value());
    Tensor out = Tensor::zeros_like(x.value());
    for (int n = 0; n < nb; ++n)
        for (int c = 0; c < ch; ++c) {
            const std::size_t off = x.value().index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                xhat[off + i] = (x.value()[off + i] - mu[c]) * inv_std[c];
                out[off + i] = gamma.value()[c] * xhat[off + i] + beta.value()[c];
            }
        }
    return make_result(std::move(out), {x, gamma, beta}, [=, xhat = std::move(xhat)](Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        for (int c = 0; c < ch; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (int n = 0; n < nb; ++n) {
                const std::size_t off = self.grad.index(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    sum_g += self.grad[off + i];
                    sum_gx += self.grad[off + i] * xhat[off + i];
                }
            }
            if (pg.requires_grad) pg.grad_buffer()[c] += sum_gx;
            if (pb.requires_grad) pb.grad_buffer()[c] += sum_g;
            if (!px.requires_grad) continue;
            Tensor& gx = px.grad_buffer();
            const double gam = pg.value[c];
            for (int n = 0; n < nb; ++n) {
                const std::size_t off = self.grad.index(n, c, 0, 0);
                for (std::size_t i = 0; i < plane; ++i) {
                    if (training) {
                        gx[off + i] += gam * inv_std[c] / count *
                                       (count * self.grad[off + i] - sum_g - xhat[off + i] * sum_gx);
                    } else {
                        gx[off + i] += gam * inv_std[c] * self.grad[off + i];
                    }
                }
            }
        }
    });
}

Var softmax_channels(const Var& x) {
    const auto& s = x.shape();
    const std::size_t plane = x.value().plane();
    Tensor out = Tensor::zeros_like(x.value());
    for (int n = 0; n < s[0]; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            double mx = -1e300;
            for (int c = 0; c < s[1]; ++c) mx = std::max(mx, x.value()[x.value().index(n, c, 0, 0) + p]);
            double z = 0.0;
            for (int c = 0; c < s[1]; ++c) {
                const std::size_t i = x.value().index(n, c, 0, 0) + p;
                out[i] = std::exp(x.value()[i] - mx);
                z += out[i];
            }
            for (int c = 0; c < s[1]; ++c) out[out.index(n, c, 0, 0) + p] /= z;
        }
    return make_result(std::move(out), {x}, [plane](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const auto& sh = self.value.shape();
        for (int n = 0; n < sh[0]; ++n)
            for (std::size_t q = 0; q < plane; ++q) {
                double dot = 0.0;
                for (int c = 0; c < sh[1]; ++c) {
                    const std::size_t i = self.value.index(n, c, 0, 0) + q;
                    dot += self.grad[i] * self.value[i];
                }
                for (int c = 0; c < sh[1]; ++c) {
                    const std::size_t i = self.value.index(n, c, 0, 0) + q;
                    g[i] += self.value[i] * (self.grad[i] - dot);
                }
            }
    });
}

Var log_softmax_channels(const Var& x) {
    const auto& s = x.shape();
    const std::size_t plane = x.value().plane();
    Tensor out = Tensor::zeros_like(x.value());
    for (int n = 0; n < s[0]; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            double mx = -1e300;
            for (int c = 0; c < s[1]; ++c) mx = std::max(mx, x.value()[x.value().index(n, c, 0, 0) + p]);
            double z = 0.0;
            for (int c = 0; c < s[1]; ++c) z += std::exp(x.value()[x.value().index(n, c, 0, 0) + p] - mx);
            const double lz = mx + std::log(z);
            for (int c = 0; c < s[1]; ++c) {
                const std::size_t i = x.value().index(n, c, 0, 0) + p;
                out[i] = x.value()[i] - lz;
            }
        }
    return make_result(std::move(out), {x}, [plane](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        const auto& sh = self.value.shape();
        for (int n = 0; n < sh[0]; ++n)
            for (std::size_t q = 0; q < plane; ++q) {
                double gs = 0.0;
                for (int c = 0; c < sh[1]; ++c) gs += self.grad[self.value.index(n, c, 0, 0) + q];
                for (int c = 0; c < sh[1]; ++c) {
                    const std::size_t i = self.value.index(n, c, 0, 0) + q;
                    g[i] += self.grad[i] - std::exp(self.value[i]) * gs;
                }
            }
    });
}

Var affine_warp(const Var& x, const Var& theta, std::span<const double> fill) {
    const auto& s = x.shape();
    const int nb = s[0], ch = s[1], h = s[2], w = s[3];
    if (theta.shape()[0] != nb || theta.value().size() != static_cast<std::size_t>(nb) * 6) {
        throw std::invalid_argument("affine_warp: theta must be [N,6,1,1], got " + theta.value().shape_str());
    }
    if (fill.size() != static_cast<std::size_t>(ch)) {
        throw std::invalid_argument("affine_warp: fill needs one value per channel");
    }
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double rx = cy > 0 ? cx / cy : 0.0;  // x-extent per unit normalized y
    const double ry = cx > 0 ? cy / cx : 0.0;
    std::vector<double> fill_v(fill.begin(), fill.end());
    Tensor out(nb, ch, h, w);
    const Tensor& xv = x.value();
    const Tensor& tv = theta.value();
    auto tap = [&](int n, int c, int yy, int xx) {
        return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? xv.at(n, c, yy, xx) : fill_v[c];
    };
    for (int n = 0; n < nb; ++n) {
        const double* a = tv.data() + n * 6;
        for (int i = 0; i < h; ++i) {
            const double v = i - cy;
            for (int j = 0; j < w; ++j) {
                const double u = j - cx;
                const double sx = a[0] * u + a[1] * rx * v + a[2] * cx + cx;
                const double sy = a[3] * ry * u + a[4] * v + a[5] * cy + cy;
                const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
                const double fx = sx - fx0, fy = sy - fy0;
                for (int c = 0; c < ch; ++c) {
                    out.at(n, c, i, j) = (1 - fy) * ((1 - fx) * tap(n, c, y0, x0) + fx * tap(n, c, y0, x0 + 1)) +
                                         fy * ((1 - fx) * tap(n, c, y0 + 1, x0) + fx * tap(n, c, y0 + 1, x0 + 1));
                }
            }
        }
    }
    return make_result(std::move(out), {x, theta}, [=](Node& self) {
        Node& px = parent(self, 0);
        Node& pt = parent(self, 1);
        const Tensor& xin = px.value;
        auto tap_b = [&](int n, int c, int yy, int xx) {
            return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? xin.at(n, c, yy, xx) : fill_v[c];
        };
        Tensor* gx = px.requires_grad ? &px.grad_buffer() : nullptr;
        Tensor* gt = pt.requires_grad ? &pt.grad_buffer() : nullptr;
        auto scatter = [&](int n, int c, int yy, int xx, double g) {
            if (gx && yy >= 0 && yy < h && xx >= 0 && xx < w) gx->at(n, c, yy, xx) += g;
        };
        for (int n = 0; n < nb; ++n) {
            const double* a = pt.value.data() + n * 6;
            double ga[6] = {0, 0, 0, 0, 0, 0};
            for (int i = 0; i < h; ++i) {
                const double v = i - cy;
                for (int j = 0; j < w; ++j) {
                    const double u = j - cx;
                    const double sx = a[0] * u + a[1] * rx * v + a[2] * cx + cx;
                    const double sy = a[3] * ry * u + a[4] * v + a[5] * cy + cy;
                    const double fx0 = std::floor(sx), fy0 = std::floor(sy);
                    const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
                    const double fx = sx - fx0, fy = sy - fy0;
                    double dsx = 0.0, dsy = 0.0;
                    for (int c = 0; c < ch; ++c) {
                        const double g = self.grad.at(n, c, i, j);
                        if (g == 0.0) continue;
                        const double v00 = tap_b(n, c, y0, x0), v01 = tap_b(n, c, y0, x0 + 1);
                        const double v10 = tap_b(n, c, y0 + 1, x0), v11 = tap_b(n, c, y0 + 1, x0 + 1);
                        dsx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                        dsy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                        scatter(n, c, y0, x0, g * (1 - fy) * (1 - fx));
                        scatter(n, c, y0, x0 + 1, g * (1 - fy) * fx);
                        scatter(n, c, y0 + 1, x0, g * fy * (1 - fx));
                        scatter(n, c, y0 + 1, x0 + 1, g * fy * fx);
                    }
                    ga[0] += dsx * u;
                    ga[1] += dsx * rx * v;
                    ga[2] += dsx * cx;
                    ga[3] += dsy * ry * u;
                    ga[4] += dsy * v;
                    ga[5] += dsy * cy;
                }
            }
            if (gt) {
                for (int k = 0; k < 6; ++k) (*gt)[n * 6 + k] += ga[k];
            }
        }
    });
}

// ---------------------------------------------------------------- losses

Var bce_with_logits(const Var& logits, const Tensor& targets) {
    if (!logits.value().same_shape(targets)) throw std::invalid_argument("bce_with_logits: shape mismatch");
    const Tensor& z = logits.value();
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double zi = z[i];
        // log(1 + exp(-|z|)) + max(z, 0) - z * t
        total += std::log1p(std::exp(-std::abs(zi))) + std::max(zi, 0.0) - zi * targets[i];
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, z.size()));
    return make_result(Tensor::scalar(total / n), {logits}, [targets, n](Node& self) {
        Node& p = parent(self, 0);
        if (!p.requires_grad) return;
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double zi = p.value[i];
            const double sig = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
            g[i] += self.grad[0] * (sig - targets[i]) / n;
        }
    });
}

Var cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> class_weights) {
    const auto& s = logits.shape();
    const std::size_t plane = logits.value().plane();
    if (labels.size() != static_cast<std::size_t>(s[0]) * plane) {
        throw std::invalid_argument("cross_entropy: expected " + std::to_string(s[0] * plane) + " labels, got " +
                                    std::to_string(labels.size()));
    }
    std::vector<double> weights(class_weights.begin(), class_weights.end());
    if (weights.empty()) weights.assign(s[1], 1.0);
    if (weights.size() != static_cast<std::size_t>(s[1])) throw std::invalid_argument("cross_entropy: bad weights");
    std::vector<int> lab(labels.begin(), labels.end());
    const Tensor& z = logits.value();
    Tensor probs = Tensor::zeros_like(z);
    double total = 0.0, wsum = 0.0;
    for (int n = 0; n < s[0]; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            const int y = lab[n * plane + p];
            if (y < 0 || y >= s[1]) throw std::out_of_range("cross_entropy: label out of range");
            double mx = -1e300;
            for (int c = 0; c < s[1]; ++c) mx = std::max(mx, z[z.index(n, c, 0, 0) + p]);
            double zs = 0.0;
            for (int c = 0; c < s[1]; ++c) {
                const std::size_t i = z.index(n, c, 0, 0) + p;
                probs[i] = std::exp(z[i] - mx);
                zs += probs[i];
            }
            for (int c = 0; c < s[1]; ++c) probs[z.index(n, c, 0, 0) + p] /= zs;
            const double wy = weights[y];
            if (wy == 0.0) continue;
            total += wy * (mx + std::log(zs) - z[z.index(n, y, 0, 0) + p]);
            wsum += wy;
        }
    const double denom = wsum > 0 ? wsum : 1.0;
    return make_result(Tensor::scalar(total / denom), {logits},
                       [=, probs = std::move(probs), lab = std::move(lab)](Node& self) {
                           Node& p = parent(self, 0);
                           if (!p.requires_grad) return;
                           Tensor& g = p.grad_buffer();
                           const double go = self.grad[0] / denom;
                           for (int n = 0; n < s[0]; ++n)
                               for (std::size_t q = 0; q < plane; ++q) {
                                   const int y = lab[n * plane + q];
                                   const double wy = weights[y];
                                   if (wy == 0.0) continue;
                                   for (int c = 0; c < s[1]; ++c) {
                                       const std::size_t i = g.index(n, c, 0, 0) + q;
                                       g[i] += go * wy * (probs[i] - (c == y ? 1.0 : 0.0));
                                   }
                               }
                       });
}

Var gaussian_kl(const Var& mu_q, const Var& sigma_q, const Var& mu_p, const Var& sigma_p) {
    require_same_shape(mu_q, sigma_q, "gaussian_kl");
    require_same_shape(mu_q, mu_p, "gaussian_kl");
    require_same_shape(mu_q, sigma_p, "gaussian_kl");
    // KL = log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
    double total = 0.0;
    const std::size_t n = mu_q.value().size();
    for (std::size_t i = 0; i < n; ++i) {
        const double mq = mu_q.value()[i], sq = sigma_q.value()[i];
        const double mp = mu_p.value()[i], sp = sigma_p.value()[i];
        const double d = mq - mp;
        total += std::log(sp / sq) + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    return make_result(Tensor::scalar(total), {mu_q, sigma_q, mu_p, sigma_p}, [n](Node& self) {
        Node& pmq = parent(self, 0);
        Node& psq = parent(self, 1);
        Node& pmp = parent(self, 2);
        Node& psp = parent(self, 3);
        const double g = self.grad[0];
        for (std::size_t i = 0; i < n; ++i) {
            const double mq = pmq.value[i], sq = psq.value[i];
            const double mp = pmp.value[i], sp = psp.value[i];
            const double d = mq - mp;
            const double sp2 = sp * sp;
            if (pmq.requires_grad) pmq.grad_buffer()[i] += g * d / sp2;
            if (pmp.requires_grad) pmp.grad_buffer()[i] -= g * d / sp2;
            if (psq.requires_grad) psq.grad_buffer()[i] += g * (-1.0 / sq + sq / sp2);
            if (psp.requires_grad) psp.grad_buffer()[i] += g * (1.0 / sp - (sq * sq + d * d) / (sp2 * sp));
        }
    });
}

Var custom_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    return make_result(std::move(value), std::move(inputs), std::move(backward));
}

}  // namespace geogan::ag
