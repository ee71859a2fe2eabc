#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "geogan/tensor.hpp"

/// Minimal reverse-mode automatic differentiation over NCHW tensors.
///
/// A Var is a shared handle to a graph node. Ops record their parents and a
/// closure that pushes the node's gradient back to them. backward() on a
/// scalar walks the graph in reverse topological order. Graphs are released
/// when the last Var referring to them goes away.
namespace geogan::ag {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& grad_buffer() {
        if (!has_grad) {
            grad = Tensor::zeros_like(value);
            has_grad = true;
        }
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor::Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Gradient accumulated by the last backward(); zeros if none reached this node.
    const Tensor& grad() const { return node_->grad_buffer(); }
    bool has_grad() const { return node_->has_grad; }
    void zero_grad();

    /// Seeds d(this)/d(this) = 1. Only valid on single-element vars.
    void backward() const;

    /// A leaf holding the same value, cut from the graph.
    Var detach() const { return Var(node_->value, false); }

    double item() const { return node_->value.item(); }

    const std::shared_ptr<Node>& node() const { return node_; }
    static Var from_node(std::shared_ptr<Node> n) {
        Var v;
        v.node_ = std::move(n);
        return v;
    }

private:
    std::shared_ptr<Node> node_;
};

/// RAII switch that disables graph recording on this thread.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Records an op whose backward is supplied by the caller. backward receives
/// the result node; inputs are reachable as self.parents in the given order.
Var custom_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);

// reductions
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of a list of scalars.
Var sum_scalars(std::span<const Var> terms);

// shape
Var reshape(const Var& a, int n, int c, int h, int w);
Var flatten(const Var& a);
Var concat_channels(std::span<const Var> parts);
Var slice_channels(const Var& a, int begin, int end);
Var concat_batch(std::span<const Var> parts);
Var slice_batch(const Var& a, int begin, int end);
/// [N,C,1,1] -> [N,C,H,W] by replication.
Var broadcast_spatial(const Var& a, int h, int w);

// layers
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
/// x is flattened per sample; weight [out, in, 1, 1]; bias [1, out, 1, 1].
Var linear(const Var& x, const Var& weight, const Var& bias);
Var upsample2x(const Var& x);
Var avg_pool2(const Var& x);
/// Mean over non-overlapping kh x kw blocks.
Var block_avg_pool(const Var& x, int kh, int kw);
Var global_avg_pool(const Var& x);
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, double momentum = 0.1, double eps = 1e-5);
Var softmax_channels(const Var& x);
Var log_softmax_channels(const Var& x);

/// Bilinear resampling of x through per-sample affine maps theta [N,6,1,1]
/// (row-major 2x3 in normalized [-1,1] coordinates, output -> input).
/// Out-of-canvas taps read fill[c].
Var affine_warp(const Var& x, const Var& theta, std::span<const double> fill);

// losses
/// Mean binary cross-entropy over all elements, numerically stable in logits.
Var bce_with_logits(const Var& logits, const Tensor& targets);
/// Mean pixelwise cross-entropy; labels has N*H*W entries. Pixels whose class
/// weight is zero are excluded from the mean.
Var cross_entropy(const Var& logits, std::span<const int> labels, std::span<const double> class_weights = {});
/// Closed-form KL(N(mu_q, sigma_q) || N(mu_p, sigma_p)), summed over every element.
Var gaussian_kl(const Var& mu_q, const Var& sigma_q, const Var& mu_p, const Var& sigma_p);

}  // namespace geogan::ag
