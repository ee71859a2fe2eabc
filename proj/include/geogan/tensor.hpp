#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace geogan {

/// Dense NCHW tensor of doubles. Every tensor in the library is 4-D; dense
/// layers use H = W = 1.
class Tensor {
public:
    using Shape = std::array<int, 4>;

    Tensor() = default;
    Tensor(int n, int c, int h, int w, double fill = 0.0)
        : shape_{n, c, h, w}, data_(static_cast<std::size_t>(n) * c * h * w, fill) {
        if (n < 0 || c < 0 || h < 0 || w < 0) {
            throw std::invalid_argument("Tensor: negative dimension");
        }
    }
    explicit Tensor(Shape shape, double fill = 0.0) : Tensor(shape[0], shape[1], shape[2], shape[3], fill) {}

    static Tensor scalar(double v) { return Tensor(1, 1, 1, 1, v); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

    const Shape& shape() const { return shape_; }
    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    std::size_t size() const { return data_.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    double item() const {
        if (data_.size() != 1) {
            throw std::logic_error("Tensor::item on non-scalar tensor of size " + std::to_string(data_.size()));
        }
        return data_[0];
    }

    /// Same storage, new shape. Element count must be preserved.
    Tensor reshaped(int n, int c, int h, int w) const {
        if (static_cast<std::size_t>(n) * c * h * w != data_.size()) {
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        }
        Tensor t;
        t.shape_ = {n, c, h, w};
        t.data_ = data_;
        return t;
    }

    /// Copy of samples [begin, end) along the batch axis.
    Tensor batch_slice(int begin, int end) const;

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
    void add_inplace(const Tensor& other);
    double sum() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

private:
    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

/// Stack single-sample tensors (n == 1) along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& items);

}  // namespace geogan
