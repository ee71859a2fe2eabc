#include "geogan/tensor.hpp"

#include <algorithm>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace geogan {

namespace {

#ifdef __GLIBC__
// Large tensor buffers would otherwise be mmap'ed and unmapped on every
// allocation; keeping them on the heap halves training time.
const bool heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
    return true;
}();
#endif

}  // namespace

Tensor Tensor::batch_slice(int begin, int end) const {
    if (begin < 0 || end > shape_[0] || begin > end) {
        throw std::out_of_range("Tensor::batch_slice: bad range");
    }
    Tensor out(end - begin, shape_[1], shape_[2], shape_[3]);
    const std::size_t per = static_cast<std::size_t>(shape_[1]) * plane();
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
              data_.begin() + static_cast<std::ptrdiff_t>(end * per), out.data_.begin());
    return out;
}

void Tensor::add_inplace(const Tensor& other) {
    if (!same_shape(other)) {
        throw std::invalid_argument("Tensor::add_inplace: shape mismatch " + shape_str() + " vs " + other.shape_str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

std::string Tensor::shape_str() const {
    return "[" + std::to_string(shape_[0]) + "," + std::to_string(shape_[1]) + "," + std::to_string(shape_[2]) + "," +
           std::to_string(shape_[3]) + "]";
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    if (items.empty()) return {};
    const auto& s = items.front().shape();
    int total = 0;
    for (const auto& t : items) {
        if (t.c() != s[1] || t.h() != s[2] || t.w() != s[3]) {
            throw std::invalid_argument("stack_batch: inconsistent item shapes");
        }
        total += t.n();
    }
    Tensor out(total, s[1], s[2], s[3]);
    std::size_t off = 0;
    for (const auto& t : items) {
        std::copy(t.data(), t.data() + t.size(), out.data() + off);
        off += t.size();
    }
    return out;
}

}  // namespace geogan
