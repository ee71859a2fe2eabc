#include "geogan/convert.hpp"

#include <stdexcept>

namespace geogan {

Tensor images_to_tensor(std::span<const Image* const> images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const int h = images[0]->height, w = images[0]->width;
    Tensor t(static_cast<int>(images.size()), 1, h, w);
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (!images[n]->same_dims(h, w)) throw std::invalid_argument("images_to_tensor: mixed image sizes");
        std::copy(images[n]->data.begin(), images[n]->data.end(), t.data() + n * h * w);
    }
    return t;
}

Tensor image_to_tensor(const Image& img) {
    const Image* p = &img;
    return images_to_tensor(std::span<const Image* const>(&p, 1));
}

Tensor masks_to_onehot(std::span<const LabelMap* const> masks, int num_labels) {
    if (masks.empty()) throw std::invalid_argument("masks_to_onehot: empty batch");
    const int h = masks[0]->height, w = masks[0]->width;
    Tensor t(static_cast<int>(masks.size()), num_labels, h, w);
    for (std::size_t n = 0; n < masks.size(); ++n) {
        const auto& m = *masks[n];
        if (!m.same_dims(h, w)) throw std::invalid_argument("masks_to_onehot: mixed mask sizes");
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                const int v = m(r, c);
                if (v < 0 || v >= num_labels) throw std::invalid_argument("masks_to_onehot: label out of range");
                t.at(static_cast<int>(n), v, r, c) = 1.0;
            }
    }
    return t;
}

Tensor mask_to_onehot(const LabelMap& m, int num_labels) {
    const LabelMap* p = &m;
    return masks_to_onehot(std::span<const LabelMap* const>(&p, 1), num_labels);
}

Tensor condition_tensor(std::span<const int> classes, int num_classes) {
    Tensor t(static_cast<int>(classes.size()), num_classes, 1, 1);
    for (std::size_t n = 0; n < classes.size(); ++n) {
        if (classes[n] < 0 || classes[n] >= num_classes) throw std::invalid_argument("condition_tensor: bad class");
        t.at(static_cast<int>(n), classes[n], 0, 0) = 1.0;
    }
    return t;
}

std::vector<int> masks_to_labels(std::span<const LabelMap* const> masks) {
    std::vector<int> out;
    for (const auto* m : masks) out.insert(out.end(), m->data.begin(), m->data.end());
    return out;
}

Image tensor_to_image(const Tensor& t, int n, int c) {
    Image img(t.h(), t.w());
    for (int r = 0; r < t.h(); ++r)
        for (int col = 0; col < t.w(); ++col) img(r, col) = t.at(n, c, r, col);
    return img;
}

LabelMap argmax_labels(const Tensor& scores, int n) {
    LabelMap m(scores.h(), scores.w(), 0);
    for (int r = 0; r < scores.h(); ++r)
        for (int col = 0; col < scores.w(); ++col) {
            int best = 0;
            for (int k = 1; k < scores.c(); ++k) {
                if (scores.at(n, k, r, col) > scores.at(n, best, r, col)) best = k;
            }
            m(r, col) = best;
        }
    return m;
}

}  // namespace geogan
