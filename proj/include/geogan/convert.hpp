#pragma once

#include <span>
#include <vector>

#include "geogan/tensor.hpp"
#include "geogan/toydata.hpp"

namespace geogan {

/// Stacks images into [N,1,H,W].
Tensor images_to_tensor(std::span<const Image* const> images);
Tensor image_to_tensor(const Image& img);
/// One-hot [N,K,H,W] from label maps.
Tensor masks_to_onehot(std::span<const LabelMap* const> masks, int num_labels);
Tensor mask_to_onehot(const LabelMap& m, int num_labels);
/// One-hot class condition [N,K,1,1].
Tensor condition_tensor(std::span<const int> classes, int num_classes = 2);
/// Flat per-pixel labels in NHW order, for cross_entropy.
std::vector<int> masks_to_labels(std::span<const LabelMap* const> masks);

Image tensor_to_image(const Tensor& t, int n = 0, int c = 0);
/// Channel argmax of sample n; ties go to the lowest channel.
LabelMap argmax_labels(const Tensor& scores, int n = 0);

}  // namespace geogan
