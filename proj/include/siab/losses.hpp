#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "siab/tensor.hpp"

namespace siab {

/// A scalar loss and its gradient with respect to the logits.
struct LossResult {
  double value = 0.0;
  Tensor grad;
};

/// Per-pixel softmax over the class axis.
Tensor softmax(const Tensor& logits);

/// Mean pixelwise cross-entropy; labels hold one class index per pixel (N*H*W).
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Soft Dice over the whole batch: mean over classes of
/// 1 - (2*sum(p*g) + smooth) / (sum(p) + sum(g) + smooth).
LossResult soft_dice(const Tensor& logits, std::span<const int> labels, double smooth = 1.0);

enum class MaskedMean {
  AllPixels,     // masked pixels count in the denominator
  MaskedPixels,  // mean over retained pixels only (0 when none retained)
};

/// Cross-entropy against hard pseudo-labels, zeroed where mask == 0.
LossResult masked_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                std::span<const std::uint8_t> mask,
                                MaskedMean mean = MaskedMean::AllPixels);

}  // namespace siab
