#pragma once

#include <optional>
#include <utility>

#include "siab/image.hpp"
#include "siab/parameter.hpp"
#include "siab/rng.hpp"

namespace siab {

class DatasetRegistry;

/// Rotation by k quarter turns (counter-clockwise), then optional flips.
struct WeakDraw {
  int quarter_turns = 0;
  bool hflip = false;
  bool vflip = false;
};

WeakDraw draw_weak(Rng& rng);
Image apply_weak(const Image& image, const WeakDraw& draw);
Mask apply_weak(const Mask& mask, const WeakDraw& draw);

/// Random rotation/flip applied identically to the image and its mask.
std::pair<Image, std::optional<Mask>> weak_augment(const Image& image,
                                                   const std::optional<Mask>& mask, Rng& rng);

struct StrongAugmentOptions {
  // Jitter factors are drawn from [1 - s, 1 + s].
  double brightness = 0.5;
  double contrast = 0.5;
  double saturation = 0.5;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  double apply_prob = 0.5;  // per sub-operation

  void validate() const;
};

/// A concrete strong-augmentation draw; absent ops are skipped.
struct StrongDraw {
  std::optional<double> brightness;
  std::optional<double> contrast;
  std::optional<double> saturation;
  std::optional<double> blur_sigma;
};

StrongDraw draw_strong(const StrongAugmentOptions& options, Rng& rng);
/// Brightness, contrast, saturation, blur in that order, clipping to [0,1]
/// after each step.
Image apply_strong(const Image& image, const StrongDraw& draw);
Image strong_augment(const Image& image, const StrongAugmentOptions& options, Rng& rng);

/// Separable Gaussian blur with reflected borders, radius ceil(3 sigma).
Image gaussian_blur(const Image& image, double sigma);

/// Per-channel quantile mapping of `source` onto the intensity distribution
/// of `reference`. A source value whose empirical CDF is q = cnt/n maps to
/// the ceil(q*m)-th smallest reference value (m reference pixels).
Image histogram_match(const Image& source, const Image& reference);

struct StyleReference {
  const Image* image = nullptr;
  DomainId domain;
};

/// Uniformly chosen other source domain, then a uniformly chosen image from it.
StyleReference sample_style_reference(DomainId own, const DatasetRegistry& registry, Rng& rng);

}  // namespace siab
