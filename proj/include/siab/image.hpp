#pragma once

#include <cstdint>
#include <vector>

#include "siab/error.hpp"

namespace siab {

/// Planar (CHW) float image with values nominally in [0, 1].
struct Image {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return pixels.empty(); }
  float& at(int c, int y, int x) { return pixels[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return pixels[(c * plane()) + static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Per-pixel class indices.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Mask&) const = default;
};

}  // namespace siab
