#include "siab/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "siab/data.hpp"

namespace siab {
namespace {

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void clip_all(Image& image) {
  for (float& v : image.pixels) v = clip01(v);
}

// Quarter turn counter-clockwise.
Image rotate_ccw(const Image& in) {
  Image out(in.channels, in.width, in.height);
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, x, in.width - 1 - y);
    }
  }
  return out;
}

Mask rotate_ccw(const Mask& in) {
  Mask out(in.width, in.height);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) out.at(y, x) = in.at(x, in.width - 1 - y);
  }
  return out;
}

template <typename T, typename Get>
T flip(const T& in, bool horizontal, Get get) {
  T out = in;
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      const int sy = horizontal ? y : in.height - 1 - y;
      const int sx = horizontal ? in.width - 1 - x : x;
      get(out, y, x, in, sy, sx);
    }
  }
  return out;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<float> grayscale(const Image& image) {
  std::vector<float> gray(image.plane());
  if (image.channels == 3) {
    for (std::size_t i = 0; i < gray.size(); ++i) {
      gray[i] = 0.299f * image.pixels[i] + 0.587f * image.pixels[image.plane() + i] +
                0.114f * image.pixels[2 * image.plane() + i];
    }
  } else {
    std::copy_n(image.pixels.begin(), gray.size(), gray.begin());
  }
  return gray;
}

void check_image(const Image& image, const char* what) {
  if (image.empty() || image.height <= 0 || image.width <= 0 || image.channels <= 0 ||
      image.pixels.size() != static_cast<std::size_t>(image.channels) * image.plane()) {
    throw InvalidInput(std::string(what) + ": empty or malformed image");
  }
}

}  // namespace

WeakDraw draw_weak(Rng& rng) {
  WeakDraw d;
  d.quarter_turns = rng.uniform_int(0, 3);
  d.hflip = rng.bernoulli(0.5);
  d.vflip = rng.bernoulli(0.5);
  return d;
}

Image apply_weak(const Image& image, const WeakDraw& draw) {
  Image out = image;
  for (int k = 0; k < ((draw.quarter_turns % 4) + 4) % 4; ++k) out = rotate_ccw(out);
  auto copy = [](Image& o, int y, int x, const Image& i, int sy, int sx) {
    for (int c = 0; c < i.channels; ++c) o.at(c, y, x) = i.at(c, sy, sx);
  };
  if (draw.hflip) out = flip(out, true, copy);
  if (draw.vflip) out = flip(out, false, copy);
  return out;
}

Mask apply_weak(const Mask& mask, const WeakDraw& draw) {
  Mask out = mask;
  for (int k = 0; k < ((draw.quarter_turns % 4) + 4) % 4; ++k) out = rotate_ccw(out);
  auto copy = [](Mask& o, int y, int x, const Mask& i, int sy, int sx) { o.at(y, x) = i.at(sy, sx); };
  if (draw.hflip) out = flip(out, true, copy);
  if (draw.vflip) out = flip(out, false, copy);
  return out;
}

std::pair<Image, std::optional<Mask>> weak_augment(const Image& image,
                                                   const std::optional<Mask>& mask, Rng& rng) {
  if (mask && (mask->height != image.height || mask->width != image.width)) {
    throw InvalidInput("weak_augment: mask " + std::to_string(mask->height) + "x" +
                       std::to_string(mask->width) + " does not match image " +
                       std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  const WeakDraw draw = draw_weak(rng);
  std::optional<Mask> out_mask;
  if (mask) out_mask = apply_weak(*mask, draw);
  return {apply_weak(image, draw), std::move(out_mask)};
}

void StrongAugmentOptions::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(brightness) || !in01(contrast) || !in01(saturation)) {
    throw InvalidInput("strong augmentation jitter strengths must lie in [0, 1]");
  }
  if (blur_sigma_min < 0.0 || blur_sigma_max < blur_sigma_min) {
    throw InvalidInput("blur sigma range must satisfy 0 <= min <= max");
  }
  if (!in01(apply_prob)) throw InvalidInput("strong augmentation probability must lie in [0, 1]");
}

StrongDraw draw_strong(const StrongAugmentOptions& options, Rng& rng) {
  StrongDraw d;
  // Every draw is consumed regardless of the coin so sequences stay aligned.
  const bool b = rng.bernoulli(options.apply_prob);
  const double bf = rng.uniform(1.0 - options.brightness, 1.0 + options.brightness);
  const bool c = rng.bernoulli(options.apply_prob);
  const double cf = rng.uniform(1.0 - options.contrast, 1.0 + options.contrast);
  const bool s = rng.bernoulli(options.apply_prob);
  const double sf = rng.uniform(1.0 - options.saturation, 1.0 + options.saturation);
  const bool bl = rng.bernoulli(options.apply_prob);
  const double sigma = rng.uniform(options.blur_sigma_min, options.blur_sigma_max);
  if (b) d.brightness = bf;
  if (c) d.contrast = cf;
  if (s) d.saturation = sf;
  if (bl) d.blur_sigma = sigma;
  return d;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (double& k : kernel) k /= total;

  Image tmp = image;
  Image out = image;
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] * image.at(c, y, reflect(x + i, image.width));
        }
        tmp.at(c, y, x) = static_cast<float>(acc);
      }
    }
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          acc += kernel[i + radius] * tmp.at(c, reflect(y + i, image.height), x);
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image apply_strong(const Image& image, const StrongDraw& draw) {
  check_image(image, "strong_augment");
  Image out = image;
  if (draw.brightness) {
    for (float& v : out.pixels) v = clip01(v * *draw.brightness);
  }
  if (draw.contrast) {
    const auto gray = grayscale(out);
    const double mean = std::accumulate(gray.begin(), gray.end(), 0.0) / gray.size();
    const double f = *draw.contrast;
    for (float& v : out.pixels) v = clip01(f * v + (1.0 - f) * mean);
  }
  if (draw.saturation && out.channels == 3) {
    const auto gray = grayscale(out);
    const double f = *draw.saturation;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < out.plane(); ++i) {
        float& v = out.pixels[c * out.plane() + i];
        v = clip01(f * v + (1.0 - f) * gray[i]);
      }
    }
  }
  if (draw.blur_sigma && *draw.blur_sigma > 0.0) {
    out = gaussian_blur(out, *draw.blur_sigma);
    clip_all(out);
  }
  return out;
}

Image strong_augment(const Image& image, const StrongAugmentOptions& options, Rng& rng) {
  return apply_strong(image, draw_strong(options, rng));
}

Image histogram_match(const Image& source, const Image& reference) {
  check_image(source, "histogram_match source");
  check_image(reference, "histogram_match reference");
  if (source.channels != reference.channels) {
    throw InvalidInput("histogram_match: channel counts differ (" + std::to_string(source.channels) +
                       " vs " + std::to_string(reference.channels) + ")");
  }
  Image out = source;
  const std::size_t n = source.plane();
  const std::size_t m = reference.plane();
  std::vector<std::size_t> order(n);
  std::vector<float> ref(m);
  for (int c = 0; c < source.channels; ++c) {
    const float* src = source.pixels.data() + c * n;
    std::copy_n(reference.pixels.data() + c * m, m, ref.begin());
    std::sort(ref.begin(), ref.end());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return src[a] < src[b]; });
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j < n && src[order[j]] == src[order[i]]) ++j;
      // j source pixels are <= this value.
      const std::size_t rank = (j * m + n - 1) / n;
      const float mapped = ref[rank - 1];
      for (std::size_t k = i; k < j; ++k) out.pixels[c * n + order[k]] = mapped;
      i = j;
    }
  }
  return out;
}

StyleReference sample_style_reference(DomainId own, const DatasetRegistry& registry, Rng& rng) {
  const int k = registry.n_domains();
  if (k < 2) throw InvalidInput("style reference needs at least 2 source domains, registry has " + std::to_string(k));
  if (own.value < 1 || own.value > k) {
    throw InvalidInput("style reference: domain " + std::to_string(own.value) + " outside [1, " + std::to_string(k) + "]");
  }
  int pick = rng.uniform_int(1, k - 1);
  if (pick >= own.value) ++pick;
  const DomainId other{pick};
  const auto pool = registry.samples(other);
  if (pool.empty()) throw InvalidInput("style reference: domain " + std::to_string(pick) + " has no samples");
  const auto& sample = *pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(pool.size()) - 1))];
  return {&sample.image, other};
}

}  // namespace siab
