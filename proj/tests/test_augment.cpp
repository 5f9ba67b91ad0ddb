#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "siab/augment.hpp"
#include "siab/data.hpp"
#include "siab/error.hpp"
#include "siab/log.hpp"
#include "support.hpp"

using namespace siab;

namespace {

Image ramp(int c, int h, int w) {
  Image img(c, h, w);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 97) / 97.0f;
  return img;
}

Image noise(int c, int h, int w, std::uint64_t seed) {
  Image img(c, h, w);
  Rng rng(seed);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

std::vector<float> sorted(std::vector<float> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("weak: identity draw and group relations") {
    const Image img = ramp(2, 5, 7);
    CHECK(apply_weak(img, WeakDraw{}) == img);
    const Image half = apply_weak(img, WeakDraw{2, false, false});
    CHECK(apply_weak(half, WeakDraw{2, false, false}) == img);
    Image four = img;
    for (int i = 0; i < 4; ++i) four = apply_weak(four, WeakDraw{1, false, false});
    CHECK(four == img);
    // 180 degrees equals both flips.
    CHECK(half == apply_weak(img, WeakDraw{0, true, true}));
    const Image quarter = apply_weak(img, WeakDraw{1, false, false});
    CHECK(quarter.height == 7);
    CHECK(quarter.width == 5);
    // Counter-clockwise: the top-right corner moves to the top-left.
    CHECK(quarter.at(0, 0, 0) == img.at(0, 0, 6));
  }

  TEST_CASE("weak: pixel multiset kept, image and mask stay aligned") {
    const Image img = noise(1, 6, 6, 3);
    Mask mask(6, 6);
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) mask.at(y, x) = img.at(0, y, x) > 0.5f ? 1 : 0;
    }
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      auto [out, out_mask] = weak_augment(img, mask, rng);
      REQUIRE(out_mask.has_value());
      CHECK(sorted(out.pixels) == sorted(img.pixels));
      for (int y = 0; y < 6; ++y) {
        for (int x = 0; x < 6; ++x) CHECK((out.at(0, y, x) > 0.5f) == (out_mask->at(y, x) == 1));
      }
    }
    CHECK_THROWS_AS(weak_augment(img, Mask(5, 6), rng), InvalidInput);
  }

  TEST_CASE("strong: empty draw is the identity and outputs stay in range") {
    const Image img = noise(3, 8, 8, 5);
    CHECK(apply_strong(img, StrongDraw{}) == img);
    StrongAugmentOptions opts;
    opts.apply_prob = 1.0;
    Rng rng(6);
    for (int i = 0; i < 20; ++i) {
      const Image out = strong_augment(img, opts, rng);
      for (float v : out.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }

  TEST_CASE("strong: brightness scales and clips") {
    Image img(1, 1, 3);
    img.pixels = {0.2f, 0.5f, 1.0f};
    StrongDraw d;
    d.brightness = 0.6;
    const Image out = apply_strong(img, d);
    CHECK(out.pixels[0] == doctest::Approx(0.12));
    CHECK(out.pixels[1] == doctest::Approx(0.30));
    CHECK(out.pixels[2] == doctest::Approx(0.60));
    d.brightness = 1.5;
    CHECK(apply_strong(img, d).pixels[2] == 1.0f);
  }

  TEST_CASE("strong: contrast 0 collapses to the mean, saturation only touches colour") {
    Image img(1, 2, 2);
    img.pixels = {0.1f, 0.3f, 0.5f, 0.7f};
    StrongDraw d;
    d.contrast = 0.0;
    for (float v : apply_strong(img, d).pixels) CHECK(v == doctest::Approx(0.4));
    StrongDraw s;
    s.saturation = 0.0;
    CHECK(apply_strong(img, s) == img);
  }

  TEST_CASE("strong: option validation") {
    StrongAugmentOptions o;
    o.blur_sigma_min = 3.0;
    CHECK_THROWS_AS(o.validate(), InvalidInput);
    o = {};
    o.apply_prob = 1.5;
    CHECK_THROWS_AS(o.validate(), InvalidInput);
  }

  TEST_CASE("blur keeps constants and the mean of a periodic pattern") {
    const Image flat(1, 9, 9, 0.3f);
    for (float v : gaussian_blur(flat, 1.5).pixels) CHECK(v == doctest::Approx(0.3f));
    const Image img = noise(1, 16, 16, 7);
    const Image blurred = gaussian_blur(img, 1.0);
    auto var = [](const std::vector<float>& v) {
      double m = 0.0, s = 0.0;
      for (float x : v) m += x;
      m /= v.size();
      for (float x : v) s += (x - m) * (x - m);
      return s / v.size();
    };
    CHECK(var(blurred.pixels) < var(img.pixels));
  }

  TEST_CASE("histogram matching: self, constant and two-level references") {
    const Image src = noise(1, 16, 16, 8);
    for (std::size_t i = 0; i < src.pixels.size(); ++i) {
      CHECK(histogram_match(src, src).pixels[i] == doctest::Approx(src.pixels[i]).epsilon(1e-6));
    }
    const Image constant(1, 4, 4, 0.42f);
    for (float v : histogram_match(src, constant).pixels) CHECK(v == 0.42f);

    // Half the reference at 0.2, half at 0.8: the lower half of the source
    // ranks maps to 0.2.
    Image ref(1, 4, 4);
    for (std::size_t i = 0; i < ref.pixels.size(); ++i) ref.pixels[i] = i < 8 ? 0.2f : 0.8f;
    Image ordered(1, 4, 4);
    for (std::size_t i = 0; i < ordered.pixels.size(); ++i) ordered.pixels[i] = static_cast<float>(i) / 16.0f;
    const Image out = histogram_match(ordered, ref);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) CHECK(out.pixels[i] == (i < 8 ? 0.2f : 0.8f));
  }

  TEST_CASE("histogram matching: order preserving, reference support, channel checks") {
    const Image src = noise(3, 12, 10, 9);
    const Image ref = noise(3, 7, 9, 10);
    const Image out = histogram_match(src, ref);
    for (int c = 0; c < 3; ++c) {
      const std::size_t n = src.plane(), m = ref.plane();
      std::set<float> support(ref.pixels.begin() + c * m, ref.pixels.begin() + (c + 1) * m);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(support.count(out.pixels[c * n + i]) == 1);
        for (std::size_t j = 0; j < n; j += 7) {
          if (src.pixels[c * n + i] <= src.pixels[c * n + j]) {
            CHECK(out.pixels[c * n + i] <= out.pixels[c * n + j]);
          }
        }
      }
    }
    CHECK_THROWS_AS(histogram_match(src, noise(1, 4, 4, 1)), InvalidInput);
    CHECK_THROWS_AS(histogram_match(Image(), ref), InvalidInput);
  }

  TEST_CASE("style references come uniformly from the other domains") {
    SyntheticDomainSpec spec;
    spec.image_size = 16;
    const DatasetRegistry reg = make_synthetic_registry(spec, 4, 3);
    Rng rng(11);
    std::map<int, int> counts;
    const int draws = 6000;
    for (int i = 0; i < draws; ++i) {
      const StyleReference r = sample_style_reference(DomainId{2}, reg, rng);
      REQUIRE(r.image != nullptr);
      ++counts[r.domain.value];
    }
    CHECK(counts.count(2) == 0);
    for (int d : {1, 3, 4}) CHECK(std::abs(counts[d] - draws / 3.0) < 0.05 * draws);

    ScopedWarningSink quiet([](std::string_view) {});
    const DatasetRegistry single = leave_one_out(make_synthetic_registry(spec, 2, 2), DomainId{2}).train;
    CHECK_THROWS_AS(sample_style_reference(DomainId{1}, single, rng), InvalidInput);
  }
}
