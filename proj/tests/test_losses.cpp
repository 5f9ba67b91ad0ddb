#include <cmath>
#include <vector>

#include "doctest.h"
#include "siab/error.hpp"
#include "siab/losses.hpp"
#include "support.hpp"

using namespace siab;

TEST_SUITE("losses") {
  TEST_CASE("uniform logits give ln C cross-entropy") {
    for (int c : {2, 3, 5}) {
      const Tensor logits({2, c, 3, 3}, 0.7f);
      std::vector<int> labels(18, c - 1);
      CHECK(cross_entropy(logits, labels).value == doctest::Approx(std::log(c)).epsilon(1e-7));
    }
  }

  TEST_CASE("softmax rows sum to one and survive large logits") {
    const Tensor logits = test::random_tensor({2, 4, 3, 5}, 1, 50.0);
    const Tensor p = softmax(logits);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 15; ++i) {
        double sum = 0.0;
        for (int c = 0; c < 4; ++c) sum += p.plane(n, c)[i];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
    for (float v : p.values()) CHECK(std::isfinite(v));
  }

  TEST_CASE("soft Dice closed form on uniform probabilities") {
    // Two classes, p = 0.5 everywhere, 8 pixels with 3 of class 1:
    // class 0: (2*2.5 + 1) / (4 + 5 + 1), class 1: (2*1.5 + 1) / (4 + 3 + 1).
    const Tensor logits({1, 2, 2, 4}, 0.0f);
    const std::vector<int> labels{1, 1, 1, 0, 0, 0, 0, 0};
    const double expected = 1.0 - 0.5 * (6.0 / 10.0 + 4.0 / 8.0);
    CHECK(soft_dice(logits, labels).value == doctest::Approx(expected).epsilon(1e-9));
  }

  TEST_CASE("soft Dice of a confident correct prediction approaches 0") {
    Tensor logits({1, 2, 1, 4});
    const std::vector<int> labels{0, 1, 1, 0};
    for (int i = 0; i < 4; ++i) {
      logits.at(0, labels[i], 0, i) = 30.0f;
      logits.at(0, 1 - labels[i], 0, i) = -30.0f;
    }
    CHECK(soft_dice(logits, labels).value < 1e-9);
    CHECK(cross_entropy(logits, labels).value < 1e-12);
  }

  TEST_CASE("masked cross-entropy: denominators and empty masks") {
    const Tensor logits = test::random_tensor({1, 3, 2, 2}, 4);
    const std::vector<int> labels{0, 1, 2, 1};
    const std::vector<std::uint8_t> half{1, 0, 1, 0}, none(4, 0), all(4, 1);
    const double full = cross_entropy(logits, labels).value;
    CHECK(masked_cross_entropy(logits, labels, all).value == doctest::Approx(full));
    const double sum_half = masked_cross_entropy(logits, labels, half, MaskedMean::AllPixels).value * 4.0;
    CHECK(masked_cross_entropy(logits, labels, half, MaskedMean::MaskedPixels).value ==
          doctest::Approx(sum_half / 2.0));

    for (MaskedMean m : {MaskedMean::AllPixels, MaskedMean::MaskedPixels}) {
      const LossResult r = masked_cross_entropy(logits, labels, none, m);
      CHECK(r.value == 0.0);
      for (float g : r.grad.values()) CHECK(g == 0.0f);
    }
    // Masked pixels receive no gradient.
    const LossResult r = masked_cross_entropy(logits, labels, half);
    for (int c = 0; c < 3; ++c) {
      CHECK(r.grad.plane(0, c)[1] == 0.0f);
      CHECK(r.grad.plane(0, c)[3] == 0.0f);
    }
  }

  TEST_CASE("label and mask validation") {
    const Tensor logits({1, 2, 2, 2});
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 1, 0}), InvalidInput);
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 1, 0, 2}), InvalidInput);
    CHECK_THROWS_AS(masked_cross_entropy(logits, std::vector<int>{0, 1, 0, 1}, std::vector<std::uint8_t>{1}),
                    InvalidInput);
  }
}

TEST_SUITE("gradients") {
  TEST_CASE("loss gradients match finite differences") {
    Tensor logits = test::random_tensor({2, 3, 3, 4}, 7);
    std::vector<int> labels(24);
    std::vector<std::uint8_t> mask(24);
    Rng rng(8);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = rng.uniform_int(0, 2);
      mask[i] = rng.bernoulli(0.6) ? 1 : 0;
    }
    std::vector<float> v = test::to_vector(logits);
    auto with = [&](auto loss) {
      return [&, loss] {
        std::copy(v.begin(), v.end(), logits.values().begin());
        return loss();
      };
    };
    SUBCASE("cross-entropy") {
      const auto g = test::to_vector(cross_entropy(logits, labels).grad);
      test::check_gradient(v, g, with([&] { return cross_entropy(logits, labels).value; }), 1e-3, 1e-3);
    }
    SUBCASE("soft Dice") {
      const auto g = test::to_vector(soft_dice(logits, labels).grad);
      test::check_gradient(v, g, with([&] { return soft_dice(logits, labels).value; }), 1e-3, 1e-3);
    }
    SUBCASE("masked cross-entropy") {
      for (MaskedMean m : {MaskedMean::AllPixels, MaskedMean::MaskedPixels}) {
        const auto g = test::to_vector(masked_cross_entropy(logits, labels, mask, m).grad);
        test::check_gradient(v, g, with([&] { return masked_cross_entropy(logits, labels, mask, m).value; }), 1e-3, 1e-3);
      }
    }
  }
}
