#pragma once

#include <cmath>
#include <algorithm>
#include <functional>
#include <vector>

#include "doctest.h"
#include "siab/rng.hpp"
#include "siab/tensor.hpp"

namespace siab::test {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double sd = 1.0, double mean = 0.0) {
  Tensor t(s);
  Rng rng(seed);
  for (float& v : t.values()) v = static_cast<float>(rng.normal(mean, sd));
  return t;
}

/// Fixed random projection used to turn an output tensor into a scalar loss.
inline Tensor random_weights(const Shape& s, std::uint64_t seed) { return random_tensor(s, seed); }

inline double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a.data()[i]) * b.data()[i];
  return acc;
}

/// Central differences of `loss` with respect to `values[i]`, compared to
/// `analytic[i]` at a sample of indices. Tolerance is relative to the larger
/// magnitude with an absolute floor.
inline void check_gradient(std::vector<float>& values, const std::vector<float>& analytic,
                           const std::function<double()>& loss, double h, double tol,
                           std::size_t max_checks = 40) {
  REQUIRE(values.size() == analytic.size());
  const std::size_t step = std::max<std::size_t>(1, values.size() / max_checks);
  for (std::size_t i = 0; i < values.size(); i += step) {
    const float saved = values[i];
    values[i] = static_cast<float>(saved + h);
    const double up = loss();
    values[i] = static_cast<float>(saved - h);
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(numeric), std::abs(static_cast<double>(analytic[i]))});
    INFO("index " << i << " numeric " << numeric << " analytic " << analytic[i]);
    CHECK(std::abs(numeric - analytic[i]) <= tol * scale);
  }
}

/// Fraction of sampled indices where central differences agree with the
/// analytic gradient. For piecewise-linear networks a step can straddle a
/// ReLU or max-pool switch, so whole-network checks use this instead of
/// demanding agreement everywhere.
inline double gradient_agreement(std::vector<float>& values, const std::vector<float>& analytic,
                                 const std::function<double()>& loss, double h, double tol,
                                 std::size_t max_checks = 40) {
  const std::size_t step = std::max<std::size_t>(1, values.size() / max_checks);
  std::size_t checked = 0, agreed = 0;
  for (std::size_t i = 0; i < values.size(); i += step, ++checked) {
    const float saved = values[i];
    values[i] = static_cast<float>(saved + h);
    const double up = loss();
    values[i] = static_cast<float>(saved - h);
    const double down = loss();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(numeric), std::abs(static_cast<double>(analytic[i]))});
    if (std::abs(numeric - analytic[i]) <= tol * scale) ++agreed;
  }
  return checked == 0 ? 1.0 : static_cast<double>(agreed) / checked;
}

inline std::vector<float> to_vector(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace siab::test
