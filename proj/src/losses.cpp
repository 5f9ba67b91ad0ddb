#include "siab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "siab/error.hpp"

namespace siab {
namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (labels.size() != static_cast<std::size_t>(s.n) * s.plane()) {
    throw InvalidInput("loss: expected " + std::to_string(static_cast<std::size_t>(s.n) * s.plane()) +
                       " labels, got " + std::to_string(labels.size()));
  }
  for (int l : labels) {
    if (l < 0 || l >= s.c) {
      throw InvalidInput("loss: label " + std::to_string(l) + " outside [0, " + std::to_string(s.c) + ")");
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  const Shape s = logits.shape();
  Tensor p(s);
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const float* in = logits.sample(n).data();
    float* out = p.sample(n).data();
    for (std::size_t i = 0; i < plane; ++i) {
      float m = in[i];
      for (int c = 1; c < s.c; ++c) m = std::max(m, in[c * plane + i]);
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(static_cast<double>(in[c * plane + i]) - m);
      for (int c = 0; c < s.c; ++c) {
        out[c * plane + i] = static_cast<float>(std::exp(static_cast<double>(in[c * plane + i]) - m) / z);
      }
    }
  }
  return p;
}

LossResult masked_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                std::span<const std::uint8_t> mask, MaskedMean mean) {
  check_labels(logits, labels);
  if (mask.size() != labels.size()) throw InvalidInput("masked_cross_entropy: mask size mismatch");
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  std::size_t retained = 0;
  for (auto m : mask) retained += m != 0;
  const double denom = mean == MaskedMean::AllPixels ? static_cast<double>(labels.size())
                                                     : static_cast<double>(retained);
  LossResult r{0.0, Tensor(s)};
  if (retained == 0) return r;
  const Tensor p = softmax(logits);
  double total = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const float* prob = p.sample(n).data();
    float* g = r.grad.sample(n).data();
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t px = n * plane + i;
      if (mask[px] == 0) continue;
      const int y = labels[px];
      total += -std::log(std::max(static_cast<double>(prob[y * plane + i]), 1e-30));
      for (int c = 0; c < s.c; ++c) {
        g[c * plane + i] = static_cast<float>((prob[c * plane + i] - (c == y ? 1.0 : 0.0)) / denom);
      }
    }
  }
  r.value = total / denom;
  return r;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::vector<std::uint8_t> all(labels.size(), 1);
  return masked_cross_entropy(logits, labels, all, MaskedMean::AllPixels);
}

LossResult soft_dice(const Tensor& logits, std::span<const int> labels, double smooth) {
  check_labels(logits, labels);
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  const Tensor p = softmax(logits);
  std::vector<double> inter(s.c, 0.0), psum(s.c, 0.0), gsum(s.c, 0.0);
  for (int n = 0; n < s.n; ++n) {
    const float* prob = p.sample(n).data();
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = labels[n * plane + i];
      for (int c = 0; c < s.c; ++c) psum[c] += prob[c * plane + i];
      inter[y] += prob[y * plane + i];
      gsum[y] += 1.0;
    }
  }
  LossResult r{0.0, Tensor(s)};
  // d(loss)/d(p_c) at a pixel, per class: -(2 g_c * D - N) / D^2 / C
  std::vector<double> num(s.c), den(s.c);
  for (int c = 0; c < s.c; ++c) {
    num[c] = 2.0 * inter[c] + smooth;
    den[c] = psum[c] + gsum[c] + smooth;
    r.value += 1.0 - num[c] / den[c];
  }
  r.value /= s.c;
  std::vector<double> dp(s.c);
  for (int n = 0; n < s.n; ++n) {
    const float* prob = p.sample(n).data();
    float* g = r.grad.sample(n).data();
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = labels[n * plane + i];
      double dot = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double gc = c == y ? 1.0 : 0.0;
        dp[c] = -(2.0 * gc * den[c] - num[c]) / (den[c] * den[c]) / s.c;
        dot += dp[c] * prob[c * plane + i];
      }
      // softmax Jacobian: dl/dz_c = p_c (dl/dp_c - sum_k p_k dl/dp_k)
      for (int c = 0; c < s.c; ++c) {
        g[c * plane + i] = static_cast<float>(prob[c * plane + i] * (dp[c] - dot));
      }
    }
  }
  return r;
}

}  // namespace siab
