#include "siab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "siab/error.hpp"

namespace siab {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, bool with_bias)
    : spec_{in_channels, out_channels, kernel, (kernel - 1) / 2},
      weight_(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
      bias_(with_bias ? static_cast<std::size_t>(out_channels) : 0) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0) {
    throw InvalidInput("Conv2d: invalid geometry");
  }
}

void Conv2d::init_kaiming(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(spec_.in_channels) * spec_.kernel * spec_.kernel;
  const double stddev = std::sqrt(gain / fan_in);
  for (float& w : weight_.value) w = static_cast<float>(rng.normal(0.0, stddev));
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x) const {
  Tensor y;
  kernels::conv2d_forward(spec_, x, weight_.value, bias_.value, y);
  return y;
}

void Conv2d::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
  kernels::conv2d_backward(spec_, x, weight_.value, dy, dx, weight_.grad, bias_.grad);
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& visitor) {
  if (!visitor.on_parameter) return;
  visitor.on_parameter(prefix + ".weight", weight_);
  if (bias_.size() > 0) visitor.on_parameter(prefix + ".bias", bias_);
}

UpConv2x2::UpConv2x2(int in_channels, int out_channels)
    : spec_{in_channels, out_channels},
      weight_(static_cast<std::size_t>(in_channels) * out_channels * 4),
      bias_(static_cast<std::size_t>(out_channels)) {}

void UpConv2x2::init(Rng& rng) {
  const double stddev = std::sqrt(1.0 / spec_.in_channels);
  for (float& w : weight_.value) w = static_cast<float>(rng.normal(0.0, stddev));
  std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

Tensor UpConv2x2::forward(const Tensor& x) const {
  Tensor y;
  kernels::upconv2x2_forward(spec_, x, weight_.value, bias_.value, y);
  return y;
}

void UpConv2x2::backward(const Tensor& x, const Tensor& dy, Tensor* dx) {
  kernels::upconv2x2_backward(spec_, x, weight_.value, dy, dx, weight_.grad, bias_.grad);
}

void UpConv2x2::visit(const std::string& prefix, const ParamVisitor& visitor) {
  if (!visitor.on_parameter) return;
  visitor.on_parameter(prefix + ".weight", weight_);
  visitor.on_parameter(prefix + ".bias", bias_);
}

void relu_inplace(Tensor& x) {
  for (float& v : x.values()) v = v < 0.0f ? 0.0f : v;  // keeps NaN visible
}

void relu_backward_inplace(const Tensor& activation, Tensor& dy) {
  const float* a = activation.data();
  float* g = dy.data();
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(a[i] > 0.0f)) g[i] = 0.0f;
  }
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw InvalidInput("concat_channels: incompatible shapes " + sa.str() + " and " + sb.str());
  }
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n) {
    auto dst = out.sample(n);
    std::copy(a.sample(n).begin(), a.sample(n).end(), dst.begin());
    std::copy(b.sample(n).begin(), b.sample(n).end(), dst.begin() + sa.sample_size());
  }
  return out;
}

void split_channels(const Tensor& d, int first_channels, Tensor& da, Tensor& db) {
  const Shape s = d.shape();
  da = Tensor({s.n, first_channels, s.h, s.w});
  db = Tensor({s.n, s.c - first_channels, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    const auto src = d.sample(n);
    std::copy(src.begin(), src.begin() + da.shape().sample_size(), da.sample(n).begin());
    std::copy(src.begin() + da.shape().sample_size(), src.end(), db.sample(n).begin());
  }
}

}  // namespace siab
