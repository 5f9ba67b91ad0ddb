#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "siab/kernels/kernels.hpp"
#include "siab/parameter.hpp"
#include "siab/rng.hpp"
#include "siab/tensor.hpp"

namespace siab {

/// Same-size stride-1 convolution.
class Conv2d {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, bool with_bias);

  void init_kaiming(Rng& rng, double gain = 2.0);
  Tensor forward(const Tensor& x) const;
  /// dx may be null when the input gradient is not needed.
  void backward(const Tensor& x, const Tensor& dy, Tensor* dx);
  void visit(const std::string& prefix, const ParamVisitor& visitor);

  const kernels::ConvSpec& spec() const { return spec_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  kernels::ConvSpec spec_;
  Parameter weight_;
  Parameter bias_;
};

/// 2x2 stride-2 transposed convolution (doubles spatial size).
class UpConv2x2 {
 public:
  UpConv2x2(int in_channels, int out_channels);

  void init(Rng& rng);
  Tensor forward(const Tensor& x) const;
  void backward(const Tensor& x, const Tensor& dy, Tensor* dx);
  void visit(const std::string& prefix, const ParamVisitor& visitor);

 private:
  kernels::UpConvSpec spec_;
  Parameter weight_;
  Parameter bias_;
};

void relu_inplace(Tensor& x);
/// dy *= (activation > 0), in place.
void relu_backward_inplace(const Tensor& activation, Tensor& dy);
/// Concatenates along channels.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits a channel-concatenated gradient back into its two parts.
void split_channels(const Tensor& d, int first_channels, Tensor& da, Tensor& db);

}  // namespace siab
