#pragma once

// Compute kernels for the segmentation network. Every kernel exists twice:
// `parallel::` (OpenMP loops, GEMM through BLAS) used for training, and
// `reference::` (plain serial loops) kept as the oracle for tests and the
// benchmark. The free functions in `siab::kernels` dispatch on the active
// backend.

#include <cstdint>
#include <span>
#include <vector>

#include "siab/tensor.hpp"

namespace siab::kernels {

enum class Backend { Parallel, Reference };

void set_backend(Backend backend);
Backend backend();

class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(backend()) { set_backend(b); }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

// Stride-1 square convolution with zero padding. weight is [out_c][in_c][k][k];
// bias may be empty. `y` is resized by the kernel.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int pad = 1;
};

// 2x2 / stride-2 transposed convolution. weight is [in_c][out_c][2][2].
struct UpConvSpec {
  int in_channels = 0;
  int out_channels = 0;
};

#define SIAB_KERNEL_DECLS                                                          \
  void conv2d_forward(const ConvSpec& spec, const Tensor& x,                       \
                      std::span<const float> weight, std::span<const float> bias,  \
                      Tensor& y);                                                  \
  /* dx may be null; dweight/dbias accumulate. */                                  \
  void conv2d_backward(const ConvSpec& spec, const Tensor& x,                      \
                       std::span<const float> weight, const Tensor& dy,            \
                       Tensor* dx, std::span<float> dweight,                       \
                       std::span<float> dbias);                                    \
  void upconv2x2_forward(const UpConvSpec& spec, const Tensor& x,                  \
                         std::span<const float> weight,                            \
                         std::span<const float> bias, Tensor& y);                  \
  void upconv2x2_backward(const UpConvSpec& spec, const Tensor& x,                 \
                          std::span<const float> weight, const Tensor& dy,         \
                          Tensor* dx, std::span<float> dweight,                    \
                          std::span<float> dbias);                                 \
  /* argmax holds the flat input index chosen for each output element. */          \
  void maxpool2x2_forward(const Tensor& x, Tensor& y,                              \
                          std::vector<std::int32_t>& argmax);                      \
  void maxpool2x2_backward(const Tensor& dy,                                       \
                           const std::vector<std::int32_t>& argmax, Tensor& dx);   \
  /* Biased per-channel moments over the listed samples. */                        \
  void channel_moments(const Tensor& x, std::span<const int> samples,              \
                       std::span<double> mean, std::span<double> var);             \
  /* Biased per-(sample, channel) moments over spatial positions; n*c entries. */  \
  void instance_moments(const Tensor& x, std::span<double> mean,                   \
                        std::span<double> var);

namespace parallel {
SIAB_KERNEL_DECLS
}
namespace reference {
SIAB_KERNEL_DECLS
}
SIAB_KERNEL_DECLS

#undef SIAB_KERNEL_DECLS

}  // namespace siab::kernels
