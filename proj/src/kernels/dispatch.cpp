#include <atomic>

#include "siab/kernels/kernels.hpp"

namespace siab::kernels {
namespace {
std::atomic<Backend> active{Backend::Parallel};
}

void set_backend(Backend b) { active.store(b); }
Backend backend() { return active.load(); }

#define SIAB_DISPATCH(name, params, args)            \
  void name params {                                 \
    if (backend() == Backend::Reference) {           \
      reference::name args;                          \
    } else {                                         \
      parallel::name args;                           \
    }                                                \
  }

SIAB_DISPATCH(conv2d_forward,
              (const ConvSpec& spec, const Tensor& x, std::span<const float> weight,
               std::span<const float> bias, Tensor& y),
              (spec, x, weight, bias, y))
SIAB_DISPATCH(conv2d_backward,
              (const ConvSpec& spec, const Tensor& x, std::span<const float> weight,
               const Tensor& dy, Tensor* dx, std::span<float> dweight, std::span<float> dbias),
              (spec, x, weight, dy, dx, dweight, dbias))
SIAB_DISPATCH(upconv2x2_forward,
              (const UpConvSpec& spec, const Tensor& x, std::span<const float> weight,
               std::span<const float> bias, Tensor& y),
              (spec, x, weight, bias, y))
SIAB_DISPATCH(upconv2x2_backward,
              (const UpConvSpec& spec, const Tensor& x, std::span<const float> weight,
               const Tensor& dy, Tensor* dx, std::span<float> dweight, std::span<float> dbias),
              (spec, x, weight, dy, dx, dweight, dbias))
SIAB_DISPATCH(maxpool2x2_forward,
              (const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax),
              (x, y, argmax))
SIAB_DISPATCH(maxpool2x2_backward,
              (const Tensor& dy, const std::vector<std::int32_t>& argmax, Tensor& dx),
              (dy, argmax, dx))
SIAB_DISPATCH(channel_moments,
              (const Tensor& x, std::span<const int> samples, std::span<double> mean,
               std::span<double> var),
              (x, samples, mean, var))
SIAB_DISPATCH(instance_moments,
              (const Tensor& x, std::span<double> mean, std::span<double> var),
              (x, mean, var))

#undef SIAB_DISPATCH

}  // namespace siab::kernels
