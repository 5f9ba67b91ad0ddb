// Serial reference kernels. Direct loops, no blocking; these are the oracle
// the parallel kernels are tested against.

#include <cmath>
#include <limits>

#include "siab/error.hpp"
#include "siab/kernels/kernels.hpp"

namespace siab::kernels::reference {

void conv2d_forward(const ConvSpec& spec, const Tensor& x, std::span<const float> weight,
                    std::span<const float> bias, Tensor& y) {
  const Shape in = x.shape();
  if (in.c != spec.in_channels) throw InvalidInput("conv2d: channel mismatch");
  const int k = spec.kernel;
  const int oh = in.h + 2 * spec.pad - k + 1;
  const int ow = in.w + 2 * spec.pad - k + 1;
  y = Tensor({in.n, spec.out_channels, oh, ow});
  for (int n = 0; n < in.n; ++n) {
    for (int co = 0; co < spec.out_channels; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < in.c; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy + ky - spec.pad;
              if (iy < 0 || iy >= in.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox + kx - spec.pad;
                if (ix < 0 || ix >= in.w) continue;
                acc += static_cast<double>(weight[((co * in.c + ci) * k + ky) * k + kx]) *
                       x.at(n, ci, iy, ix);
              }
            }
          }
          y.at(n, co, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
}

void conv2d_backward(const ConvSpec& spec, const Tensor& x, std::span<const float> weight,
                     const Tensor& dy, Tensor* dx, std::span<float> dweight,
                     std::span<float> dbias) {
  const Shape in = x.shape();
  const Shape out = dy.shape();
  const int k = spec.kernel;
  if (dx != nullptr) *dx = Tensor(in);
  for (int n = 0; n < in.n; ++n) {
    for (int co = 0; co < out.c; ++co) {
      for (int oy = 0; oy < out.h; ++oy) {
        for (int ox = 0; ox < out.w; ++ox) {
          const float g = dy.at(n, co, oy, ox);
          if (!dbias.empty()) dbias[co] += g;
          for (int ci = 0; ci < in.c; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy + ky - spec.pad;
              if (iy < 0 || iy >= in.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox + kx - spec.pad;
                if (ix < 0 || ix >= in.w) continue;
                const std::size_t wi = ((co * in.c + ci) * k + ky) * k + kx;
                dweight[wi] += g * x.at(n, ci, iy, ix);
                if (dx != nullptr) dx->at(n, ci, iy, ix) += g * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

void upconv2x2_forward(const UpConvSpec& spec, const Tensor& x, std::span<const float> weight,
                       std::span<const float> bias, Tensor& y) {
  const Shape in = x.shape();
  if (in.c != spec.in_channels) throw InvalidInput("upconv2x2: channel mismatch");
  y = Tensor({in.n, spec.out_channels, in.h * 2, in.w * 2});
  for (int n = 0; n < in.n; ++n) {
    for (int co = 0; co < spec.out_channels; ++co) {
      for (int oy = 0; oy < in.h * 2; ++oy) {
        for (int ox = 0; ox < in.w * 2; ++ox) {
          const int iy = oy / 2, ix = ox / 2, a = oy % 2, b = ox % 2;
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ci = 0; ci < in.c; ++ci) {
            acc += static_cast<double>(weight[((ci * spec.out_channels + co) * 2 + a) * 2 + b]) *
                   x.at(n, ci, iy, ix);
          }
          y.at(n, co, oy, ox) = static_cast<float>(acc);
        }
      }
    }
  }
}

void upconv2x2_backward(const UpConvSpec& spec, const Tensor& x, std::span<const float> weight,
                        const Tensor& dy, Tensor* dx, std::span<float> dweight,
                        std::span<float> dbias) {
  const Shape in = x.shape();
  if (dx != nullptr) *dx = Tensor(in);
  for (int n = 0; n < in.n; ++n) {
    for (int co = 0; co < spec.out_channels; ++co) {
      for (int oy = 0; oy < in.h * 2; ++oy) {
        for (int ox = 0; ox < in.w * 2; ++ox) {
          const int iy = oy / 2, ix = ox / 2, a = oy % 2, b = ox % 2;
          const float g = dy.at(n, co, oy, ox);
          if (!dbias.empty()) dbias[co] += g;
          for (int ci = 0; ci < in.c; ++ci) {
            const std::size_t wi = ((ci * spec.out_channels + co) * 2 + a) * 2 + b;
            dweight[wi] += g * x.at(n, ci, iy, ix);
            if (dx != nullptr) dx->at(n, ci, iy, ix) += g * weight[wi];
          }
        }
      }
    }
  }
}

void maxpool2x2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) {
  const Shape in = x.shape();
  y = Tensor({in.n, in.c, in.h / 2, in.w / 2});
  argmax.assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int oy = 0; oy < in.h / 2; ++oy) {
        for (int ox = 0; ox < in.w / 2; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::int32_t best_index = 0;
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
              const int iy = 2 * oy + a, ix = 2 * ox + b;
              const float v = x.at(n, c, iy, ix);
              if (v > best || std::isnan(v)) {
                best = v;
                best_index = static_cast<std::int32_t>(
                    ((static_cast<std::size_t>(n) * in.c + c) * in.h + iy) * in.w + ix);
              }
            }
          }
          y.data()[o] = best;
          argmax[o] = best_index;
        }
      }
    }
  }
}

void maxpool2x2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Tensor& dx) {
  dx.fill(0.0f);
  for (std::size_t o = 0; o < dy.size(); ++o) dx.data()[argmax[o]] += dy.data()[o];
}

void channel_moments(const Tensor& x, std::span<const int> samples, std::span<double> mean,
                     std::span<double> var) {
  const Shape s = x.shape();
  const double count = static_cast<double>(samples.size()) * s.plane();
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n : samples) {
      for (float v : x.plane(n, c)) sum += v;
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (int n : samples) {
      for (float v : x.plane(n, c)) sq += (v - mu) * (v - mu);
    }
    mean[c] = mu;
    var[c] = sq / count;
  }
}

void instance_moments(const Tensor& x, std::span<double> mean, std::span<double> var) {
  const Shape s = x.shape();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      double sum = 0.0;
      for (float v : x.plane(n, c)) sum += v;
      const double mu = sum / static_cast<double>(s.plane());
      double sq = 0.0;
      for (float v : x.plane(n, c)) sq += (v - mu) * (v - mu);
      mean[n * s.c + c] = mu;
      var[n * s.c + c] = sq / static_cast<double>(s.plane());
    }
  }
}

}  // namespace siab::kernels::reference
