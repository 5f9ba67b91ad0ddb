// OpenMP kernels. Convolutions are lowered to im2col + SGEMM; reductions
// parallelize over channels so each thread owns its output slots.

#include <cblas.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "siab/error.hpp"
#include "siab/kernels/kernels.hpp"

namespace siab::kernels::parallel {
namespace {

void im2col(const float* src, int channels, int h, int w, int k, int pad, float* col) {
  const int plane = h * w;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < channels; ++ci) {
    const float* in = src + static_cast<std::size_t>(ci) * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * plane;
        // Columns x in [x0, x1) read inside the image.
        const int shift = kx - pad;
        const int x0 = std::max(0, -shift);
        const int x1 = std::min(w, w - shift);
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          float* out = row + y * w;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + w, 0.0f);
            continue;
          }
          const float* line = in + iy * w + shift;
          std::fill(out, out + x0, 0.0f);
          std::copy(line + x0, line + x1, out + x0);
          std::fill(out + x1, out + w, 0.0f);
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int h, int w, int k, int pad, float* dst) {
  const int plane = h * w;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < channels; ++ci) {
    float* out = dst + static_cast<std::size_t>(ci) * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * plane;
        const int shift = kx - pad;
        const int x0 = std::max(0, -shift);
        const int x1 = std::min(w, w - shift);
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const float* src = row + y * w;
          float* line = out + iy * w + shift;
          for (int x = x0; x < x1; ++x) line[x] += src[x];
        }
      }
    }
  }
}

bool is_pointwise(const ConvSpec& spec) { return spec.kernel == 1 && spec.pad == 0; }

}  // namespace

void conv2d_forward(const ConvSpec& spec, const Tensor& x, std::span<const float> weight,
                    std::span<const float> bias, Tensor& y) {
  const Shape in = x.shape();
  if (in.c != spec.in_channels) throw InvalidInput("conv2d: channel mismatch");
  if (2 * spec.pad != spec.kernel - 1) throw InvalidInput("conv2d: only same-size padding");
  const int k = spec.kernel;
  const int plane = in.h * in.w;
  const int rows = spec.in_channels * k * k;
  y = Tensor({in.n, spec.out_channels, in.h, in.w});
  std::vector<float> col(is_pointwise(spec) ? 0 : static_cast<std::size_t>(rows) * plane);
  for (int n = 0; n < in.n; ++n) {
    const float* b = x.sample(n).data();
    if (!is_pointwise(spec)) {
      im2col(b, in.c, in.h, in.w, k, spec.pad, col.data());
      b = col.data();
    }
    float* out = y.sample(n).data();
    if (!bias.empty()) {
#pragma omp parallel for schedule(static)
      for (int co = 0; co < spec.out_channels; ++co) {
        float* row = out + static_cast<std::size_t>(co) * plane;
        for (int i = 0; i < plane; ++i) row[i] = bias[co];
      }
    }
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, spec.out_channels, plane, rows, 1.0f,
                weight.data(), rows, b, plane, bias.empty() ? 0.0f : 1.0f, out, plane);
  }
}

void conv2d_backward(const ConvSpec& spec, const Tensor& x, std::span<const float> weight,
                     const Tensor& dy, Tensor* dx, std::span<float> dweight,
                     std::span<float> dbias) {
  const Shape in = x.shape();
  const int k = spec.kernel;
  const int plane = in.h * in.w;
  const int rows = spec.in_channels * k * k;
  const bool pointwise = is_pointwise(spec);
  std::vector<float> col(pointwise ? 0 : static_cast<std::size_t>(rows) * plane);
  std::vector<float> dcol(dx != nullptr && !pointwise ? static_cast<std::size_t>(rows) * plane : 0);
  if (dx != nullptr) *dx = Tensor(in);
  for (int n = 0; n < in.n; ++n) {
    const float* g = dy.sample(n).data();
    if (!dbias.empty()) {
#pragma omp parallel for schedule(static)
      for (int co = 0; co < spec.out_channels; ++co) {
        const float* row = g + static_cast<std::size_t>(co) * plane;
        double acc = 0.0;
        for (int i = 0; i < plane; ++i) acc += row[i];
        dbias[co] += static_cast<float>(acc);
      }
    }
    const float* b = x.sample(n).data();
    if (!pointwise) {
      im2col(b, in.c, in.h, in.w, k, spec.pad, col.data());
      b = col.data();
    }
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, spec.out_channels, rows, plane, 1.0f, g,
                plane, b, plane, 1.0f, dweight.data(), rows);
    if (dx != nullptr) {
      float* target = pointwise ? dx->sample(n).data() : dcol.data();
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, rows, plane, spec.out_channels, 1.0f,
                  weight.data(), rows, g, plane, 0.0f, target, plane);
      if (!pointwise) col2im(dcol.data(), in.c, in.h, in.w, k, spec.pad, dx->sample(n).data());
    }
  }
}

void upconv2x2_forward(const UpConvSpec& spec, const Tensor& x, std::span<const float> weight,
                       std::span<const float> bias, Tensor& y) {
  const Shape in = x.shape();
  if (in.c != spec.in_channels) throw InvalidInput("upconv2x2: channel mismatch");
  const int plane = in.h * in.w;
  const int taps = spec.out_channels * 4;
  const int ow = in.w * 2;
  y = Tensor({in.n, spec.out_channels, in.h * 2, ow});
  std::vector<float> cols(static_cast<std::size_t>(taps) * plane);
  for (int n = 0; n < in.n; ++n) {
    // cols[(co*4 + a*2 + b), pixel] = sum_ci weight[ci, co, a, b] * x[ci, pixel]
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, taps, plane, spec.in_channels, 1.0f,
                weight.data(), taps, x.sample(n).data(), plane, 0.0f, cols.data(), plane);
    float* out = y.sample(n).data();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < spec.out_channels; ++co) {
      const float b0 = bias.empty() ? 0.0f : bias[co];
      float* dst = out + static_cast<std::size_t>(co) * plane * 4;
      for (int t = 0; t < 4; ++t) {
        const int a = t / 2, b = t % 2;
        const float* src = cols.data() + static_cast<std::size_t>(co * 4 + t) * plane;
        for (int iy = 0; iy < in.h; ++iy) {
          for (int ix = 0; ix < in.w; ++ix) {
            dst[(2 * iy + a) * ow + 2 * ix + b] = src[iy * in.w + ix] + b0;
          }
        }
      }
    }
  }
}

void upconv2x2_backward(const UpConvSpec& spec, const Tensor& x, std::span<const float> weight,
                        const Tensor& dy, Tensor* dx, std::span<float> dweight,
                        std::span<float> dbias) {
  const Shape in = x.shape();
  const int plane = in.h * in.w;
  const int taps = spec.out_channels * 4;
  const int ow = in.w * 2;
  std::vector<float> dcols(static_cast<std::size_t>(taps) * plane);
  if (dx != nullptr) *dx = Tensor(in);
  for (int n = 0; n < in.n; ++n) {
    const float* g = dy.sample(n).data();
#pragma omp parallel for schedule(static)
    for (int co = 0; co < spec.out_channels; ++co) {
      const float* src = g + static_cast<std::size_t>(co) * plane * 4;
      double acc = 0.0;
      for (int t = 0; t < 4; ++t) {
        const int a = t / 2, b = t % 2;
        float* dst = dcols.data() + static_cast<std::size_t>(co * 4 + t) * plane;
        for (int iy = 0; iy < in.h; ++iy) {
          for (int ix = 0; ix < in.w; ++ix) {
            const float v = src[(2 * iy + a) * ow + 2 * ix + b];
            dst[iy * in.w + ix] = v;
            acc += v;
          }
        }
      }
      if (!dbias.empty()) dbias[co] += static_cast<float>(acc);
    }
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, spec.in_channels, taps, plane, 1.0f,
                x.sample(n).data(), plane, dcols.data(), plane, 1.0f, dweight.data(), taps);
    if (dx != nullptr) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, spec.in_channels, plane, taps, 1.0f,
                  weight.data(), taps, dcols.data(), plane, 0.0f, dx->sample(n).data(), plane);
    }
  }
}

void maxpool2x2_forward(const Tensor& x, Tensor& y, std::vector<std::int32_t>& argmax) {
  const Shape in = x.shape();
  const int oh = in.h / 2, ow = in.w / 2;
  y = Tensor({in.n, in.c, oh, ow});
  argmax.assign(y.size(), 0);
  const int planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const std::size_t in_base = static_cast<std::size_t>(p) * in.h * in.w;
    const std::size_t out_base = static_cast<std::size_t>(p) * oh * ow;
    const float* src = x.data() + in_base;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        int best_offset = 0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const int offset = (2 * oy + a) * in.w + 2 * ox + b;
            if (src[offset] > best || std::isnan(src[offset])) {  // NaN propagates
              best = src[offset];
              best_offset = offset;
            }
          }
        }
        y.data()[out_base + oy * ow + ox] = best;
        argmax[out_base + oy * ow + ox] = static_cast<std::int32_t>(in_base + best_offset);
      }
    }
  }
}

void maxpool2x2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax, Tensor& dx) {
  dx.fill(0.0f);
  const auto count = static_cast<std::int64_t>(dy.size());
  // Pooling windows do not overlap, so every output owns a distinct input slot.
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < count; ++o) dx.data()[argmax[o]] += dy.data()[o];
}

void channel_moments(const Tensor& x, std::span<const int> samples, std::span<double> mean,
                     std::span<double> var) {
  const Shape s = x.shape();
  const double count = static_cast<double>(samples.size()) * s.plane();
#pragma omp parallel for schedule(static)
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
  const int planes = s.n * s.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const auto values = x.plane(p / s.c, p % s.c);
    double sum = 0.0;
    for (float v : values) sum += v;
    const double mu = sum / static_cast<double>(s.plane());
    double sq = 0.0;
    for (float v : values) sq += (v - mu) * (v - mu);
    mean[p] = mu;
    var[p] = sq / static_cast<double>(s.plane());
  }
}

}  // namespace siab::kernels::parallel
