// Times the parallel kernels against the serial reference on the layer shapes
// of a small U-Net, and reports the largest output difference between them.
//
//   bench_kernels [--batch 8] [--size 64] [--repeats 5] [--json out.json]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "siab/kernels/kernels.hpp"
#include "siab/rng.hpp"
#include "siab/tensor.hpp"

using namespace siab;
namespace k = siab::kernels;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

std::vector<float> random_vector(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-0.5, 0.5));
  return v;
}

// Median wall time in milliseconds.
double time_ms(int repeats, const std::function<void()>& fn) {
  fn();  // warm-up, also sizes the outputs
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - a).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Row {
  std::string kernel;
  std::string shape;
  double reference_ms = 0.0;
  double parallel_ms = 0.0;
  double max_abs_diff = 0.0;
};

std::string shape_text(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

// Times `body` under each backend; body writes its results into the Out it is
// given so the two runs can be compared.
template <typename Out>
Row compare(const std::string& kernel, const Shape& shape, int repeats,
            const std::function<void(Out&)>& body, double (*diff)(const Out&, const Out&)) {
  Row row{kernel, shape_text(shape)};
  Out ref, par;
  {
    k::ScopedBackend b(k::Backend::Reference);
    row.reference_ms = time_ms(repeats, [&] { body(ref); });
  }
  {
    k::ScopedBackend b(k::Backend::Parallel);
    row.parallel_ms = time_ms(repeats, [&] { body(par); });
  }
  row.max_abs_diff = diff(ref, par);
  return row;
}

double tensor_diff(const Tensor& a, const Tensor& b) { return max_abs_diff(a, b); }
double float_diff(const std::vector<float>& a, const std::vector<float>& b) { return max_diff(a, b); }
double double_diff(const std::vector<double>& a, const std::vector<double>& b) { return max_diff(a, b); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark parallel kernels against the serial reference"};
  int batch = 8, size = 64, repeats = 5;
  std::string json_out;
  app.add_option("--batch", batch, "batch size")->capture_default_str();
  app.add_option("--size", size, "input side in pixels")->capture_default_str();
  app.add_option("--repeats", repeats, "timed repetitions (median reported)")->capture_default_str();
  app.add_option("--json", json_out, "also write the table as JSON");
  CLI11_PARSE(app, argc, argv);
  if (batch < 1 || size < 16 || size % 8 != 0 || repeats < 1) {
    std::fprintf(stderr, "error: need batch >= 1, size a multiple of 8 and >= 16, repeats >= 1\n");
    return 2;
  }

  Rng rng(42);
  std::vector<Row> rows;
  const std::vector<std::pair<int, int>> levels = {{3, 16}, {16, 32}, {32, 64}, {64, 128}};
  int side = size;
  for (const auto& [cin, cout] : levels) {
    const k::ConvSpec spec{cin, cout, 3, 1};
    const Shape xs{batch, cin, side, side};
    const Tensor x = random_tensor(xs, rng);
    const auto w = random_vector(static_cast<std::size_t>(cout) * cin * 9, rng);
    const auto b = random_vector(cout, rng);
    rows.push_back(compare<Tensor>("conv3x3_forward", xs, repeats,
                                   [&](Tensor& y) { k::conv2d_forward(spec, x, w, b, y); }, tensor_diff));

    const Tensor dy = random_tensor({batch, cout, side, side}, rng);
    rows.push_back(compare<std::vector<float>>(
        "conv3x3_backward", xs, repeats,
        [&](std::vector<float>& out) {
          Tensor dx(xs);
          std::vector<float> dw(w.size(), 0.0f), db(b.size(), 0.0f);
          k::conv2d_backward(spec, x, w, dy, &dx, dw, db);
          out.assign(dx.data(), dx.data() + dx.size());
          out.insert(out.end(), dw.begin(), dw.end());
          out.insert(out.end(), db.begin(), db.end());
        },
        float_diff));

    std::vector<int> all(batch);
    for (int i = 0; i < batch; ++i) all[i] = i;
    rows.push_back(compare<std::vector<double>>(
        "channel_moments", xs, repeats,
        [&](std::vector<double>& out) {
          std::vector<double> mean(cin), var(cin);
          k::channel_moments(x, all, mean, var);
          out = mean;
          out.insert(out.end(), var.begin(), var.end());
        },
        double_diff));
    rows.push_back(compare<std::vector<double>>(
        "instance_moments", xs, repeats,
        [&](std::vector<double>& out) {
          std::vector<double> mean(static_cast<std::size_t>(batch) * cin), var(mean.size());
          k::instance_moments(x, mean, var);
          out = mean;
          out.insert(out.end(), var.begin(), var.end());
        },
        double_diff));

    rows.push_back(compare<std::vector<float>>(
        "maxpool2x2", xs, repeats,
        [&](std::vector<float>& out) {
          Tensor y, dx(xs);
          std::vector<std::int32_t> argmax;
          k::maxpool2x2_forward(x, y, argmax);
          k::maxpool2x2_backward(y, argmax, dx);
          out.assign(y.data(), y.data() + y.size());
          out.insert(out.end(), dx.data(), dx.data() + dx.size());
        },
        float_diff));

    // Decoder upsampling from this level's resolution back to twice the side.
    const k::UpConvSpec up{cout, cin};
    const Shape us{batch, cout, side / 2, side / 2};
    const Tensor ux = random_tensor(us, rng);
    const auto uw = random_vector(static_cast<std::size_t>(cout) * cin * 4, rng);
    const auto ub = random_vector(cin, rng);
    rows.push_back(compare<Tensor>("upconv2x2_forward", us, repeats,
                                   [&](Tensor& y) { k::upconv2x2_forward(up, ux, uw, ub, y); }, tensor_diff));
    const Tensor udy = random_tensor({batch, cin, side, side}, rng);
    rows.push_back(compare<std::vector<float>>(
        "upconv2x2_backward", us, repeats,
        [&](std::vector<float>& out) {
          Tensor dx(us);
          std::vector<float> dw(uw.size(), 0.0f), db(ub.size(), 0.0f);
          k::upconv2x2_backward(up, ux, uw, udy, &dx, dw, db);
          out.assign(dx.data(), dx.data() + dx.size());
          out.insert(out.end(), dw.begin(), dw.end());
          out.insert(out.end(), db.begin(), db.end());
        },
        float_diff));
    side /= 2;
  }

  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-20s %-16s %12s %12s %9s %12s\n", "kernel", "input", "reference ms", "parallel ms", "speedup",
              "max |diff|");
  nlohmann::json j = nlohmann::json::array();
  double total_ref = 0.0, total_par = 0.0;
  for (const auto& r : rows) {
    std::printf("%-20s %-16s %12.3f %12.3f %8.2fx %12.3g\n", r.kernel.c_str(), r.shape.c_str(), r.reference_ms,
                r.parallel_ms, r.reference_ms / std::max(r.parallel_ms, 1e-9), r.max_abs_diff);
    total_ref += r.reference_ms;
    total_par += r.parallel_ms;
    j.push_back({{"kernel", r.kernel},
                 {"input", r.shape},
                 {"reference_ms", r.reference_ms},
                 {"parallel_ms", r.parallel_ms},
                 {"max_abs_diff", r.max_abs_diff}});
  }
  std::printf("%-20s %-16s %12.3f %12.3f %8.2fx\n", "total", "", total_ref, total_par, total_ref / total_par);
  if (!json_out.empty()) std::ofstream(json_out) << nlohmann::json{{"threads", omp_get_max_threads()}, {"rows", j}}.dump(2) << '\n';
  return 0;
}
