#include "siab/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "siab/error.hpp"
#include "siab/losses.hpp"
#include "siab/trainer.hpp"

namespace siab {
namespace {

constexpr double kFar = 1e20;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher), squared distances.
void distance_1d(const double* f, double* d, int n, int stride, std::vector<int>& v, std::vector<double>& z) {
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    const double fq = f[q * stride] + static_cast<double>(q) * q;
    double s = (fq - (f[v[k] * stride] + static_cast<double>(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = (fq - (f[v[k] * stride] + static_cast<double>(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  std::vector<double> out(n);
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    out[q] = dq * dq + f[v[k] * stride];
  }
  for (int q = 0; q < n; ++q) d[q * stride] = out[q];
}

std::vector<std::uint8_t> binary(const std::vector<int>& labels, std::size_t offset, std::size_t n, int cls) {
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = labels[offset + i] == cls;
  return out;
}

std::vector<std::uint8_t> binary(const Mask& mask, int cls) {
  std::vector<std::uint8_t> out(mask.labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.labels[i] == cls;
  return out;
}

std::vector<int> argmax_labels(const Tensor& logits) {
  const Shape s = logits.shape();
  std::vector<int> out(static_cast<std::size_t>(s.n) * s.plane());
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (logits.plane(n, c)[i] > logits.plane(n, best)[i]) best = c;
      }
      out[static_cast<std::size_t>(n) * s.plane() + i] = best;
    }
  }
  return out;
}

// Mean Dice over foreground classes of one image.
double image_dice(const std::vector<int>& labels, std::size_t offset, const Mask& gt, int n_classes) {
  double sum = 0.0;
  for (int c = 1; c < n_classes; ++c) sum += dice(binary(labels, offset, gt.labels.size(), c), binary(gt, c));
  return sum / (n_classes - 1);
}

}  // namespace

double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw InvalidInput("dice: mask sizes differ (" + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
  }
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::vector<std::uint8_t> boundary(std::span<const std::uint8_t> mask, int height, int width) {
  if (mask.size() != static_cast<std::size_t>(height) * width) throw InvalidInput("boundary: size mismatch");
  std::vector<std::uint8_t> out(mask.size(), 0);
  auto fg = [&](int y, int x) { return y >= 0 && y < height && x >= 0 && x < width && mask[y * width + x] != 0; };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (!fg(y, x)) continue;
      out[y * width + x] = !fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1);
    }
  }
  return out;
}

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> seeds, int height, int width) {
  if (seeds.size() != static_cast<std::size_t>(height) * width) throw InvalidInput("distance transform: size mismatch");
  std::vector<double> grid(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) grid[i] = seeds[i] ? 0.0 : kFar;
  std::vector<int> v;
  std::vector<double> z;
  for (int y = 0; y < height; ++y) distance_1d(grid.data() + y * width, grid.data() + y * width, width, 1, v, z);
  for (int x = 0; x < width; ++x) distance_1d(grid.data() + x, grid.data() + x, height, width, v, z);
  return grid;
}

std::optional<double> asd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int height, int width) {
  if (pred.size() != gt.size() || pred.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidInput("asd: mask sizes differ");
  }
  const auto bp = boundary(pred, height, width);
  const auto bg = boundary(gt, height, width);
  std::size_t np = 0, ng = 0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    np += bp[i];
    ng += bg[i];
  }
  if (np == 0 || ng == 0) return std::nullopt;
  const auto to_gt = squared_distance_transform(bg, height, width);
  const auto to_pred = squared_distance_transform(bp, height, width);
  double sum_pg = 0.0, sum_gp = 0.0;
  for (std::size_t i = 0; i < bp.size(); ++i) {
    if (bp[i]) sum_pg += std::sqrt(to_gt[i]);
  }
  for (std::size_t i = 0; i < bg.size(); ++i) {
    if (bg[i]) sum_gp += std::sqrt(to_pred[i]);
  }
  return (sum_pg + sum_gp) / static_cast<double>(np + ng);
}

std::string EvalReport::to_csv() const {
  std::string out = "domain,class,dice,asd,asd_undefined,samples\n";
  char buf[256];
  auto num = [](std::optional<double> v) {
    if (!v) return std::string("nan");
    char b[32];
    std::snprintf(b, sizeof b, "%.6f", *v);
    return std::string(b);
  };
  int undefined = 0;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%s,%d,%d\n", r.domain.c_str(), r.class_index, r.dice,
                  num(r.asd).c_str(), r.asd_undefined, r.samples);
    out += buf;
    undefined += r.asd_undefined;
  }
  std::snprintf(buf, sizeof buf, "mean,all,%.6f,%s,%d,%d\n", mean_dice, num(mean_asd).c_str(), undefined, samples);
  out += buf;
  return out;
}

std::vector<int> predict(SegmentationNet& net, const Tensor& images) {
  RoutingContext ctx = RoutingContext::aggregated();
  ctx.evaluation();
  return argmax_labels(net.forward(images, ctx));
}

EvalReport evaluate(SegmentationNet& net, const std::vector<DomainSample>& samples, int n_classes, int batch,
                    const std::vector<std::string>& domain_names) {
  if (batch < 1) throw InvalidInput("evaluate: batch must be >= 1");
  if (n_classes < 2) throw InvalidInput("evaluate: need at least 2 classes");
  struct Acc {
    std::vector<double> dice_sum, asd_sum;
    std::vector<int> asd_n, undefined;
    int samples = 0;
  };
  std::map<int, Acc> acc;
  std::vector<int> order;  // domains in first-seen order
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch));
    std::vector<const Image*> images;
    for (std::size_t i = start; i < end; ++i) {
      if (!samples[i].mask) throw InvalidInput("evaluate: sample " + samples[i].sample_id + " has no mask");
      images.push_back(&samples[i].image);
    }
    const auto labels = predict(net, stack_images(images));
    for (std::size_t i = start; i < end; ++i) {
      const DomainSample& s = samples[i];
      const Mask& gt = *s.mask;
      auto [it, fresh] = acc.try_emplace(s.domain.value);
      Acc& a = it->second;
      if (fresh) {
        order.push_back(s.domain.value);
        a.dice_sum.assign(n_classes, 0.0);
        a.asd_sum.assign(n_classes, 0.0);
        a.asd_n.assign(n_classes, 0);
        a.undefined.assign(n_classes, 0);
      }
      ++a.samples;
      const std::size_t offset = (i - start) * gt.labels.size();
      for (int c = 1; c < n_classes; ++c) {
        const auto p = binary(labels, offset, gt.labels.size(), c);
        const auto g = binary(gt, c);
        a.dice_sum[c] += dice(p, g);
        if (const auto d = asd(p, g, gt.height, gt.width)) {
          a.asd_sum[c] += *d;
          ++a.asd_n[c];
        } else {
          ++a.undefined[c];
        }
      }
    }
  }

  EvalReport report;
  double dice_total = 0.0, asd_total = 0.0;
  int asd_rows = 0;
  for (int d : order) {
    const Acc& a = acc[d];
    const std::string name = d - 1 < static_cast<int>(domain_names.size()) ? domain_names[d - 1]
                                                                             : "domain" + std::to_string(d);
    for (int c = 1; c < n_classes; ++c) {
      EvalRow row{name, c, 100.0 * a.dice_sum[c] / a.samples, std::nullopt, a.undefined[c], a.samples};
      if (a.asd_n[c] > 0) {
        row.asd = a.asd_sum[c] / a.asd_n[c];
        asd_total += *row.asd;
        ++asd_rows;
      }
      dice_total += row.dice;
      report.rows.push_back(row);
    }
    report.samples += a.samples;
  }
  if (!report.rows.empty()) report.mean_dice = dice_total / report.rows.size();
  if (asd_rows > 0) report.mean_asd = asd_total / asd_rows;
  return report;
}

std::vector<DomainQuality> pseudo_label_quality(SegmentationNet& teacher, const DatasetRegistry& registry,
                                                PseudoLabelMode mode, const TrainConfig& cfg, int batch) {
  if (!registry.has_hidden_masks()) throw InvalidInput("pseudo-label quality needs a registry with hidden masks");
  if (batch < 1) throw InvalidInput("pseudo-label quality: batch must be >= 1");
  const int k = registry.n_domains();
  const int n_classes = registry.n_classes();
  std::vector<DomainQuality> out;
  for (int d = 1; d <= k; ++d) out.push_back({DomainId{d}, registry.domain(DomainId{d}).name, 0.0, 0});

  if (mode == PseudoLabelMode::IfEnsemble) {
    if (!teacher.converted()) throw InvalidInput("IF-ensemble pseudo-labels need a converted network");
    for (int d = 1; d <= k; ++d) {
      const auto& pool = registry.domain(DomainId{d}).unlabeled;
      for (std::size_t start = 0; start < pool.size(); start += batch) {
        const std::size_t end = std::min(pool.size(), start + static_cast<std::size_t>(batch));
        std::vector<const Image*> images;
        for (std::size_t i = start; i < end; ++i) images.push_back(&pool[i].image);
        const std::vector<DomainId> domains(images.size(), DomainId{d});
        const auto pl = pseudo_label(teacher, stack_images(images), domains, cfg);
        for (std::size_t i = start; i < end; ++i) {
          const Mask& gt = registry.diagnostic_mask(DomainId{d}, i);
          out[d - 1].dice += image_dice(pl.labels, (i - start) * gt.labels.size(), gt, n_classes);
          ++out[d - 1].samples;
        }
      }
    }
  } else {
    // Round-robin over domains so every forward pass mixes them.
    std::vector<std::pair<int, std::size_t>> items;
    std::size_t longest = 0;
    for (int d = 1; d <= k; ++d) longest = std::max(longest, registry.domain(DomainId{d}).unlabeled.size());
    for (std::size_t i = 0; i < longest; ++i) {
      for (int d = 1; d <= k; ++d) {
        if (i < registry.domain(DomainId{d}).unlabeled.size()) items.emplace_back(d, i);
      }
    }
    const std::size_t chunk = static_cast<std::size_t>(batch) * k;
    for (std::size_t start = 0; start < items.size(); start += chunk) {
      const std::size_t end = std::min(items.size(), start + chunk);
      std::vector<const Image*> images;
      std::vector<DomainId> domains;
      for (std::size_t j = start; j < end; ++j) {
        images.push_back(&registry.domain(DomainId{items[j].first}).unlabeled[items[j].second].image);
        domains.push_back(DomainId{items[j].first});
      }
      RoutingContext ctx = RoutingContext::individual(domains);
      if (teacher.converted()) ctx.mode = ForwardMode::Pooled;
      ctx.frozen_stats();
      const auto labels = argmax_labels(teacher.forward(stack_images(images), ctx));
      for (std::size_t j = start; j < end; ++j) {
        const auto [d, i] = items[j];
        const Mask& gt = registry.diagnostic_mask(DomainId{d}, i);
        out[d - 1].dice += image_dice(labels, (j - start) * gt.labels.size(), gt, n_classes);
        ++out[d - 1].samples;
      }
    }
  }
  for (auto& q : out) {
    if (q.samples > 0) q.dice /= q.samples;
  }
  return out;
}

}  // namespace siab
