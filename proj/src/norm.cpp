#include "siab/norm.hpp"

#include <cmath>
#include <string>

#include "siab/error.hpp"
#include "siab/kernels/kernels.hpp"
#include "siab/log.hpp"

namespace siab {
namespace {

void check_channels(const Tensor& x, int channels, const char* what) {
  if (x.shape().c != channels) {
    throw InvalidInput(std::string(what) + ": input has " + std::to_string(x.shape().c) +
                       " channels, site expects " + std::to_string(channels));
  }
  if (x.shape().n < 1 || x.shape().plane() == 0) {
    throw InvalidInput(std::string(what) + ": empty batch");
  }
}

// Normalizes the samples of `group` with the given statistics and applies
// `affine`. Fills group.inv_std and, when requested, the pre-affine values.
void group_forward(const Tensor& x, NormGroup& group, std::span<const double> mean,
                   std::span<const double> var, float epsilon, const BranchParams& affine,
                   Tensor& y, Tensor* normalized) {
  const int channels = x.shape().c;
  group.inv_std.resize(channels);
  for (int c = 0; c < channels; ++c) group.inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon);
  for (int n : group.samples) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels; ++c) {
      const auto in = x.plane(n, c);
      auto out = y.plane(n, c);
      const double mu = mean[c];
      const double inv = group.inv_std[c];
      const float gamma = affine.gamma.value[c];
      const float beta = affine.beta.value[c];
      float* hat = normalized != nullptr ? normalized->plane(n, c).data() : nullptr;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const auto z = static_cast<float>((in[i] - mu) * inv);
        if (hat != nullptr) hat[i] = z;
        out[i] = gamma * z + beta;
      }
    }
  }
}

void group_backward(const Tensor& dy, const NormGroup& group, const Tensor& normalized,
                    bool batch_stats, BranchParams& affine, Tensor& dx) {
  const int channels = dy.shape().c;
  const double count = static_cast<double>(group.samples.size()) * dy.shape().plane();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_hat = 0.0;
    for (int n : group.samples) {
      const auto g = dy.plane(n, c);
      const auto hat = normalized.plane(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        sum_dy += g[i];
        sum_dy_hat += static_cast<double>(g[i]) * hat[i];
      }
    }
    if (!group.stop_affine) {
      affine.gamma.grad[c] += static_cast<float>(sum_dy_hat);
      affine.beta.grad[c] += static_cast<float>(sum_dy);
    }
    const double gamma = affine.gamma.value[c];
    const double inv = group.inv_std[c];
    const double mean_g = gamma * sum_dy / count;
    const double mean_g_hat = gamma * sum_dy_hat / count;
    for (int n : group.samples) {
      const auto g = dy.plane(n, c);
      const auto hat = normalized.plane(n, c);
      auto out = dx.plane(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = gamma * g[i];
        out[i] = batch_stats ? static_cast<float>(inv * (gi - mean_g - hat[i] * mean_g_hat))
                             : static_cast<float>(inv * gi);
      }
    }
  }
}

std::vector<double> to_double(const std::vector<float>& v) { return {v.begin(), v.end()}; }

}  // namespace

const char* to_string(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::Individual: return "IF";
    case ForwardMode::Aggregated: return "AF";
    case ForwardMode::Random: return "RF";
    case ForwardMode::Pooled: return "pooled";
  }
  return "?";
}

BranchParams::BranchParams(int channels)
    : gamma(channels, 1.0f),
      beta(channels, 0.0f),
      running_mean(channels, 0.0f),
      running_var(channels, 1.0f) {}

void BranchParams::visit(const std::string& prefix, const ParamVisitor& visitor) {
  if (visitor.on_parameter) {
    visitor.on_parameter(prefix + ".gamma", gamma);
    visitor.on_parameter(prefix + ".beta", beta);
  }
  if (visitor.on_buffer) {
    visitor.on_buffer(prefix + ".running_mean", running_mean);
    visitor.on_buffer(prefix + ".running_var", running_var);
  }
}

MixCoefficient::MixCoefficient(int channels, double alpha_init)
    : logit(channels, logit_for(alpha_init), ParamGroup::Mixing) {}

float MixCoefficient::logit_for(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha init must lie in (0, 1)");
  return static_cast<float>(std::log(alpha / (1.0 - alpha)));
}

double MixCoefficient::value(int c) const {
  switch (mode) {
    case MixMode::BatchOnly: return 1.0;
    case MixMode::InstanceOnly: return 0.0;
    case MixMode::Learned: break;
  }
  return 1.0 / (1.0 + std::exp(-static_cast<double>(logit.value[c])));
}

void update_running_stats(BranchParams& branch, std::span<const double> mean,
                          std::span<const double> var, float momentum) {
  if (!(momentum >= 0.0f && momentum <= 1.0f)) {
    throw InvalidInput("running momentum must lie in [0, 1]");
  }
  const auto channels = branch.running_mean.size();
  if (mean.size() != channels || var.size() != channels) {
    throw InvalidInput("running statistics length mismatch");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (var[c] < 0.0) throw InvalidInput("negative variance passed to running statistics");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    branch.running_mean[c] =
        static_cast<float>(momentum * branch.running_mean[c] + (1.0 - momentum) * mean[c]);
    branch.running_var[c] =
        static_cast<float>(momentum * branch.running_var[c] + (1.0 - momentum) * var[c]);
  }
}

ChannelStats compute_batch_stats(const Tensor& x) {
  if (x.shape().n < 1 || x.shape().c < 1 || x.shape().plane() == 0) {
    throw InvalidInput("compute_batch_stats: empty batch");
  }
  std::vector<int> all(x.shape().n);
  for (int n = 0; n < x.shape().n; ++n) all[n] = n;
  ChannelStats stats{std::vector<double>(x.shape().c), std::vector<double>(x.shape().c)};
  kernels::channel_moments(x, all, stats.first, stats.second);
  return stats;
}

ChannelStats compute_instance_stats(const Tensor& x) {
  if (x.shape().n < 1 || x.shape().c < 1 || x.shape().plane() == 0) {
    throw InvalidInput("compute_instance_stats: empty spatial extent");
  }
  const std::size_t count = static_cast<std::size_t>(x.shape().n) * x.shape().c;
  ChannelStats stats{std::vector<double>(count), std::vector<double>(count)};
  kernels::instance_moments(x, stats.first, stats.second);
  return stats;
}

NormSite::NormSite(int channels, int n_domains, double alpha_init, float epsilon)
    : channels_(channels),
      n_domains_(n_domains),
      epsilon_(epsilon),
      individual_(static_cast<std::size_t>(n_domains), BranchParams(channels)),
      aggregated_(channels),
      mix_(channels, alpha_init) {
  if (channels < 1) throw InvalidInput("NormSite: channels must be >= 1");
  if (n_domains < 1) throw InvalidInput("NormSite: n_domains must be >= 1");
  if (!(epsilon > 0.0f)) throw InvalidInput("NormSite: epsilon must be positive");
}

void NormSite::strip() {
  individual_.clear();
  individual_.shrink_to_fit();
  stripped_ = true;
}

Tensor NormSite::forward(const Tensor& x, const NormContext& ctx, NormCache* cache) {
  check_channels(x, channels_, "NormSite");
  if (ctx.mode == ForwardMode::Aggregated) return forward_aggregated(x, ctx, cache);
  if (stripped_) {
    throw InvalidInput(std::string("NormSite: ") + to_string(ctx.mode) +
                       " forward needs individual branches, which were stripped");
  }
  const int batch = x.shape().n;
  if (static_cast<int>(ctx.domains.size()) != batch) {
    throw InvalidInput("NormSite: expected one domain id per sample");
  }
  std::vector<NormGroup> groups(static_cast<std::size_t>(n_domains_));
  for (int n = 0; n < batch; ++n) {
    const DomainId d = ctx.domains[n];
    if (d.value < 1 || d.value > n_domains_) {
      throw InvalidInput("NormSite: domain id " + std::to_string(d.value) + " outside [1, " +
                         std::to_string(n_domains_) + "]");
    }
    groups[d.index()].samples.push_back(n);
    groups[d.index()].stat_branch = d.index();
    groups[d.index()].affine_branch = d.index();
  }
  std::erase_if(groups, [](const NormGroup& g) { return g.samples.empty(); });

  if (ctx.mode == ForwardMode::Random) {
    if (!(ctx.rand_p >= 0.0 && ctx.rand_p <= 1.0)) {
      throw InvalidInput("random forward: p must lie in [0, 1]");
    }
    const bool can_perturb = n_domains_ >= 2;
    if (!can_perturb && ctx.rand_p > 0.0) {
      warn("random forward with a single domain branch degrades to individual forward");
    }
    for (auto& g : groups) {
      g.stop_affine = true;
      if (!can_perturb || ctx.rand_p <= 0.0) continue;
      if (ctx.rng == nullptr) throw InvalidInput("random forward requires a random source");
      if (ctx.rng->bernoulli(ctx.rand_p)) {
        const int r = ctx.rng->uniform_int(0, n_domains_ - 2);
        g.affine_branch = r < g.stat_branch ? r : r + 1;
      }
    }
  }

  Tensor y(x.shape());
  Tensor normalized = cache != nullptr ? Tensor(x.shape()) : Tensor();
  std::vector<double> mean(channels_), var(channels_);
  if (ctx.mode == ForwardMode::Pooled) {
    if (!ctx.batch_stats) throw InvalidInput("pooled forward needs batch statistics");
    std::vector<int> all(batch);
    for (int n = 0; n < batch; ++n) all[n] = n;
    kernels::channel_moments(x, all, mean, var);
  }
  for (auto& g : groups) {
    if (ctx.mode != ForwardMode::Pooled) {
      if (ctx.batch_stats) {
        kernels::channel_moments(x, g.samples, mean, var);
        if (ctx.update_running) {
          auto& stat = individual_[g.stat_branch];
          update_running_stats(stat, mean, var, stat.running_momentum);
        }
      } else {
        mean = to_double(individual_[g.stat_branch].running_mean);
        var = to_double(individual_[g.stat_branch].running_var);
      }
    }
    group_forward(x, g, mean, var, epsilon_, individual_[g.affine_branch], y,
                  cache != nullptr ? &normalized : nullptr);
  }
  if (cache != nullptr) {
    *cache = NormCache{};
    cache->mode = ctx.mode;
    cache->batch_stats = ctx.batch_stats;
    cache->normalized = std::move(normalized);
    cache->groups = std::move(groups);
  }
  return y;
}

Tensor NormSite::forward_aggregated(const Tensor& x, const NormContext& ctx, NormCache* cache) {
  const Shape s = x.shape();
  std::vector<double> alpha(channels_);
  for (int c = 0; c < channels_; ++c) alpha[c] = mix_.value(c);

  std::vector<double> batch_mean(channels_), batch_var(channels_);
  if (ctx.batch_stats) {
    std::vector<int> all(s.n);
    for (int n = 0; n < s.n; ++n) all[n] = n;
    kernels::channel_moments(x, all, batch_mean, batch_var);
    if (ctx.update_running) {
      update_running_stats(aggregated_, batch_mean, batch_var, aggregated_.running_momentum);
    }
  } else {
    batch_mean = to_double(aggregated_.running_mean);
    batch_var = to_double(aggregated_.running_var);
  }
  const std::size_t pairs = static_cast<std::size_t>(s.n) * s.c;
  std::vector<double> inst_mean(pairs), inst_var(pairs), agg_inv_std(pairs);
  kernels::instance_moments(x, inst_mean, inst_var);

  Tensor y(s);
  Tensor normalized = cache != nullptr ? Tensor(s) : Tensor();
  const int planes = static_cast<int>(pairs);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int n = p / s.c, c = p % s.c;
    const double a = alpha[c];
    const double mu = a * batch_mean[c] + (1.0 - a) * inst_mean[p];
    const double var = a * batch_var[c] + (1.0 - a) * inst_var[p];
    const double inv = 1.0 / std::sqrt(var + epsilon_);
    agg_inv_std[p] = inv;
    const auto in = x.plane(n, c);
    auto out = y.plane(n, c);
    const float gamma = aggregated_.gamma.value[c];
    const float beta = aggregated_.beta.value[c];
    float* hat = cache != nullptr ? normalized.plane(n, c).data() : nullptr;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto z = static_cast<float>((in[i] - mu) * inv);
      if (hat != nullptr) hat[i] = z;
      out[i] = gamma * z + beta;
    }
  }
  if (cache != nullptr) {
    *cache = NormCache{};
    cache->mode = ForwardMode::Aggregated;
    cache->batch_stats = ctx.batch_stats;
    cache->normalized = std::move(normalized);
    cache->alpha = std::move(alpha);
    cache->batch_mean = std::move(batch_mean);
    cache->batch_var = std::move(batch_var);
    cache->inst_mean = std::move(inst_mean);
    cache->inst_var = std::move(inst_var);
    cache->agg_inv_std = std::move(agg_inv_std);
  }
  return y;
}

Tensor NormSite::backward(const Tensor& dy, const NormCache& cache) {
  if (dy.shape() != cache.normalized.shape()) {
    throw InvalidInput("NormSite::backward: gradient shape does not match the cached forward");
  }
  if (cache.mode == ForwardMode::Aggregated) return backward_aggregated(dy, cache);
  if (cache.mode == ForwardMode::Pooled) throw InvalidInput("pooled forward is not differentiable");
  if (stripped_) throw InvalidInput("NormSite::backward: individual branches were stripped");
  Tensor dx(dy.shape());
  for (const auto& g : cache.groups) {
    group_backward(dy, g, cache.normalized, cache.batch_stats, individual_[g.affine_branch], dx);
  }
  return dx;
}

// Gradient of the aggregated normalization. The normalizer depends on x
// through both the batch moments (all samples) and the instance moments
// (one sample), and on the mixing logit through alpha.
Tensor NormSite::backward_aggregated(const Tensor& dy, const NormCache& cache) {
  const Shape s = dy.shape();
  const std::size_t pairs = static_cast<std::size_t>(s.n) * s.c;
  const double plane = static_cast<double>(s.plane());
  const double batch_count = plane * s.n;
  std::vector<double> d_inst_mean(pairs), d_inst_var(pairs);
  std::vector<double> d_batch_mean(channels_, 0.0), d_batch_var(channels_, 0.0);

#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels_; ++c) {
    const double a = cache.alpha[c];
    const double gamma = aggregated_.gamma.value[c];
    double sum_dy = 0.0, sum_dy_hat = 0.0, d_alpha = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const std::size_t p = static_cast<std::size_t>(n) * s.c + c;
      const auto g = dy.plane(n, c);
      const auto hat = cache.normalized.plane(n, c);
      double sg = 0.0, sgh = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        sg += g[i];
        sgh += static_cast<double>(g[i]) * hat[i];
      }
      sum_dy += sg;
      sum_dy_hat += sgh;
      const double inv = cache.agg_inv_std[p];
      const double d_mean = -gamma * inv * sg;
      const double d_var = -0.5 * gamma * inv * inv * sgh;
      d_alpha += d_mean * (cache.batch_mean[c] - cache.inst_mean[p]) +
                 d_var * (cache.batch_var[c] - cache.inst_var[p]);
      d_batch_mean[c] += a * d_mean;
      d_batch_var[c] += a * d_var;
      d_inst_mean[p] = (1.0 - a) * d_mean;
      d_inst_var[p] = (1.0 - a) * d_var;
    }
    aggregated_.gamma.grad[c] += static_cast<float>(sum_dy_hat);
    aggregated_.beta.grad[c] += static_cast<float>(sum_dy);
    if (mix_.mode == MixMode::Learned) {
      mix_.logit.grad[c] += static_cast<float>(d_alpha * a * (1.0 - a));
    }
  }

  Tensor dx(s);
  const int planes = static_cast<int>(pairs);
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int n = p / s.c, c = p % s.c;
    const double a = cache.alpha[c];
    const double gamma = aggregated_.gamma.value[c];
    const double inv = cache.agg_inv_std[p];
    const double mu_agg = a * cache.batch_mean[c] + (1.0 - a) * cache.inst_mean[p];
    const auto g = dy.plane(n, c);
    const auto hat = cache.normalized.plane(n, c);
    auto out = dx.plane(n, c);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double xi = hat[i] / inv + mu_agg;
      double v = gamma * g[i] * inv + d_inst_mean[p] / plane +
                 d_inst_var[p] * 2.0 * (xi - cache.inst_mean[p]) / plane;
      if (cache.batch_stats) {
        v += d_batch_mean[c] / batch_count +
             d_batch_var[c] * 2.0 * (xi - cache.batch_mean[c]) / batch_count;
      }
      out[i] = static_cast<float>(v);
    }
  }
  return dx;
}

void NormSite::visit(const std::string& prefix, const ParamVisitor& visitor) {
  for (std::size_t k = 0; k < individual_.size(); ++k) {
    individual_[k].visit(prefix + ".individual." + std::to_string(k + 1), visitor);
  }
  aggregated_.visit(prefix + ".aggregated", visitor);
  if (visitor.on_parameter) visitor.on_parameter(prefix + ".mix_logit", mix_.logit);
}

BatchNorm2d::BatchNorm2d(int channels, float epsilon) : branch_(channels), epsilon_(epsilon) {
  if (channels < 1) throw InvalidInput("BatchNorm2d: channels must be >= 1");
}

Tensor BatchNorm2d::forward(const Tensor& x, const NormContext& ctx, NormCache* cache) {
  check_channels(x, channels(), "BatchNorm2d");
  NormGroup group;
  group.samples.resize(x.shape().n);
  for (int n = 0; n < x.shape().n; ++n) group.samples[n] = n;
  std::vector<double> mean(channels()), var(channels());
  if (ctx.batch_stats) {
    kernels::channel_moments(x, group.samples, mean, var);
    if (ctx.update_running) update_running_stats(branch_, mean, var, branch_.running_momentum);
  } else {
    mean = to_double(branch_.running_mean);
    var = to_double(branch_.running_var);
  }
  Tensor y(x.shape());
  Tensor normalized = cache != nullptr ? Tensor(x.shape()) : Tensor();
  group_forward(x, group, mean, var, epsilon_, branch_, y, cache != nullptr ? &normalized : nullptr);
  if (cache != nullptr) {
    *cache = NormCache{};
    cache->mode = ForwardMode::Individual;
    cache->batch_stats = ctx.batch_stats;
    cache->normalized = std::move(normalized);
    cache->groups.push_back(std::move(group));
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy, const NormCache& cache) {
  Tensor dx(dy.shape());
  group_backward(dy, cache.groups.front(), cache.normalized, cache.batch_stats, branch_, dx);
  return dx;
}

void BatchNorm2d::visit(const std::string& prefix, const ParamVisitor& visitor) {
  branch_.visit(prefix, visitor);
}

namespace {
std::vector<DomainId> repeat_domain(DomainId d, int n) { return std::vector<DomainId>(n, d); }
}  // namespace

Tensor normalize_individual(NormSite& site, const Tensor& x, DomainId d, bool training) {
  const auto domains = repeat_domain(d, x.shape().n);
  NormContext ctx;
  ctx.mode = ForwardMode::Individual;
  ctx.domains = domains;
  ctx.batch_stats = training;
  ctx.update_running = training;
  return site.forward(x, ctx);
}

Tensor normalize_aggregated(NormSite& site, const Tensor& x, bool training) {
  NormContext ctx;
  ctx.mode = ForwardMode::Aggregated;
  ctx.batch_stats = training;
  ctx.update_running = training;
  return site.forward(x, ctx);
}

Tensor normalize_random(NormSite& site, const Tensor& x, DomainId d, double p, Rng& rng) {
  const auto domains = repeat_domain(d, x.shape().n);
  NormContext ctx;
  ctx.mode = ForwardMode::Random;
  ctx.domains = domains;
  ctx.rand_p = p;
  ctx.rng = &rng;
  return site.forward(x, ctx);
}

}  // namespace siab
