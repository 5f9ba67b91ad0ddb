#pragma once

// Normalization sites with statistics-individual branches (one per source
// domain), one statistics-aggregated branch mixing batch and instance
// statistics, and the random affine-substitution forward used for
// feature-level perturbation.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "siab/parameter.hpp"
#include "siab/rng.hpp"
#include "siab/tensor.hpp"

namespace siab {

inline constexpr float kDefaultEpsilon = 1e-5f;
/// Weight kept by running statistics per update (new batch weight 0.1).
inline constexpr float kDefaultRunningMomentum = 0.9f;

/// Affine parameters and running statistics of one normalization branch.
struct BranchParams {
  Parameter gamma;
  Parameter beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float running_momentum = kDefaultRunningMomentum;

  BranchParams() = default;
  explicit BranchParams(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }
  void visit(const std::string& prefix, const ParamVisitor& visitor);
};

enum class MixMode {
  Learned,       // alpha = sigmoid(logit)
  BatchOnly,     // alpha fixed at 1
  InstanceOnly,  // alpha fixed at 0
};

/// Per-channel coefficient blending batch and instance statistics.
struct MixCoefficient {
  Parameter logit;
  MixMode mode = MixMode::Learned;

  MixCoefficient() = default;
  MixCoefficient(int channels, double alpha_init);
  double value(int c) const;
  int channels() const { return static_cast<int>(logit.size()); }
  static float logit_for(double alpha);
};

enum class ForwardMode {
  Individual,  // IF: each sample normalized by its own domain's branch
  Aggregated,  // AF: the shared branch with mixed statistics
  Random,      // RF: own-domain statistics, another domain's affine parameters
  Pooled,      // diagnostics only: statistics pooled over the whole mixed batch
};

const char* to_string(ForwardMode mode);

/// Routing information seen by a single normalization site.
struct NormContext {
  ForwardMode mode = ForwardMode::Individual;
  std::span<const DomainId> domains;  // one entry per sample; unused by AF
  bool batch_stats = true;            // false: normalize with running estimates
  bool update_running = true;
  double rand_p = 0.0;
  Rng* rng = nullptr;
};

/// Samples normalized together with one statistics source.
struct NormGroup {
  std::vector<int> samples;
  int stat_branch = 0;
  int affine_branch = 0;
  bool stop_affine = false;
  std::vector<double> inv_std;  // per channel
};

/// Forward record needed to backpropagate through a site.
struct NormCache {
  ForwardMode mode = ForwardMode::Individual;
  bool batch_stats = true;
  Tensor normalized;  // pre-affine activations
  std::vector<NormGroup> groups;
  // Aggregated forward only.
  std::vector<double> alpha;
  std::vector<double> batch_mean, batch_var;  // per channel
  std::vector<double> inst_mean, inst_var;    // per (sample, channel)
  std::vector<double> agg_inv_std;            // per (sample, channel)
};

/// A converted normalization site.
class NormSite {
 public:
  NormSite(int channels, int n_domains, double alpha_init, float epsilon = kDefaultEpsilon);

  int channels() const { return channels_; }
  int n_domains() const { return n_domains_; }
  float epsilon() const { return epsilon_; }
  bool stripped() const { return stripped_; }

  std::vector<BranchParams>& individual() { return individual_; }
  const std::vector<BranchParams>& individual() const { return individual_; }
  BranchParams& aggregated() { return aggregated_; }
  const BranchParams& aggregated() const { return aggregated_; }
  MixCoefficient& mix() { return mix_; }
  const MixCoefficient& mix() const { return mix_; }

  /// Drops the individual branches; only AF remains usable.
  void strip();

  Tensor forward(const Tensor& x, const NormContext& ctx, NormCache* cache = nullptr);
  /// Accumulates parameter gradients and returns the input gradient.
  Tensor backward(const Tensor& dy, const NormCache& cache);

  void visit(const std::string& prefix, const ParamVisitor& visitor);

 private:
  Tensor forward_aggregated(const Tensor& x, const NormContext& ctx, NormCache* cache);
  Tensor backward_aggregated(const Tensor& dy, const NormCache& cache);

  int channels_;
  int n_domains_;
  float epsilon_;
  bool stripped_ = false;
  std::vector<BranchParams> individual_;
  BranchParams aggregated_;
  MixCoefficient mix_;
};

/// Conventional batch normalization; the site a network holds before conversion.
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels, float epsilon = kDefaultEpsilon);

  int channels() const { return branch_.channels(); }
  float epsilon() const { return epsilon_; }
  BranchParams& branch() { return branch_; }
  const BranchParams& branch() const { return branch_; }

  /// Routing mode is ignored: statistics always come from the whole batch.
  Tensor forward(const Tensor& x, const NormContext& ctx, NormCache* cache = nullptr);
  Tensor backward(const Tensor& dy, const NormCache& cache);
  void visit(const std::string& prefix, const ParamVisitor& visitor);

 private:
  BranchParams branch_;
  float epsilon_;
};

using ChannelStats = std::pair<std::vector<double>, std::vector<double>>;

/// Per-channel mean and biased variance over all N*H*W entries.
ChannelStats compute_batch_stats(const Tensor& x);
/// Per-(sample, channel) mean and biased variance; index n * C + c.
ChannelStats compute_instance_stats(const Tensor& x);

/// IF on a single-domain batch. training: batch statistics + running update.
Tensor normalize_individual(NormSite& site, const Tensor& x, DomainId d, bool training);
/// AF. training: batch term from the batch (and running update); otherwise running.
Tensor normalize_aggregated(NormSite& site, const Tensor& x, bool training);
/// RF on a single-domain batch using batch statistics.
Tensor normalize_random(NormSite& site, const Tensor& x, DomainId d, double p, Rng& rng);

void update_running_stats(BranchParams& branch, std::span<const double> mean,
                          std::span<const double> var, float momentum);

}  // namespace siab
