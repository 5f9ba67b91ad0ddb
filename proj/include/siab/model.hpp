#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "siab/layers.hpp"
#include "siab/norm.hpp"

namespace siab {

/// U-shaped encoder/decoder. widths[i] is the channel count of stage i;
/// every stage after the first halves the spatial resolution.
struct Architecture {
  int in_channels = 1;
  int n_classes = 2;
  std::vector<int> widths{16, 32, 64, 128};

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

/// Which branch every normalization site uses for one forward pass.
struct RoutingContext {
  ForwardMode mode = ForwardMode::Individual;
  std::vector<DomainId> domains;  // per sample; required by IF, RF and pooled
  bool batch_stats = true;        // false: evaluation with running statistics
  bool update_running = true;
  double rand_p = 0.0;
  Rng* rng = nullptr;

  static RoutingContext individual(std::vector<DomainId> domains);
  static RoutingContext aggregated();
  static RoutingContext random(std::vector<DomainId> domains, double p, Rng& rng);
  /// Running statistics, no updates.
  RoutingContext& evaluation();
  /// Batch statistics without touching running estimates.
  RoutingContext& frozen_stats();
};

/// Either a plain batch norm or, after conversion, a multi-branch site.
class NormSlot {
 public:
  explicit NormSlot(int channels) : impl_(BatchNorm2d(channels)) {}

  bool converted() const { return std::holds_alternative<NormSite>(impl_); }
  int channels() const;
  BatchNorm2d& plain() { return std::get<BatchNorm2d>(impl_); }
  NormSite& site() { return std::get<NormSite>(impl_); }
  const NormSite& site() const { return std::get<NormSite>(impl_); }
  void replace(NormSite site) { impl_ = std::move(site); }

  Tensor forward(const Tensor& x, const NormContext& ctx, NormCache* cache);
  Tensor backward(const Tensor& dy, const NormCache& cache);
  void visit(const std::string& prefix, const ParamVisitor& visitor);

 private:
  std::variant<BatchNorm2d, NormSite> impl_;
};

/// conv -> norm -> relu -> conv -> norm -> relu
struct ConvBlock {
  Conv2d conv1;
  NormSlot norm1;
  Conv2d conv2;
  NormSlot norm2;

  ConvBlock(int in_channels, int out_channels);
  void visit(const std::string& prefix, const ParamVisitor& visitor);
};

struct BlockCache {
  Tensor input;
  NormCache norm1;
  Tensor act1;
  NormCache norm2;
  Tensor act2;
};

/// Everything recorded by a differentiable forward pass.
struct ForwardCache {
  std::vector<BlockCache> encoder;
  std::vector<std::vector<std::int32_t>> pool_argmax;
  std::vector<Shape> pool_input;
  std::vector<Tensor> up_input;
  std::vector<BlockCache> decoder;
  Tensor head_input;
};

struct ParameterCount {
  std::size_t learnable = 0;
  std::size_t buffers = 0;
};

class SegmentationNet {
 public:
  SegmentationNet(Architecture arch, std::uint64_t init_seed);

  const Architecture& architecture() const { return arch_; }
  bool converted() const { return n_domains_ > 0; }
  bool stripped() const { return stripped_; }
  /// 0 before conversion.
  int n_domains() const { return n_domains_; }

  /// Returns per-class logits (N, n_classes, H, W). With a cache, the pass
  /// can be backpropagated.
  Tensor forward(const Tensor& x, const RoutingContext& ctx, ForwardCache* cache = nullptr);
  /// Accumulates parameter gradients for d(loss)/d(logits).
  void backward(const ForwardCache& cache, const Tensor& dlogits);
  void zero_grad();

  void visit(const ParamVisitor& visitor);
  ParameterCount count_parameters();

  /// Normalization slots in network order with their dotted names.
  std::vector<std::pair<std::string, NormSlot*>> norm_slots();

 private:
  friend SegmentationNet convert_model(SegmentationNet net, int n_domains, double alpha_init,
                                       MixMode mix_mode);
  friend SegmentationNet strip_individual_branches(SegmentationNet net);

  Tensor block_forward(ConvBlock& block, const Tensor& x, const NormContext& ctx,
                       BlockCache* cache);
  Tensor block_backward(ConvBlock& block, const BlockCache& cache, Tensor d, bool need_dx);

  Architecture arch_;
  std::vector<ConvBlock> encoder_;
  std::vector<UpConv2x2> up_;
  std::vector<ConvBlock> decoder_;
  Conv2d head_;
  int n_domains_ = 0;
  bool stripped_ = false;
};

/// Replaces every batch norm with a site holding n_domains individual
/// branches and one aggregated branch, all initialized from the original.
SegmentationNet convert_model(SegmentationNet net, int n_domains, double alpha_init,
                              MixMode mix_mode = MixMode::Learned);

/// Inference-only copy keeping the aggregated branch and mixing coefficients.
SegmentationNet strip_individual_branches(SegmentationNet net);

struct TrainVsInferenceCount {
  std::size_t plain = 0;      // unconverted architecture
  std::size_t training = 0;   // converted, all branches
  std::size_t inference = 0;  // after stripping
};
TrainVsInferenceCount describe_parameters(const SegmentationNet& net);

}  // namespace siab
