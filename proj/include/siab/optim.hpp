#pragma once

#include <map>
#include <string>
#include <vector>

#include "siab/checkpoint.hpp"
#include "siab/model.hpp"

namespace siab {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Mixing logits: learning rate multiplier; their weight decay is always 0.
  double mixing_lr_multiplier = 10.0;
};

/// Adam with decoupled weight decay; state is keyed by parameter name.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options) : options_(options) {}

  void step(SegmentationNet& net);
  long steps() const { return steps_; }
  const AdamWOptions& options() const { return options_; }

  Archive to_archive() const;
  static AdamW from_archive(const Archive& archive, AdamWOptions options);

 private:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  AdamWOptions options_;
  long steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace siab
