#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "siab/augment.hpp"
#include "siab/losses.hpp"

namespace siab {

/// Statistics used by the aggregated branch.
enum class SabStats { Mixed, BatchOnly, InstanceOnly };

struct TrainConfig {
  // Loss weights and pseudo-labeling.
  double lambda_h = 1.0;
  double lambda_r = 0.2;
  double lambda_u = 1.0;
  double lambda_af = 1.0;
  double tau = 0.95;
  double p_rand = 0.8;
  double t_ensemble = 0.5;
  MaskedMean masked_mean = MaskedMean::AllPixels;

  // Model.
  bool use_siab = true;
  SabStats sab_stats = SabStats::Mixed;
  double alpha_init = 0.5;
  std::vector<int> widths{16, 32, 64, 128};

  // Optimization.
  double ema_momentum = 0.99;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double alpha_lr_multiplier = 10.0;
  long iterations = 1000;
  int labeled_per_domain = 2;
  int unlabeled_per_domain = 2;
  std::uint64_t seed = 0;

  // Protocol and evaluation.
  double labeled_fraction = 0.3;
  int unseen = 4;
  long eval_every = 100;
  int eval_batch = 16;

  StrongAugmentOptions strong;

  /// Throws InvalidInput naming the first violated constraint.
  void validate() const;

  /// Assigns one key from its textual value; unknown keys are an error.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// "key = value" lines; '#' starts a comment.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  /// Canonical text form covering every key; parse(to_text()) round-trips.
  std::string to_text() const;
  nlohmann::json to_json() const;
  /// FNV-1a of to_text(), hex.
  std::string hash() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Every key in canonical order.
const std::vector<ConfigKey>& config_keys();

}  // namespace siab
