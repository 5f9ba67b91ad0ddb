#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "siab/config.hpp"
#include "siab/data.hpp"
#include "siab/model.hpp"
#include "siab/optim.hpp"

namespace siab {

/// Stacks equally sized images into an (N, C, H, W) tensor.
Tensor stack_images(const std::vector<const Image*>& images);
/// Flattens masks into one class index per pixel, sample-major.
std::vector<int> stack_labels(const std::vector<const Mask*>& masks);

struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;  // N*H*W
  std::vector<DomainId> domains;
};

/// The three pixel-aligned views of an unlabeled batch.
struct UnlabeledBatch {
  Tensor weak;
  Tensor strong;
  Tensor styled;
  std::vector<DomainId> domains;
  std::vector<DomainId> style_domains;
};

struct PseudoLabelBatch {
  std::vector<int> labels;             // N*H*W, argmax with ties to the lowest class
  std::vector<float> confidence;       // max ensembled probability
  std::vector<std::uint8_t> mask;      // confidence >= tau
  double mask_rate() const;
};

/// Ensembles t * p_if + (1 - t) * p_af per pixel and thresholds at tau.
PseudoLabelBatch ensemble_pseudo_labels(const Tensor& p_if, const Tensor& p_af, double t, double tau);
/// Labels and mask from one probability map.
PseudoLabelBatch threshold_pseudo_labels(const Tensor& probs, double tau);

struct ModelPair {
  SegmentationNet student;
  SegmentationNet teacher;
};

/// Student built from the config (converted when use_siab), teacher a copy.
ModelPair make_model_pair(const TrainConfig& cfg, int in_channels, int n_classes, int n_domains);
Architecture architecture_for(const TrainConfig& cfg, int in_channels, int n_classes);

/// Teacher pseudo-labels with batch statistics of u_w; running estimates are
/// not touched. Unconverted teachers use their single normalization.
PseudoLabelBatch pseudo_label(SegmentationNet& teacher, const Tensor& weak,
                              const std::vector<DomainId>& domains, const TrainConfig& cfg);

struct SupervisedLoss {
  double individual = 0.0;  // L_IF (the plain network's loss when unconverted)
  double aggregated = 0.0;  // L_AF
  double total = 0.0;       // L_IF + lambda_af * L_AF
};

/// CE + soft Dice on the IF and AF forwards. grad_scale != 0 also
/// backpropagates grad_scale * total into the student.
SupervisedLoss supervised_loss(SegmentationNet& student, const LabeledBatch& batch,
                               const TrainConfig& cfg, double grad_scale = 0.0);

struct UnsupervisedLoss {
  double strong = 0.0;  // L_s
  double styled = 0.0;  // L_h
  double random = 0.0;  // L_r
  double total = 0.0;   // L_s + lambda_h L_h + lambda_r L_r
};

/// Streams with zero weight are skipped and reported as 0.
UnsupervisedLoss unsupervised_loss(SegmentationNet& student, const UnlabeledBatch& batch,
                                   const PseudoLabelBatch& pseudo, const TrainConfig& cfg, Rng& rng,
                                   double grad_scale = 0.0);

/// theta_t <- m theta_t + (1 - m) theta_s; buffers copied from the student.
void ema_update(ModelPair& pair, double momentum);

/// Loss components of one step, keyed L_IF, L_AF, L_x, L_s, L_h, L_r, L_u,
/// total and mask_rate.
using StepReport = std::map<std::string, double>;

struct TrainState {
  ModelPair pair;
  AdamW optimizer;
  long iteration = 0;  // completed steps
};

TrainState init_train_state(const TrainConfig& cfg, int in_channels, int n_classes, int n_domains);

StepReport train_step(TrainState& state, const LabeledBatch& labeled, const UnlabeledBatch& unlabeled,
                      const TrainConfig& cfg, Rng& rng);

/// Draws the per-domain labeled and unlabeled sub-batches of one iteration
/// and builds the weak, strong and style views.
std::pair<LabeledBatch, UnlabeledBatch> sample_batches(const DatasetRegistry& registry,
                                                       const TrainConfig& cfg, Rng& rng);

struct HistoryRecord {
  long iteration = 0;
  StepReport losses;
  std::optional<double> unseen_dice;  // percent
  nlohmann::json to_json() const;
};

struct TrainHooks {
  std::function<void(TrainState&)> after_step;
  std::function<void(const HistoryRecord&)> on_record;
};

struct TrainResult {
  TrainState state;
  std::vector<HistoryRecord> history;
};

/// Runs cfg.iterations steps in total (counting any resumed ones). Every
/// iteration draws from a generator seeded by (seed, iteration), so a resumed
/// run continues exactly where the original would have been.
TrainResult train_loop(const DatasetRegistry& train, const std::vector<DomainSample>& test,
                       const TrainConfig& cfg, const TrainHooks& hooks = {},
                       std::optional<TrainState> resume = std::nullopt);

/// Mean per-image foreground Dice (percent) of the teacher's AF path with
/// running statistics.
double unseen_dice(SegmentationNet& net, const std::vector<DomainSample>& test, int n_classes, int batch);

}  // namespace siab
