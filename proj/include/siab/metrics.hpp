#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "siab/config.hpp"
#include "siab/data.hpp"
#include "siab/model.hpp"

namespace siab {

// Binary masks are row-major bytes; any nonzero byte is foreground.

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Foreground pixels with at least one background (or out-of-image) 4-neighbour.
std::vector<std::uint8_t> boundary(std::span<const std::uint8_t> mask, int height, int width);

/// Symmetric mean of nearest-boundary Euclidean distances in pixels: both
/// directed distance sets are pooled and averaged. Empty when either mask
/// has no foreground.
std::optional<double> asd(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                          int height, int width);

/// Squared Euclidean distance from every pixel to the nearest set pixel of
/// `seeds` (exact, separable); a large sentinel when seeds is empty.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> seeds, int height, int width);

struct EvalRow {
  std::string domain;
  int class_index = 1;
  double dice = 0.0;            // percent, mean over images
  std::optional<double> asd;    // pixels, mean over images where defined
  int asd_undefined = 0;        // images excluded from the ASD mean
  int samples = 0;
};

/// Per-domain, per-foreground-class scores plus a macro mean.
struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_dice = 0.0;
  std::optional<double> mean_asd;
  int samples = 0;

  /// Columns: domain,class,dice,asd,asd_undefined,samples. The final
  /// "mean" row holds the macro averages; undefined ASD is written "nan".
  std::string to_csv() const;
};

/// Hard predictions of the inference path: AF with running statistics on a
/// converted net, the plain normalization otherwise.
std::vector<int> predict(SegmentationNet& net, const Tensor& images);

/// Predicts every sample (which must carry a mask) and scores one-vs-rest
/// for each foreground class. domain_names[id - 1] labels rows when given.
EvalReport evaluate(SegmentationNet& net, const std::vector<DomainSample>& samples, int n_classes,
                    int batch = 16, const std::vector<std::string>& domain_names = {});

enum class PseudoLabelMode {
  IfEnsemble,  // per-domain batches, IF/AF ensemble of a converted teacher
  SingleBn,    // domain-mixed batches with one shared set of batch statistics
};

struct DomainQuality {
  DomainId domain;
  std::string name;
  double dice = 0.0;  // mean per-image foreground Dice in [0, 1]
  int samples = 0;
};

/// Pseudo-labels of the unlabeled pool scored against the hidden masks.
/// batch is the number of samples per domain in each forward pass.
std::vector<DomainQuality> pseudo_label_quality(SegmentationNet& teacher, const DatasetRegistry& registry,
                                                PseudoLabelMode mode, const TrainConfig& cfg, int batch = 4);

}  // namespace siab
