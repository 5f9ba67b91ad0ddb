#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "siab/image.hpp"
#include "siab/parameter.hpp"

namespace siab {

struct DomainSample {
  Image image;
  std::optional<Mask> mask;
  DomainId domain;
  std::string sample_id;
};

struct DomainData {
  std::string name;
  std::vector<DomainSample> labeled;
  std::vector<DomainSample> unlabeled;  // masks removed
};

struct LeaveOneOut;

/// Source domains with their labeled/unlabeled pools. Masks of unlabeled
/// samples are kept aside for pseudo-label diagnostics only.
class DatasetRegistry {
 public:
  DatasetRegistry() = default;
  DatasetRegistry(int n_classes, std::vector<DomainData> domains);

  int n_classes() const { return n_classes_; }
  int n_domains() const { return static_cast<int>(domains_.size()); }
  const DomainData& domain(DomainId d) const;
  const std::vector<DomainData>& domains() const { return domains_; }
  std::size_t size(DomainId d) const;

  /// Every sample of a domain, labeled pool first.
  std::vector<const DomainSample*> samples(DomainId d) const;

  bool has_hidden_masks() const;
  /// Ground truth of unlabeled sample i of domain d. Diagnostics only.
  const Mask& diagnostic_mask(DomainId d, std::size_t i) const;

 private:
  friend DatasetRegistry split_labeled_unlabeled(const DatasetRegistry&, double, std::uint64_t);
  friend LeaveOneOut leave_one_out(const DatasetRegistry&, DomainId);

  int n_classes_ = 2;
  std::vector<DomainData> domains_;
  std::vector<std::vector<Mask>> hidden_;  // parallel to each domain's unlabeled pool
};

/// Monotone appearance transform: clamp(contrast * v^gamma + brightness),
/// followed by additive Gaussian noise.
struct DomainAppearance {
  double gamma = 1.0;
  double brightness = 0.0;
  double contrast = 1.0;
  double noise = 0.03;
  double texture_frequency = 3.0;
};

struct SyntheticDomainSpec {
  int image_size = 64;
  int n_classes = 2;  // 2: ellipse vs background; 3: adds an inner core class
  int min_objects = 1;
  int max_objects = 3;
  double min_radius = 0.10;  // fractions of the image size
  double max_radius = 0.25;
  double foreground_level = 0.65;
  double background_level = 0.25;
  double core_level = 0.9;
  double texture_amplitude = 0.05;
  std::vector<DomainAppearance> appearances;  // cycled if shorter than k_domains
  std::uint64_t seed = 0;

  void validate() const;
};

/// Four appearances with gamma/contrast/brightness shifts; the last is the
/// usual unseen domain.
std::vector<DomainAppearance> default_appearances();

struct RenderedSample {
  Image image;
  Mask mask;
};

/// Geometry depends only on geometry_seed; appearance only on the transform
/// and appearance_seed.
RenderedSample render_synthetic(const SyntheticDomainSpec& spec, const DomainAppearance& appearance,
                                std::uint64_t geometry_seed, std::uint64_t appearance_seed);

/// All samples start in the labeled pool.
DatasetRegistry make_synthetic_registry(const SyntheticDomainSpec& spec, int k_domains,
                                        int n_per_domain);

/// Per-domain random split with llround(fraction * n) labeled samples.
DatasetRegistry split_labeled_unlabeled(const DatasetRegistry& registry, double fraction,
                                        std::uint64_t seed);

struct LeaveOneOut {
  DatasetRegistry train;
  std::vector<DomainSample> test;  // original domain id, masks restored
  /// remap[original - 1] = new id, or 0 for the held-out domain.
  std::vector<int> remap;
};

LeaveOneOut leave_one_out(const DatasetRegistry& registry, DomainId unseen);

// On-disk layout:
//   <root>/manifest.json  {"format": "siab-dataset", "version": 1, "n_classes",
//                          "domains": [{"name", "samples": [ids]}]}
//   <root>/<domain>/images/<id>.png   8-bit grayscale (or RGB), value / 255
//   <root>/<domain>/masks/<id>.png    8-bit class indices
void save_registry(const DatasetRegistry& registry, const std::filesystem::path& root);
DatasetRegistry load_registry(const std::filesystem::path& root);

Image read_png_image(const std::filesystem::path& path);
Mask read_png_mask(const std::filesystem::path& path);
void write_png_image(const std::filesystem::path& path, const Image& image);
void write_png_mask(const std::filesystem::path& path, const Mask& mask);
/// 8-bit RGB raster, row-major interleaved.
void write_png_rgb(const std::filesystem::path& path, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

}  // namespace siab
