#pragma once

// Checkpoint container, little-endian:
//
//   bytes 0..7   magic "SIABCKPT"
//   u32          container version (currently 1)
//   u64          header length L
//   L bytes      UTF-8 JSON header
//   payload      float32 arrays, concatenated in header order
//
// The header holds {"format_version", "kind", "metadata", "tensors"}; each
// tensor entry is {"name", "role": "parameter"|"buffer", "size", "offset"}
// with offset counted in floats from the start of the payload. A network
// checkpoint additionally carries "architecture", "n_domains", "stripped",
// "mix_mode" and "epsilon".

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "siab/model.hpp"

namespace siab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::string role;  // "parameter" or "buffer"
  std::vector<float> values;
};

struct Archive {
  nlohmann::json header;  // without "tensors"
  std::vector<NamedArray> arrays;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

void save_checkpoint(const SegmentationNet& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  SegmentationNet net;
  nlohmann::json metadata;
};

/// Throws LoadError naming the offending key on any version, shape or
/// domain-count mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<int> expected_domains = std::nullopt);

}  // namespace siab
