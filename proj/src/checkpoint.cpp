#include "siab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "siab/error.hpp"

namespace siab {
namespace {

constexpr char kMagic[8] = {'S', 'I', 'A', 'B', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const char* mix_mode_name(MixMode m) {
  switch (m) {
    case MixMode::Learned: return "learned";
    case MixMode::BatchOnly: return "batch";
    case MixMode::InstanceOnly: return "instance";
  }
  return "learned";
}

MixMode parse_mix_mode(const std::string& s) {
  if (s == "learned") return MixMode::Learned;
  if (s == "batch") return MixMode::BatchOnly;
  if (s == "instance") return MixMode::InstanceOnly;
  throw LoadError("checkpoint key 'mix_mode': unknown value '" + s + "'");
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header = archive.header;
  header["format_version"] = kCheckpointVersion;
  auto& tensors = header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : archive.arrays) {
    tensors.push_back({{"name", a.name}, {"role", a.role}, {"size", a.values.size()}, {"offset", offset}});
    offset += a.values.size();
  }
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : archive.arrays) {
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(float)));
  }
  if (!out) throw InvalidInput("failed writing " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw LoadError(path.string() + ": not a checkpoint (bad magic)");
  }
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint key 'format_version': expected " +
                    std::to_string(kCheckpointVersion) + ", found " + std::to_string(version));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  Archive archive;
  try {
    archive.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": corrupt header: " + e.what());
  }
  for (const auto& t : archive.header.at("tensors")) {
    NamedArray a{t.at("name").get<std::string>(), t.at("role").get<std::string>(),
                 std::vector<float>(t.at("size").get<std::size_t>())};
    in.read(reinterpret_cast<char*>(a.values.data()),
            static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    if (!in) throw LoadError("checkpoint key '" + a.name + "': truncated payload");
    archive.arrays.push_back(std::move(a));
  }
  archive.header.erase("tensors");
  return archive;
}

void save_checkpoint(const SegmentationNet& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  SegmentationNet copy = net;
  Archive archive;
  archive.header["kind"] = "segmentation_net";
  archive.header["architecture"] = copy.architecture();
  archive.header["n_domains"] = copy.n_domains();
  archive.header["stripped"] = copy.stripped();
  archive.header["metadata"] = metadata;
  auto slots = copy.norm_slots();
  archive.header["mix_mode"] =
      copy.converted() ? mix_mode_name(slots.front().second->site().mix().mode) : "learned";
  archive.header["epsilon"] =
      copy.converted() ? slots.front().second->site().epsilon() : slots.front().second->plain().epsilon();
  copy.visit({.on_parameter =
                  [&](const std::string& name, Parameter& p) {
                    archive.arrays.push_back({name, "parameter", p.value});
                  },
              .on_buffer =
                  [&](const std::string& name, std::vector<float>& b) {
                    archive.arrays.push_back({name, "buffer", b});
                  }});
  write_archive(path, archive);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<int> expected_domains) {
  Archive archive = read_archive(path);
  const auto& h = archive.header;
  if (h.value("kind", "") != "segmentation_net") {
    throw LoadError("checkpoint key 'kind': not a segmentation network");
  }
  Architecture arch;
  try {
    arch = h.at("architecture").get<Architecture>();
    arch.validate();
  } catch (const std::exception& e) {
    throw LoadError(std::string("checkpoint key 'architecture': ") + e.what());
  }
  const int n_domains = h.at("n_domains").get<int>();
  if (expected_domains && *expected_domains != n_domains) {
    throw LoadError("checkpoint key 'n_domains': checkpoint has " + std::to_string(n_domains) +
                    ", caller requested " + std::to_string(*expected_domains));
  }
  SegmentationNet net(arch, 0);
  if (n_domains > 0) {
    net = convert_model(std::move(net), n_domains, 0.5, parse_mix_mode(h.at("mix_mode")));
    if (h.at("stripped").get<bool>()) net = strip_individual_branches(std::move(net));
  }
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : archive.arrays) by_name[a.name] = &a;
  std::size_t consumed = 0;
  auto fill = [&](const std::string& name, std::vector<float>& dst, const char* role) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("checkpoint key '" + name + "': missing");
    if (it->second->role != role) throw LoadError("checkpoint key '" + name + "': wrong role");
    if (it->second->values.size() != dst.size()) {
      throw LoadError("checkpoint key '" + name + "': size " +
                      std::to_string(it->second->values.size()) + ", expected " +
                      std::to_string(dst.size()));
    }
    dst = it->second->values;
    ++consumed;
  };
  net.visit({.on_parameter = [&](const std::string& name, Parameter& p) {
               fill(name, p.value, "parameter");
               p.zero_grad();
             },
             .on_buffer = [&](const std::string& name, std::vector<float>& b) {
               fill(name, b, "buffer");
             }});
  if (consumed != archive.arrays.size()) {
    for (const auto& a : archive.arrays) {
      bool known = false;
      net.visit({.on_parameter = [&](const std::string& n, Parameter&) { known |= n == a.name; },
                 .on_buffer = [&](const std::string& n, std::vector<float>&) { known |= n == a.name; }});
      if (!known) throw LoadError("checkpoint key '" + a.name + "': not part of the architecture");
    }
  }
  return {std::move(net), h.value("metadata", nlohmann::json::object())};
}

}  // namespace siab
