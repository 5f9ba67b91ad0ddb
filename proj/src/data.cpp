#include "siab/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "siab/log.hpp"
#include "siab/rng.hpp"

namespace siab {
namespace fs = std::filesystem;

DatasetRegistry::DatasetRegistry(int n_classes, std::vector<DomainData> domains)
    : n_classes_(n_classes), domains_(std::move(domains)) {
  if (n_classes_ < 2 || n_classes_ > 255) throw InvalidInput("registry: n_classes must lie in [2, 255]");
  hidden_.resize(domains_.size());
  for (std::size_t k = 0; k < domains_.size(); ++k) {
    for (auto& s : domains_[k].unlabeled) {
      hidden_[k].push_back(s.mask.value_or(Mask{}));
      s.mask.reset();
    }
  }
}

const DomainData& DatasetRegistry::domain(DomainId d) const {
  if (d.value < 1 || d.value > n_domains()) {
    throw InvalidInput("domain id " + std::to_string(d.value) + " outside [1, " + std::to_string(n_domains()) + "]");
  }
  return domains_[d.index()];
}

std::size_t DatasetRegistry::size(DomainId d) const {
  const auto& dom = domain(d);
  return dom.labeled.size() + dom.unlabeled.size();
}

std::vector<const DomainSample*> DatasetRegistry::samples(DomainId d) const {
  const auto& dom = domain(d);
  std::vector<const DomainSample*> out;
  out.reserve(dom.labeled.size() + dom.unlabeled.size());
  for (const auto& s : dom.labeled) out.push_back(&s);
  for (const auto& s : dom.unlabeled) out.push_back(&s);
  return out;
}

bool DatasetRegistry::has_hidden_masks() const {
  bool any = false;
  for (const auto& masks : hidden_) {
    for (const auto& m : masks) {
      if (m.labels.empty()) return false;
      any = true;
    }
  }
  return any;
}

const Mask& DatasetRegistry::diagnostic_mask(DomainId d, std::size_t i) const {
  const auto& dom = domain(d);
  if (i >= dom.unlabeled.size()) throw InvalidInput("diagnostic_mask: index out of range");
  const Mask& m = hidden_[d.index()][i];
  if (m.labels.empty()) throw InvalidInput("sample " + dom.unlabeled[i].sample_id + " has no hidden mask");
  return m;
}

void SyntheticDomainSpec::validate() const {
  if (image_size <= 0) throw InvalidInput("synthetic spec: image_size must be positive");
  if (n_classes != 2 && n_classes != 3) throw InvalidInput("synthetic spec: n_classes must be 2 or 3");
  if (min_objects < 1 || max_objects < min_objects) throw InvalidInput("synthetic spec: object count range invalid");
  if (min_radius <= 0.0 || max_radius < min_radius) throw InvalidInput("synthetic spec: radius range invalid");
  for (const auto& a : appearances) {
    if (a.gamma <= 0.0 || a.contrast <= 0.0 || a.noise < 0.0) {
      throw InvalidInput("synthetic spec: appearance needs gamma > 0, contrast > 0, noise >= 0");
    }
  }
}

std::vector<DomainAppearance> default_appearances() {
  return {
      {.gamma = 1.0, .brightness = 0.0, .contrast = 1.0, .noise = 0.03, .texture_frequency = 3.0},
      {.gamma = 0.5, .brightness = 0.1, .contrast = 0.8, .noise = 0.05, .texture_frequency = 5.0},
      {.gamma = 2.0, .brightness = -0.05, .contrast = 1.1, .noise = 0.04, .texture_frequency = 2.0},
      {.gamma = 1.0, .brightness = 0.55, .contrast = 0.3, .noise = 0.05, .texture_frequency = 4.0},
  };
}

RenderedSample render_synthetic(const SyntheticDomainSpec& spec, const DomainAppearance& app,
                                std::uint64_t geometry_seed, std::uint64_t appearance_seed) {
  spec.validate();
  const int size = spec.image_size;
  RenderedSample out{Image(1, size, size), Mask(size, size)};

  Rng geo(geometry_seed);
  const int n_objects = geo.uniform_int(spec.min_objects, spec.max_objects);
  for (int o = 0; o < n_objects; ++o) {
    const double cx = geo.uniform(0.2, 0.8) * size;
    const double cy = geo.uniform(0.2, 0.8) * size;
    const double ra = geo.uniform(spec.min_radius, spec.max_radius) * size;
    const double rb = geo.uniform(spec.min_radius, spec.max_radius) * size;
    const double theta = geo.uniform(0.0, std::numbers::pi);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (ct * dx + st * dy) / ra;
        const double v = (-st * dx + ct * dy) / rb;
        const double r2 = u * u + v * v;
        if (r2 <= 1.0) {
          std::uint8_t& label = out.mask.at(y, x);
          if (label == 0) label = 1;
          if (spec.n_classes == 3 && r2 <= 0.25) label = 2;
        }
      }
    }
  }

  Rng look(appearance_seed);
  const double phase_x = look.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_y = look.uniform(0.0, 2.0 * std::numbers::pi);
  const double f = 2.0 * std::numbers::pi * app.texture_frequency / size;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const std::uint8_t label = out.mask.at(y, x);
      double v = label == 0 ? spec.background_level : label == 1 ? spec.foreground_level : spec.core_level;
      v += spec.texture_amplitude * std::sin(f * x + phase_x) * std::sin(f * y + phase_y);
      v = std::clamp(v, 0.0, 1.0);
      v = std::clamp(app.contrast * std::pow(v, app.gamma) + app.brightness, 0.0, 1.0);
      v += look.normal(0.0, app.noise);
      out.image.at(0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

DatasetRegistry make_synthetic_registry(const SyntheticDomainSpec& spec_in, int k_domains,
                                        int n_per_domain) {
  SyntheticDomainSpec spec = spec_in;
  if (spec.appearances.empty()) spec.appearances = default_appearances();
  spec.validate();
  if (k_domains < 2) throw InvalidInput("synthetic registry needs at least 2 domains, got " + std::to_string(k_domains));
  if (n_per_domain < 1) throw InvalidInput("synthetic registry needs at least 1 sample per domain");

  std::vector<DomainData> domains;
  for (int k = 1; k <= k_domains; ++k) {
    DomainData dom;
    dom.name = "domain" + std::to_string(k);
    const auto& app = spec.appearances[(k - 1) % spec.appearances.size()];
    for (int i = 0; i < n_per_domain; ++i) {
      const std::uint64_t stream = static_cast<std::uint64_t>(k) * 1000003ULL + i;
      auto r = render_synthetic(spec, app, derive_seed(spec.seed, stream),
                                derive_seed(spec.seed ^ 0x5bd1e995ULL, stream));
      char id[32];
      std::snprintf(id, sizeof id, "d%d_%04d", k, i);
      dom.labeled.push_back({std::move(r.image), std::move(r.mask), DomainId{k}, id});
    }
    domains.push_back(std::move(dom));
  }
  return DatasetRegistry(spec.n_classes, std::move(domains));
}

namespace {

// All samples of a domain in registry order, with masks restored.
std::vector<DomainSample> restore(const DatasetRegistry& registry, DomainId d) {
  std::vector<DomainSample> all;
  const auto& dom = registry.domain(d);
  for (const auto& s : dom.labeled) all.push_back(s);
  for (std::size_t i = 0; i < dom.unlabeled.size(); ++i) {
    DomainSample s = dom.unlabeled[i];
    try {
      s.mask = registry.diagnostic_mask(d, i);
    } catch (const InvalidInput&) {
      s.mask.reset();
    }
    all.push_back(std::move(s));
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
  return all;
}

}  // namespace

DatasetRegistry split_labeled_unlabeled(const DatasetRegistry& registry, double fraction,
                                        std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidInput("labeled fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  std::vector<DomainData> domains;
  std::vector<std::vector<Mask>> hidden;
  for (int k = 1; k <= registry.n_domains(); ++k) {
    auto all = restore(registry, DomainId{k});
    const auto n_labeled = static_cast<std::size_t>(std::llround(fraction * all.size()));
    if (n_labeled == 0) {
      throw InvalidInput("labeled fraction " + std::to_string(fraction) + " leaves domain " +
                         registry.domain(DomainId{k}).name + " without labeled samples");
    }
    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    std::vector<bool> is_labeled(all.size(), false);
    for (std::size_t i = 0; i < n_labeled; ++i) is_labeled[order[i]] = true;

    DomainData dom;
    dom.name = registry.domain(DomainId{k}).name;
    std::vector<Mask> masks;
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (is_labeled[i]) {
        if (!all[i].mask) throw InvalidInput("sample " + all[i].sample_id + " selected as labeled has no mask");
        dom.labeled.push_back(std::move(all[i]));
      } else {
        masks.push_back(all[i].mask.value_or(Mask{}));
        all[i].mask.reset();
        dom.unlabeled.push_back(std::move(all[i]));
      }
    }
    domains.push_back(std::move(dom));
    hidden.push_back(std::move(masks));
  }
  DatasetRegistry out(registry.n_classes(), std::move(domains));
  out.hidden_ = std::move(hidden);
  return out;
}

LeaveOneOut leave_one_out(const DatasetRegistry& registry, DomainId unseen) {
  const int total = registry.n_domains();
  if (total < 2) throw InvalidInput("leave-one-out needs at least 2 domains");
  if (unseen.value < 1 || unseen.value > total) {
    throw InvalidInput("unseen domain " + std::to_string(unseen.value) + " outside [1, " + std::to_string(total) + "]");
  }
  LeaveOneOut out;
  out.remap.assign(total, 0);
  std::vector<DomainData> domains;
  std::vector<std::vector<Mask>> hidden;
  int next = 1;
  for (int k = 1; k <= total; ++k) {
    if (k == unseen.value) {
      out.test = restore(registry, DomainId{k});
      continue;
    }
    out.remap[k - 1] = next;
    DomainData dom = registry.domain(DomainId{k});
    for (auto& s : dom.labeled) s.domain = DomainId{next};
    for (auto& s : dom.unlabeled) s.domain = DomainId{next};
    domains.push_back(std::move(dom));
    hidden.push_back(registry.hidden_[k - 1]);
    ++next;
  }
  out.train.n_classes_ = registry.n_classes();
  out.train.domains_ = std::move(domains);
  out.train.hidden_ = std::move(hidden);
  if (out.train.n_domains() == 1) {
    warn("leave-one-out leaves a single source domain; random-forward perturbation is disabled");
  }
  return out;
}

// PNG I/O via the libpng simplified API.

namespace {

std::vector<std::uint8_t> read_png(const fs::path& path, png_uint_32 format, int& width, int& height) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw LoadError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw LoadError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return buffer;
}

void write_png(const fs::path& path, png_uint_32 format, int width, int height, const std::uint8_t* data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + img.message);
  }
}

bool is_rgb(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw LoadError("cannot read PNG " + path.string() + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png_image_free(&img);
  return color;
}

}  // namespace

Image read_png_image(const fs::path& path) {
  const bool rgb = is_rgb(path);
  int w = 0, h = 0;
  const auto buf = read_png(path, rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, w, h);
  const int c = rgb ? 3 : 1;
  Image image(c, h, w);
  for (std::size_t i = 0; i < image.plane(); ++i) {
    for (int ch = 0; ch < c; ++ch) image.pixels[ch * image.plane() + i] = buf[i * c + ch] / 255.0f;
  }
  return image;
}

Mask read_png_mask(const fs::path& path) {
  int w = 0, h = 0;
  auto buf = read_png(path, PNG_FORMAT_GRAY, w, h);
  Mask mask(h, w);
  mask.labels = std::move(buf);
  return mask;
}

void write_png_image(const fs::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidInput("PNG images must have 1 or 3 channels");
  std::vector<std::uint8_t> buf(image.pixels.size());
  const int c = image.channels;
  for (std::size_t i = 0; i < image.plane(); ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float v = std::clamp(image.pixels[ch * image.plane() + i], 0.0f, 1.0f);
      buf[i * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  write_png(path, c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, image.width, image.height, buf.data());
}

void write_png_mask(const fs::path& path, const Mask& mask) {
  write_png(path, PNG_FORMAT_GRAY, mask.width, mask.height, mask.labels.data());
}

void write_png_rgb(const fs::path& path, int width, int height, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3) throw InvalidInput("RGB buffer size mismatch");
  write_png(path, PNG_FORMAT_RGB, width, height, rgb.data());
}

void save_registry(const DatasetRegistry& registry, const fs::path& root) {
  nlohmann::json manifest{{"format", "siab-dataset"}, {"version", 1}, {"n_classes", registry.n_classes()}};
  manifest["domains"] = nlohmann::json::array();
  for (int k = 1; k <= registry.n_domains(); ++k) {
    const auto& name = registry.domain(DomainId{k}).name;
    nlohmann::json ids = nlohmann::json::array();
    for (const auto& s : restore(registry, DomainId{k})) {
      if (!s.mask) throw InvalidInput("sample " + s.sample_id + " has no mask to write");
      write_png_image(root / name / "images" / (s.sample_id + ".png"), s.image);
      write_png_mask(root / name / "masks" / (s.sample_id + ".png"), *s.mask);
      ids.push_back(s.sample_id);
    }
    manifest["domains"].push_back({{"name", name}, {"samples", ids}});
  }
  fs::create_directories(root);
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

DatasetRegistry load_registry(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw LoadError("dataset manifest " + (root / "manifest.json").string() + " not found");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "siab-dataset") throw LoadError("dataset manifest key 'format': unexpected value");
  if (!manifest.contains("n_classes")) throw LoadError("dataset manifest key 'n_classes' missing");
  if (!manifest.contains("domains")) throw LoadError("dataset manifest key 'domains' missing");
  const int n_classes = manifest["n_classes"].get<int>();
  std::vector<DomainData> domains;
  int k = 1;
  for (const auto& d : manifest["domains"]) {
    DomainData dom;
    dom.name = d.at("name").get<std::string>();
    for (const auto& id_json : d.at("samples")) {
      const auto id = id_json.get<std::string>();
      DomainSample s;
      s.image = read_png_image(root / dom.name / "images" / (id + ".png"));
      const auto mask_path = root / dom.name / "masks" / (id + ".png");
      if (fs::exists(mask_path)) {
        s.mask = read_png_mask(mask_path);
        if (s.mask->height != s.image.height || s.mask->width != s.image.width) {
          throw LoadError("mask " + mask_path.string() + " does not match its image");
        }
        for (auto v : s.mask->labels) {
          if (v >= n_classes) throw LoadError("mask " + mask_path.string() + " has class index >= n_classes");
        }
      }
      s.domain = DomainId{k};
      s.sample_id = id;
      (s.mask ? dom.labeled : dom.unlabeled).push_back(std::move(s));
    }
    domains.push_back(std::move(dom));
    ++k;
  }
  return DatasetRegistry(n_classes, std::move(domains));
}

}  // namespace siab
