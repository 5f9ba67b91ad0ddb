#include "siab/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "siab/error.hpp"

namespace siab {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw InvalidInput("config key '" + key + "': not a number: '" + v + "'");
  return out;
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw InvalidInput("config key '" + key + "': not an integer: '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("config key '" + key + "': not a boolean: '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip text
  return std::string(buf, res.ptr);
}

struct Field {
  ConfigKey key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename M>
Field real(const char* name, const char* help, M member) {
  return {{name, help},
          [=](TrainConfig& c, const std::string& v) { c.*member = to_double(name, v); },
          [=](const TrainConfig& c) { return fmt(c.*member); }};
}

template <typename M>
Field integer(const char* name, const char* help, M member) {
  return {{name, help},
          [=](TrainConfig& c, const std::string& v) {
            c.*member = static_cast<std::remove_reference_t<decltype(c.*member)>>(to_long(name, v));
          },
          [=](const TrainConfig& c) { return std::to_string(c.*member); }};
}

template <typename M>
Field strong_real(const char* name, const char* help, M member) {
  return {{name, help},
          [=](TrainConfig& c, const std::string& v) { c.strong.*member = to_double(name, v); },
          [=](const TrainConfig& c) { return fmt(c.strong.*member); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      real("lambda_h", "weight of the histogram-matching stream", &TrainConfig::lambda_h),
      real("lambda_r", "weight of the random-forward stream", &TrainConfig::lambda_r),
      real("lambda_u", "weight of the unsupervised loss", &TrainConfig::lambda_u),
      real("lambda_af", "weight of the aggregated-branch supervised loss", &TrainConfig::lambda_af),
      real("tau", "pseudo-label confidence threshold", &TrainConfig::tau),
      real("p_rand", "probability of affine substitution per normalization site", &TrainConfig::p_rand),
      real("t_ensemble", "weight of the individual branch in the pseudo-label ensemble", &TrainConfig::t_ensemble),
      {{"masked_mean", "masked CE denominator: all | masked"},
       [](TrainConfig& c, const std::string& v) {
         if (v == "all") c.masked_mean = MaskedMean::AllPixels;
         else if (v == "masked") c.masked_mean = MaskedMean::MaskedPixels;
         else throw InvalidInput("config key 'masked_mean': expected all|masked, got '" + v + "'");
       },
       [](const TrainConfig& c) { return std::string(c.masked_mean == MaskedMean::AllPixels ? "all" : "masked"); }},
      {{"use_siab", "convert normalization sites into individual/aggregated branches"},
       [](TrainConfig& c, const std::string& v) { c.use_siab = to_bool("use_siab", v); },
       [](const TrainConfig& c) { return std::string(c.use_siab ? "true" : "false"); }},
      {{"sab_stats", "aggregated-branch statistics: mixed | batch | instance"},
       [](TrainConfig& c, const std::string& v) {
         if (v == "mixed") c.sab_stats = SabStats::Mixed;
         else if (v == "batch") c.sab_stats = SabStats::BatchOnly;
         else if (v == "instance") c.sab_stats = SabStats::InstanceOnly;
         else throw InvalidInput("config key 'sab_stats': expected mixed|batch|instance, got '" + v + "'");
       },
       [](const TrainConfig& c) {
         return std::string(c.sab_stats == SabStats::Mixed ? "mixed"
                            : c.sab_stats == SabStats::BatchOnly ? "batch" : "instance");
       }},
      real("alpha_init", "initial mixing coefficient, in (0, 1)", &TrainConfig::alpha_init),
      {{"widths", "comma-separated stage widths of the U-shaped net"},
       [](TrainConfig& c, const std::string& v) {
         std::vector<int> w;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) w.push_back(static_cast<int>(to_long("widths", trim(item))));
         c.widths = w;
       },
       [](const TrainConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.widths.size(); ++i) s += (i ? "," : "") + std::to_string(c.widths[i]);
         return s;
       }},
      real("ema_momentum", "teacher EMA momentum", &TrainConfig::ema_momentum),
      real("lr", "AdamW learning rate", &TrainConfig::lr),
      real("weight_decay", "AdamW decoupled weight decay", &TrainConfig::weight_decay),
      real("alpha_lr_multiplier", "learning-rate multiplier for mixing logits", &TrainConfig::alpha_lr_multiplier),
      integer("iterations", "optimization steps", &TrainConfig::iterations),
      integer("labeled_per_domain", "labeled samples per source domain per step", &TrainConfig::labeled_per_domain),
      integer("unlabeled_per_domain", "unlabeled samples per source domain per step", &TrainConfig::unlabeled_per_domain),
      {{"seed", "master seed"},
       [](TrainConfig& c, const std::string& v) {
         std::uint64_t out = 0;
         const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
         if (ec != std::errc() || ptr != v.data() + v.size()) throw InvalidInput("config key 'seed': not an unsigned integer: '" + v + "'");
         c.seed = out;
       },
       [](const TrainConfig& c) { return std::to_string(c.seed); }},
      real("labeled_fraction", "labeled share of each source domain", &TrainConfig::labeled_fraction),
      integer("unseen", "held-out domain id (1-based, before remapping)", &TrainConfig::unseen),
      integer("eval_every", "unseen-domain evaluation period in steps (0: only at the end)", &TrainConfig::eval_every),
      integer("eval_batch", "batch size for evaluation", &TrainConfig::eval_batch),
      strong_real("strong_brightness", "brightness jitter strength s, factor in [1-s, 1+s]", &StrongAugmentOptions::brightness),
      strong_real("strong_contrast", "contrast jitter strength", &StrongAugmentOptions::contrast),
      strong_real("strong_saturation", "saturation jitter strength", &StrongAugmentOptions::saturation),
      strong_real("blur_sigma_min", "lower bound of the blur sigma", &StrongAugmentOptions::blur_sigma_min),
      strong_real("blur_sigma_max", "upper bound of the blur sigma", &StrongAugmentOptions::blur_sigma_max),
      strong_real("strong_prob", "probability of each strong sub-operation", &StrongAugmentOptions::apply_prob),
  };
  return table;
}

const Field& find(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key.name == key) return f;
  }
  throw InvalidInput("unknown config key '" + key + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

void TrainConfig::set(const std::string& key, const std::string& value) { find(key).set(*this, trim(value)); }

std::string TrainConfig::get(const std::string& key) const { return find(key).get(*this); }

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidInput("config: " + m); };
  if (!(tau > 0.0 && tau <= 1.0)) fail("tau must lie in (0, 1]");
  if (!(p_rand >= 0.0 && p_rand <= 1.0)) fail("p_rand must lie in [0, 1]");
  if (!(t_ensemble >= 0.0 && t_ensemble <= 1.0)) fail("t_ensemble must lie in [0, 1]");
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) fail("ema_momentum must lie in [0, 1)");
  for (auto [name, v] : {std::pair{"lambda_h", lambda_h}, {"lambda_r", lambda_r}, {"lambda_u", lambda_u},
                         {"lambda_af", lambda_af}}) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be >= 0");
  }
  if (!(alpha_init > 0.0 && alpha_init < 1.0)) fail("alpha_init must lie in (0, 1)");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(alpha_lr_multiplier >= 0.0)) {
    fail("lr, weight_decay and alpha_lr_multiplier must be >= 0");
  }
  if (iterations < 0) fail("iterations must be >= 0");
  if (labeled_per_domain < 1 || unlabeled_per_domain < 1) fail("per-domain batch sizes must be >= 1");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) fail("labeled_fraction must lie in (0, 1]");
  if (unseen < 1) fail("unseen must be a 1-based domain id");
  if (eval_every < 0 || eval_batch < 1) fail("eval_every must be >= 0 and eval_batch >= 1");
  if (widths.empty()) fail("widths must not be empty");
  for (int w : widths) {
    if (w < 1) fail("widths must be positive");
  }
  if (!use_siab && lambda_r > 0.0) fail("lambda_r > 0 requires use_siab (random-forward needs domain branches)");
  if (!use_siab && sab_stats != SabStats::Mixed) fail("sab_stats only applies with use_siab");
  strong.validate();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key.name + " = " + f.get(*this) + "\n";
  return out;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields()) j[f.key.name] = f.get(*this);
  return j;
}

std::string TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace siab
