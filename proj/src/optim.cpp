#include "siab/optim.hpp"

#include <cmath>

#include "siab/error.hpp"

namespace siab {

void AdamW::step(SegmentationNet& net) {
  ++steps_;
  const double bias1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bias2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  net.visit({.on_parameter =
                 [&](const std::string& name, Parameter& p) {
                   const bool mixing = p.group == ParamGroup::Mixing;
                   const double lr = mixing ? options_.lr * options_.mixing_lr_multiplier : options_.lr;
                   const double wd = mixing ? 0.0 : options_.weight_decay;
                   auto& s = state_[name];
                   if (s.m.size() != p.size()) {
                     s.m.assign(p.size(), 0.0f);
                     s.v.assign(p.size(), 0.0f);
                   }
                   for (std::size_t i = 0; i < p.size(); ++i) {
                     const double g = p.grad[i];
                     s.m[i] = static_cast<float>(options_.beta1 * s.m[i] + (1.0 - options_.beta1) * g);
                     s.v[i] = static_cast<float>(options_.beta2 * s.v[i] + (1.0 - options_.beta2) * g * g);
                     const double m_hat = s.m[i] / bias1;
                     const double v_hat = s.v[i] / bias2;
                     double w = p.value[i];
                     w -= lr * wd * w;
                     w -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
                     p.value[i] = static_cast<float>(w);
                   }
                 },
             .on_buffer = {}});
}

Archive AdamW::to_archive() const {
  Archive a;
  a.header["kind"] = "adamw_state";
  a.header["steps"] = steps_;
  for (const auto& [name, s] : state_) {
    a.arrays.push_back({name + ".m", "buffer", s.m});
    a.arrays.push_back({name + ".v", "buffer", s.v});
  }
  return a;
}

AdamW AdamW::from_archive(const Archive& archive, AdamWOptions options) {
  if (archive.header.value("kind", "") != "adamw_state") {
    throw LoadError("optimizer state key 'kind': not an optimizer state");
  }
  AdamW opt(options);
  opt.steps_ = archive.header.at("steps").get<long>();
  for (const auto& arr : archive.arrays) {
    const auto dot = arr.name.rfind('.');
    const std::string base = arr.name.substr(0, dot);
    const std::string which = arr.name.substr(dot + 1);
    auto& s = opt.state_[base];
    (which == "m" ? s.m : s.v) = arr.values;
  }
  return opt;
}

}  // namespace siab
