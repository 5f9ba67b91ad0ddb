#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace siab {

/// Optimizer parameter groups. Mixing logits train at a scaled learning
/// rate without weight decay.
enum class ParamGroup { Default, Mixing };

struct Parameter {
  std::vector<float> value;
  std::vector<float> grad;
  ParamGroup group = ParamGroup::Default;

  Parameter() = default;
  explicit Parameter(std::size_t n, float fill = 0.0f, ParamGroup g = ParamGroup::Default)
      : value(n, fill), grad(n, 0.0f), group(g) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.assign(value.size(), 0.0f); }
};

/// Callbacks used to walk a module's learnable parameters and non-learnable
/// buffers under hierarchical dotted names.
struct ParamVisitor {
  std::function<void(const std::string&, Parameter&)> on_parameter;
  std::function<void(const std::string&, std::vector<float>&)> on_buffer;
};

/// 1-based identifier of a source domain.
struct DomainId {
  int value = 1;
  constexpr int index() const { return value - 1; }
  constexpr bool operator==(const DomainId&) const = default;
  constexpr auto operator<=>(const DomainId&) const = default;
};

}  // namespace siab
