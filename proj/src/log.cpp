#include "siab/log.hpp"

#include <iostream>

namespace siab {
namespace {
WarningSink& current_sink() {
  static WarningSink sink;
  return sink;
}
}  // namespace

void warn(std::string_view message) {
  if (auto& sink = current_sink()) {
    sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

ScopedWarningSink::ScopedWarningSink(WarningSink sink) : previous_(std::move(current_sink())) {
  current_sink() = std::move(sink);
}

ScopedWarningSink::~ScopedWarningSink() { current_sink() = std::move(previous_); }

}  // namespace siab
