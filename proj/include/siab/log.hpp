#pragma once

#include <functional>
#include <string_view>

namespace siab {

using WarningSink = std::function<void(std::string_view)>;

// Warnings go to stderr unless a sink is installed.
void warn(std::string_view message);

// Installs `sink` for the lifetime of the object; restores the previous sink.
class ScopedWarningSink {
 public:
  explicit ScopedWarningSink(WarningSink sink);
  ~ScopedWarningSink();
  ScopedWarningSink(const ScopedWarningSink&) = delete;
  ScopedWarningSink& operator=(const ScopedWarningSink&) = delete;

 private:
  WarningSink previous_;
};

}  // namespace siab
