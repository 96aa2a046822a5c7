#pragma once

#include <functional>
#include <string>

namespace qaoa2 {

using WarningHandler = std::function<void(const std::string&)>;

/// Replaces the process-wide warning sink (default: stderr). Returns the
/// previous handler.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(const std::string& message);

/// Silences warnings for the lifetime of the guard.
class ScopedWarningCapture {
 public:
  explicit ScopedWarningCapture(WarningHandler handler = [](const std::string&) {});
  ~ScopedWarningCapture();
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

 private:
  WarningHandler previous_;
};

}  // namespace qaoa2
