#pragma once

#include <functional>
#include <string>

namespace sg {

using WarningHandler = std::function<void(const std::string&)>;

// Installs a process-wide handler and returns the previous one. The default
// writes "warning: <msg>" to stderr.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

}  // namespace sg
