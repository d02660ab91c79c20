#pragma once

#include <string_view>

namespace ptyfed::log {

// Human-readable diagnostics go to standard error only.
void set_verbosity(int level);  // 0 warn, 1 info, 2 debug
void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace ptyfed::log
