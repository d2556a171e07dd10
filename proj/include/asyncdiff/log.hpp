#pragma once

#include <string>

namespace asyncdiff {

// level filter comes from the ASYNCDIFF_LOG environment variable:
// debug | info | warn | error | off  (default: warn)
enum class LogLevel { Debug = 0, Info, Warn, Error, Off };

LogLevel log_level();

void log_debug(const std::string& msg);
void log_info(const std::string& msg);
void log_warn(const std::string& msg);
void log_error(const std::string& msg);

}  // namespace asyncdiff
