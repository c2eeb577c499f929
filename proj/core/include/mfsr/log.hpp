#pragma once

#include <string>

namespace mfsr {

// Verbosity is read once from the MFSR_LOG environment variable:
// "error" (default), "info", or "debug".
enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level();

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace mfsr
