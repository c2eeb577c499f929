#include "mfsr/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace mfsr {

static LogLevel parse_level() {
  const char* env = std::getenv("MFSR_LOG");
  if (env == nullptr) return LogLevel::Error;
  if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
  if (std::strcmp(env, "info") == 0) return LogLevel::Info;
  return LogLevel::Error;
}

LogLevel log_level() {
  static const LogLevel level = parse_level();
  return level;
}

static void emit(const char* tag, const std::string& msg) {
  std::fprintf(stderr, "[mfsr:%s] %s\n", tag, msg.c_str());
}

void log_error(const std::string& msg) { emit("error", msg); }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::Info) emit("info", msg);
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::Debug) emit("debug", msg);
}

}  // namespace mfsr
