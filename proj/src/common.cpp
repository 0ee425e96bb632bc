#include "morphfit/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace morphfit {

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("MORPHFIT_LOG");
    if (env == nullptr) return LogLevel::info;
    if (std::strcmp(env, "quiet") == 0) return LogLevel::quiet;
    if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "[morphfit] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "[morphfit:debug] %s\n", msg.c_str());
}

}  // namespace morphfit
