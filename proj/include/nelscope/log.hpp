#pragma once

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string_view>

namespace nelscope {

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Level comes from NEL_SCOPE_LOG_LEVEL (error|warn|info|debug), default warn.
inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("NEL_SCOPE_LOG_LEVEL");
    if (!env) return LogLevel::kWarn;
    if (!std::strcmp(env, "error")) return LogLevel::kError;
    if (!std::strcmp(env, "info")) return LogLevel::kInfo;
    if (!std::strcmp(env, "debug")) return LogLevel::kDebug;
    return LogLevel::kWarn;
  }();
  return level;
}

inline void log_line(LogLevel lvl, std::string_view tag, std::string_view msg) {
  if (lvl > log_level()) return;
  static std::mutex mu;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << tag << ": " << msg
            << std::endl;
}

}  // namespace nelscope
