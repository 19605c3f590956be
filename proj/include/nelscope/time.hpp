#pragma once

#include <chrono>
#include <cstdint>

namespace nelscope {

// All timestamps in this library are milliseconds since the unix epoch.
// The simulator feeds virtual milliseconds through the same type.
using Timestamp = std::int64_t;
using DurationMs = std::int64_t;

inline constexpr DurationMs kMillisPerSecond = 1000;
inline constexpr DurationMs kMillisPerMinute = 60 * kMillisPerSecond;

inline Timestamp wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline std::int64_t epoch_minute(Timestamp ts_ms) { return ts_ms / kMillisPerMinute; }

inline std::int64_t seconds_to_ms(std::int64_t s) { return s * kMillisPerSecond; }

}  // namespace nelscope
