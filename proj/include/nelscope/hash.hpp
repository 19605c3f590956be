#pragma once

#include <cstdint>
#include <string_view>

namespace nelscope {

// FNV-1a, 64-bit. Stable across platforms and trivially reimplementable,
// which is what endpoint selection needs: any conforming implementation in
// any language must pick the same endpoint for the same (minute, client).
inline std::uint64_t fnv1a_64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace nelscope
