#pragma once

#include <arpa/inet.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <string_view>

#include "nelscope/errors.hpp"

namespace nelscope {

// One IPv4 or IPv6 address, stored as raw bytes with a canonical text form.
class IpAddress {
 public:
  IpAddress() = default;

  static IpAddress parse(std::string_view text) {
    std::string s(text);
    IpAddress ip;
    in_addr v4{};
    if (inet_pton(AF_INET, s.c_str(), &v4) == 1) {
      ip.v6_ = false;
      std::memcpy(ip.bytes_.data(), &v4, 4);
      return ip;
    }
    in6_addr v6{};
    if (inet_pton(AF_INET6, s.c_str(), &v6) == 1) {
      ip.v6_ = true;
      std::memcpy(ip.bytes_.data(), &v6, 16);
      return ip;
    }
    throw ValidationError("not an IPv4 or IPv6 address: " + s);
  }

  static bool is_valid(std::string_view text) {
    std::string s(text);
    in_addr v4{};
    in6_addr v6{};
    return inet_pton(AF_INET, s.c_str(), &v4) == 1 ||
           inet_pton(AF_INET6, s.c_str(), &v6) == 1;
  }

  static IpAddress from_v4_bytes(const std::uint8_t* b) {
    IpAddress ip;
    ip.v6_ = false;
    std::memcpy(ip.bytes_.data(), b, 4);
    return ip;
  }

  static IpAddress from_v6_bytes(const std::uint8_t* b) {
    IpAddress ip;
    ip.v6_ = true;
    std::memcpy(ip.bytes_.data(), b, 16);
    return ip;
  }

  bool is_v6() const { return v6_; }
  const std::uint8_t* data() const { return bytes_.data(); }
  std::size_t size() const { return v6_ ? 16 : 4; }

  // Canonical text form (IPv6 compressed, lowercase), used for hashing and
  // everywhere an address appears in logs.
  std::string to_string() const {
    char buf[INET6_ADDRSTRLEN] = {0};
    if (v6_) {
      in6_addr a{};
      std::memcpy(&a, bytes_.data(), 16);
      inet_ntop(AF_INET6, &a, buf, sizeof(buf));
    } else {
      in_addr a{};
      std::memcpy(&a, bytes_.data(), 4);
      inet_ntop(AF_INET, &a, buf, sizeof(buf));
    }
    return buf;
  }

  // Full 8-group hex form, no compression: "2001:0db8:...:0001". Only
  // meaningful for IPv6; hostname encoding relies on it being unambiguous.
  std::string to_uncompressed_v6() const {
    std::string out;
    char grp[6];
    for (int i = 0; i < 8; ++i) {
      std::uint16_t g = static_cast<std::uint16_t>(bytes_[2 * i]) << 8 |
                        bytes_[2 * i + 1];
      std::snprintf(grp, sizeof(grp), "%04x", g);
      if (i) out.push_back(':');
      out += grp;
    }
    return out;
  }

  friend bool operator==(const IpAddress& a, const IpAddress& b) {
    return a.v6_ == b.v6_ &&
           std::memcmp(a.bytes_.data(), b.bytes_.data(), a.size()) == 0;
  }
  friend bool operator!=(const IpAddress& a, const IpAddress& b) { return !(a == b); }
  friend bool operator<(const IpAddress& a, const IpAddress& b) {
    if (a.v6_ != b.v6_) return !a.v6_;
    return std::memcmp(a.bytes_.data(), b.bytes_.data(), a.size()) < 0;
  }

 private:
  bool v6_ = false;
  std::array<std::uint8_t, 16> bytes_{};
};

}  // namespace nelscope
