#pragma once

#include <cctype>
#include <map>
#include <string>
#include <string_view>

#include "nelscope/time.hpp"

namespace nelscope {

// Transport-agnostic request/response shapes. The live server adapts
// cpp-httplib onto these; the simulator constructs them directly, so the
// service code is identical either way.
struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> headers;
  std::string body;
  std::string peer_ip;
  std::string host;  // Host header, may carry :port
  Timestamp now = 0;
  double transport_rtt_ms = 0.0;
};

struct HttpResponse {
  int status = 0;
  std::map<std::string, std::string> headers;
  std::string body;
};

namespace detail {

inline std::string lookup_header(const std::map<std::string, std::string>& headers,
                                 std::string_view name) {
  for (const auto& [k, v] : headers) {
    if (k.size() != name.size()) continue;
    bool eq = true;
    for (std::size_t i = 0; i < k.size(); ++i) {
      if (std::tolower(static_cast<unsigned char>(k[i])) !=
          std::tolower(static_cast<unsigned char>(name[i]))) {
        eq = false;
        break;
      }
    }
    if (eq) return v;
  }
  return {};
}

inline std::string strip_port(std::string_view host) {
  auto colon = host.rfind(':');
  if (colon != std::string_view::npos && host.find(']') == std::string_view::npos)
    return std::string(host.substr(0, colon));
  return std::string(host);
}

}  // namespace detail

}  // namespace nelscope
