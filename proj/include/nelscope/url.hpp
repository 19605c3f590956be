#pragma once

#include <string>
#include <string_view>

#include "nelscope/errors.hpp"

namespace nelscope {

// Just enough URL handling for report endpoints and page resources.
struct UrlParts {
  std::string scheme;
  std::string host;
  int port = 0;  // 0 = scheme default
  std::string path;

  int effective_port() const {
    if (port) return port;
    return scheme == "https" ? 443 : 80;
  }
};

inline UrlParts parse_url(std::string_view url) {
  UrlParts out;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos || scheme_end == 0)
    throw ParseError("not an absolute URL: " + std::string(url));
  out.scheme = std::string(url.substr(0, scheme_end));
  std::string_view rest = url.substr(scheme_end + 3);
  auto path_start = rest.find('/');
  std::string_view authority =
      path_start == std::string_view::npos ? rest : rest.substr(0, path_start);
  out.path = path_start == std::string_view::npos
                 ? "/"
                 : std::string(rest.substr(path_start));
  auto colon = authority.rfind(':');
  // Bracketed IPv6 hosts keep their colons; only a trailing :port is split.
  if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
    out.host = std::string(authority.substr(0, colon));
    try {
      out.port = std::stoi(std::string(authority.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ParseError("bad port in URL: " + std::string(url));
    }
  } else {
    out.host = std::string(authority);
  }
  if (out.host.empty()) throw ParseError("empty host in URL: " + std::string(url));
  return out;
}

}  // namespace nelscope
