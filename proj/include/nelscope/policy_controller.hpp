#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nelscope/errors.hpp"
#include "nelscope/hash.hpp"
#include "nelscope/ip.hpp"
#include "nelscope/nel_protocol.hpp"
#include "nelscope/time.hpp"
#include "nelscope/url.hpp"

namespace nelscope {

// ---------------------------------------------------------------------------
// Configuration

enum class ControllerMode { kRegionSampling, kLdnsAssociation, kFixed };

inline std::string_view to_string(ControllerMode m) {
  switch (m) {
    case ControllerMode::kRegionSampling: return "region-sampling";
    case ControllerMode::kLdnsAssociation: return "ldns-association";
    case ControllerMode::kFixed: return "fixed";
  }
  return "fixed";
}

inline ControllerMode controller_mode_from_string(std::string_view s) {
  if (s == "region-sampling") return ControllerMode::kRegionSampling;
  if (s == "ldns-association") return ControllerMode::kLdnsAssociation;
  if (s == "fixed") return ControllerMode::kFixed;
  throw ConfigError("unknown controller mode: " + std::string(s));
}

struct Region {
  std::string region_id;
  std::string report_url;
};

struct ControllerConfig {
  std::string base_domain;
  std::vector<Region> regions;
  std::int64_t subdomain_count = 1;  // N: policies (and uploads) per minute
  double success_fraction = 0.0;
  double failure_fraction = 1.0;
  std::int64_t max_age = 0;
  ControllerMode mode = ControllerMode::kFixed;
  bool insecure_http = false;

  // In fixed mode the advertised region rotates: a nonzero period rotates on
  // the clock, and rotation_offset advances once per explicit rotate event.
  std::int64_t rotation_period_s = 0;
  std::int64_t rotation_offset = 0;

  // When set, a request whose leftmost host label names a region is steered
  // to that region, whatever the mode. This is how one serving site hands
  // out per-resource endpoints across the whole footprint.
  bool host_steering = false;

  void validate() const {
    if (base_domain.empty()) throw ConfigError("base_domain must be non-empty");
    if (regions.empty()) throw ConfigError("regions must be non-empty");
    if (subdomain_count < 1) throw ConfigError("subdomain_count must be >= 1");
    std::set<std::string> ids;
    for (const auto& r : regions) {
      if (r.region_id.empty()) throw ConfigError("region_id must be non-empty");
      if (!ids.insert(r.region_id).second)
        throw ConfigError("duplicate region_id: " + r.region_id);
      ReportGroup g{"default", max_age, {ReportEndpoint{r.report_url, 0, 1}}};
      validate_group(g);
      validate_endpoint_schemes(g, insecure_http);
    }
    validate_fraction(success_fraction, "success_fraction");
    validate_fraction(failure_fraction, "failure_fraction");
    if (max_age < 0) throw ConfigError("max_age must be non-negative");
    if (rotation_period_s < 0) throw ConfigError("rotation_period_s must be non-negative");
  }

  static ControllerConfig from_json(const Json& doc) {
    if (!doc.is_object()) throw ConfigError("controller config must be a JSON object");
    ControllerConfig cfg;
    try {
      cfg.base_domain = doc.at("base_domain").get<std::string>();
      for (const Json& rj : doc.at("regions")) {
        cfg.regions.push_back(Region{rj.at("region_id").get<std::string>(),
                                     rj.at("report_url").get<std::string>()});
      }
      if (doc.contains("subdomain_count"))
        cfg.subdomain_count = doc.at("subdomain_count").get<std::int64_t>();
      if (doc.contains("success_fraction"))
        cfg.success_fraction = doc.at("success_fraction").get<double>();
      if (doc.contains("failure_fraction"))
        cfg.failure_fraction = doc.at("failure_fraction").get<double>();
      if (doc.contains("max_age")) cfg.max_age = doc.at("max_age").get<std::int64_t>();
      if (doc.contains("mode"))
        cfg.mode = controller_mode_from_string(doc.at("mode").get<std::string>());
      if (doc.contains("insecure_http"))
        cfg.insecure_http = doc.at("insecure_http").get<bool>();
      if (doc.contains("rotation_period_s"))
        cfg.rotation_period_s = doc.at("rotation_period_s").get<std::int64_t>();
      if (doc.contains("host_steering"))
        cfg.host_steering = doc.at("host_steering").get<bool>();
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("bad controller config: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }

  static ControllerConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("cannot open config: " + path);
    Json doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
    return from_json(doc);
  }
};

struct RequestContext {
  IpAddress client_ip;
  std::string host;
  Timestamp now = 0;
  std::string resource_path;
};

// ---------------------------------------------------------------------------
// Endpoint sampling

// Bucket on hash("{epoch_minute}:{client}") so the chosen endpoint is stable
// within a minute, varies across minutes, and spreads evenly across a client
// population.
inline const Region& select_endpoint(const IpAddress& client_ip, Timestamp now,
                                     const std::vector<Region>& regions) {
  if (regions.empty()) throw ConfigError("select_endpoint: regions must be non-empty");
  std::string key = std::to_string(epoch_minute(now)) + ":" + client_ip.to_string();
  return regions[fnv1a_64(key) % regions.size()];
}

// ---------------------------------------------------------------------------
// Client-address hostname codec

// IPv4 "1.1.1.1" -> "1-1-1-1.<base>"; IPv6 uses the full uncompressed hex
// form with colons replaced by hyphens, so the label never needs "::".
inline std::string encode_client_hostname(const IpAddress& client_ip,
                                          std::string_view base_domain) {
  if (base_domain.empty()) throw ValidationError("base_domain must be non-empty");
  std::string label =
      client_ip.is_v6() ? client_ip.to_uncompressed_v6() : client_ip.to_string();
  for (char& c : label) {
    if (c == '.' || c == ':') c = '-';
  }
  return label + "." + std::string(base_domain);
}

namespace detail {

inline bool split_hostname_label(std::string_view hostname, std::string_view base_domain,
                                 std::string& label_out) {
  if (hostname.size() <= base_domain.size() + 1) return false;
  std::string_view tail = hostname.substr(hostname.size() - base_domain.size());
  if (tail != base_domain) return false;
  if (hostname[hostname.size() - base_domain.size() - 1] != '.') return false;
  label_out = std::string(hostname.substr(0, hostname.size() - base_domain.size() - 1));
  return true;
}

// The encoded form is a single label: 4 decimal octet parts or 8 hex groups.
inline bool try_decode_ip_label(std::string_view label, IpAddress& out) {
  if (label.find('.') != std::string_view::npos) return false;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : label) {
    if (c == '-') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  if (parts.size() == 4) {
    std::string dotted;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string& p = parts[i];
      if (p.empty() || p.size() > 3 ||
          !std::all_of(p.begin(), p.end(), [](unsigned char c) { return std::isdigit(c); }))
        return false;
      if (i) dotted.push_back('.');
      dotted += p;
    }
    if (!IpAddress::is_valid(dotted)) return false;
    out = IpAddress::parse(dotted);
    return !out.is_v6();
  }
  if (parts.size() == 8) {
    std::string coloned;
    for (std::size_t i = 0; i < 8; ++i) {
      const std::string& p = parts[i];
      if (p.size() != 4 ||
          !std::all_of(p.begin(), p.end(), [](unsigned char c) { return std::isxdigit(c); }))
        return false;
      if (i) coloned.push_back(':');
      coloned += p;
    }
    if (!IpAddress::is_valid(coloned)) return false;
    out = IpAddress::parse(coloned);
    return out.is_v6();
  }
  return false;
}

}  // namespace detail

inline IpAddress decode_client_hostname(std::string_view hostname,
                                        std::string_view base_domain) {
  std::string label;
  if (!detail::split_hostname_label(hostname, base_domain, label))
    throw DomainMismatchError("hostname not under base domain: " + std::string(hostname));
  IpAddress ip;
  if (!detail::try_decode_ip_label(label, ip))
    throw ParseError("label does not encode an IP address: " + label);
  return ip;
}

// ---------------------------------------------------------------------------
// Policy response generation

struct PolicyResponse {
  std::string nel_header;
  std::string report_to_header;
  std::string region_id;  // which region the advertised endpoint belongs to
};

namespace detail {

inline std::string leftmost_label(std::string_view host) {
  auto dot = host.find('.');
  return std::string(dot == std::string_view::npos ? host : host.substr(0, dot));
}

}  // namespace detail

// Pure in (ctx, cfg): everything time- or client-dependent flows in through
// the context, so concurrent request handling needs no extra state.
inline PolicyResponse build_policy_response(const RequestContext& ctx,
                                            const ControllerConfig& cfg) {
  cfg.validate();
  const Region* chosen = nullptr;
  std::string endpoint_url;

  if (cfg.host_steering) {
    std::string label = detail::leftmost_label(ctx.host);
    for (const auto& r : cfg.regions) {
      if (r.region_id == label) {
        chosen = &r;
        break;
      }
    }
  }
  if (!chosen) {
    switch (cfg.mode) {
      case ControllerMode::kRegionSampling:
        chosen = &select_endpoint(ctx.client_ip, ctx.now, cfg.regions);
        break;
      case ControllerMode::kLdnsAssociation: {
        std::string host = encode_client_hostname(ctx.client_ip, cfg.base_domain);
        endpoint_url =
            (cfg.insecure_http ? "http://" : "https://") + host + "/report";
        break;
      }
      case ControllerMode::kFixed: {
        std::int64_t idx = cfg.rotation_offset;
        if (cfg.rotation_period_s > 0)
          idx += (ctx.now / kMillisPerSecond) / cfg.rotation_period_s;
        chosen = &cfg.regions[static_cast<std::size_t>(
            idx % static_cast<std::int64_t>(cfg.regions.size()))];
        break;
      }
    }
  }
  if (chosen) endpoint_url = chosen->report_url;

  NelPolicy policy;
  policy.report_to = "default";
  policy.max_age = cfg.max_age;
  policy.success_fraction = cfg.success_fraction;
  policy.failure_fraction = cfg.failure_fraction;

  ReportGroup group;
  group.group = "default";
  group.max_age = cfg.max_age;
  group.endpoints.push_back(ReportEndpoint{endpoint_url, 0, 1});
  validate_endpoint_schemes(group, cfg.insecure_http);

  PolicyResponse out;
  out.nel_header = serialize_nel_header(policy);
  out.report_to_header = serialize_report_to_header(group);
  out.region_id = chosen ? chosen->region_id : "";
  return out;
}

}  // namespace nelscope
