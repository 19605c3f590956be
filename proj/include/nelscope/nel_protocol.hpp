#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nelscope/errors.hpp"
#include "nelscope/time.hpp"

namespace nelscope {

using Json = nlohmann::json;

inline constexpr std::string_view kNelHeaderName = "NEL";
inline constexpr std::string_view kReportToHeaderName = "Report-To";
inline constexpr std::string_view kReportContentType = "application/reports+json";
inline constexpr std::string_view kNetworkErrorType = "network-error";

// Outcome strings the rest of the stack produces.
inline constexpr std::string_view kOutcomeOk = "ok";
inline constexpr std::string_view kOutcomeDnsUnreachable = "dns.unreachable";
inline constexpr std::string_view kOutcomeTcpTimedOut = "tcp.timed_out";

// ---------------------------------------------------------------------------
// Domain types

struct NelPolicy {
  std::string report_to;
  std::int64_t max_age = 0;  // seconds; 0 means "remove policy"
  double success_fraction = 0.0;
  double failure_fraction = 1.0;
  bool include_subdomains = false;
  // Set by whoever installs the policy; never serialized.
  Timestamp installed_at = 0;

  bool removes_policy() const { return max_age == 0; }

  friend bool operator==(const NelPolicy& a, const NelPolicy& b) {
    return a.report_to == b.report_to && a.max_age == b.max_age &&
           a.success_fraction == b.success_fraction &&
           a.failure_fraction == b.failure_fraction &&
           a.include_subdomains == b.include_subdomains;
  }
};

struct ReportEndpoint {
  std::string url;
  std::int64_t priority = 0;  // lower tried first
  std::int64_t weight = 1;

  friend bool operator==(const ReportEndpoint& a, const ReportEndpoint& b) {
    return a.url == b.url && a.priority == b.priority && a.weight == b.weight;
  }
};

struct ReportGroup {
  std::string group = "default";
  std::int64_t max_age = 0;
  std::vector<ReportEndpoint> endpoints;  // order defines failover sequence

  friend bool operator==(const ReportGroup& a, const ReportGroup& b) {
    return a.group == b.group && a.max_age == b.max_age && a.endpoints == b.endpoints;
  }
};

enum class ReportPhase { kDns, kConnection, kApplication };

inline std::string_view to_string(ReportPhase p) {
  switch (p) {
    case ReportPhase::kDns: return "dns";
    case ReportPhase::kConnection: return "connection";
    case ReportPhase::kApplication: return "application";
  }
  return "application";
}

inline ReportPhase phase_from_string(std::string_view s) {
  if (s == "dns") return ReportPhase::kDns;
  if (s == "connection") return ReportPhase::kConnection;
  if (s == "application") return ReportPhase::kApplication;
  throw ValidationError("unknown report phase: " + std::string(s));
}

struct NelReportBody {
  double sampling_fraction = 1.0;
  std::string server_ip;
  std::string protocol;
  std::string method = "GET";
  std::int64_t status_code = 0;
  std::int64_t elapsed_time_ms = 0;
  ReportPhase phase = ReportPhase::kApplication;
  std::string type;  // outcome, e.g. "ok", "dns.unreachable"

  friend bool operator==(const NelReportBody&, const NelReportBody&) = default;
};

struct NelReport {
  std::string url;
  std::int64_t age_ms = 0;
  NelReportBody body;
  // Producer-side observation timestamp; 0 when unknown (e.g. after decode).
  // When set, encode_report_batch derives the wire age from it. Not part of
  // value identity, mirroring NelPolicy::installed_at.
  Timestamp observed_at = 0;

  friend bool operator==(const NelReport& a, const NelReport& b) {
    return a.url == b.url && a.age_ms == b.age_ms && a.body == b.body;
  }
};

// ---------------------------------------------------------------------------
// Shared validation

inline void validate_fraction(double f, std::string_view name) {
  if (!(f >= 0.0 && f <= 1.0))
    throw ValidationError(std::string(name) + " outside [0,1]");
}

inline void validate_policy(const NelPolicy& p) {
  validate_fraction(p.success_fraction, "success_fraction");
  validate_fraction(p.failure_fraction, "failure_fraction");
  if (p.max_age < 0) throw ValidationError("max_age must be non-negative");
  if (p.report_to.empty()) throw ValidationError("report_to must be a non-empty token");
}

inline void validate_endpoint(const ReportEndpoint& e) {
  if (e.url.rfind("https://", 0) != 0 && e.url.rfind("http://", 0) != 0)
    throw ValidationError("endpoint url must be absolute http(s): " + e.url);
  if (e.priority < 0) throw ValidationError("endpoint priority must be non-negative");
  if (e.weight <= 0) throw ValidationError("endpoint weight must be positive");
}

inline void validate_group(const ReportGroup& g) {
  if (g.group.empty()) throw ValidationError("group name must be non-empty");
  if (g.max_age < 0) throw ValidationError("max_age must be non-negative");
  if (g.endpoints.empty()) throw ValidationError("endpoints list must be non-empty");
  for (const auto& e : g.endpoints) validate_endpoint(e);
}

// Production deployments upload over HTTPS only; plain-http endpoints are for
// tests and must be asked for explicitly.
inline void validate_endpoint_schemes(const ReportGroup& g, bool allow_http) {
  for (const auto& e : g.endpoints) {
    if (!allow_http && e.url.rfind("https://", 0) != 0)
      throw ValidationError("non-https endpoint without insecure flag: " + e.url);
  }
}

inline void validate_report(const NelReport& r) {
  if (r.age_ms < 0) throw ValidationError("age must be non-negative");
  if (r.body.elapsed_time_ms < 0)
    throw ValidationError("elapsed_time must be non-negative");
  validate_fraction(r.body.sampling_fraction, "sampling_fraction");
  if (r.body.type.empty()) throw ValidationError("report body type must be non-empty");
  if (r.body.type == kOutcomeOk) {
    if (r.body.phase != ReportPhase::kApplication)
      throw ValidationError("\"ok\" outcome requires application phase");
    if (r.body.status_code < 100 || r.body.status_code > 599)
      throw ValidationError("\"ok\" outcome requires a plausible status code");
  }
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline Json parse_header_json(std::string_view raw, std::string_view what) {
  Json doc = Json::parse(raw, nullptr, false);
  if (doc.is_discarded() || !doc.is_object())
    throw ParseError(std::string(what) + " header is not a JSON object");
  return doc;
}

inline std::int64_t require_nonneg_int(const Json& doc, const char* key) {
  if (!doc.contains(key)) throw ValidationError(std::string("missing ") + key);
  const Json& v = doc.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ValidationError(std::string(key) + " must be a non-negative integer");
  return v.get<std::int64_t>();
}

inline double optional_fraction(const Json& doc, const char* key, double fallback) {
  if (!doc.contains(key)) return fallback;
  const Json& v = doc.at(key);
  if (!v.is_number()) throw ValidationError(std::string(key) + " must be a number");
  double f = v.get<double>();
  validate_fraction(f, key);
  return f;
}

// Fractions go to the wire with at most 4 decimal digits. Parsing accepts any
// JSON number in range, so 4-decimal values survive the roundtrip exactly.
inline double quantize_fraction(double f) { return std::round(f * 10000.0) / 10000.0; }

}  // namespace detail

// ---------------------------------------------------------------------------
// NEL header codec

inline NelPolicy parse_nel_header(std::string_view raw) {
  Json doc = detail::parse_header_json(raw, "NEL");
  NelPolicy p;
  if (!doc.contains("report_to")) throw ValidationError("missing report_to");
  if (!doc.at("report_to").is_string()) throw ValidationError("report_to must be a string");
  p.report_to = doc.at("report_to").get<std::string>();
  p.max_age = detail::require_nonneg_int(doc, "max_age");
  p.success_fraction = detail::optional_fraction(doc, "success_fraction", 0.0);
  p.failure_fraction = detail::optional_fraction(doc, "failure_fraction", 1.0);
  if (doc.contains("include_subdomains")) {
    if (!doc.at("include_subdomains").is_boolean())
      throw ValidationError("include_subdomains must be a boolean");
    p.include_subdomains = doc.at("include_subdomains").get<bool>();
  }
  validate_policy(p);
  return p;
}

inline std::string serialize_nel_header(const NelPolicy& p) {
  validate_policy(p);
  Json doc;
  doc["report_to"] = p.report_to;
  doc["max_age"] = p.max_age;
  doc["success_fraction"] = detail::quantize_fraction(p.success_fraction);
  doc["failure_fraction"] = detail::quantize_fraction(p.failure_fraction);
  doc["include_subdomains"] = p.include_subdomains;
  return doc.dump();
}

// ---------------------------------------------------------------------------
// Report-To header codec

inline ReportGroup parse_report_to_header(std::string_view raw) {
  Json doc = detail::parse_header_json(raw, "Report-To");
  ReportGroup g;
  if (doc.contains("group")) {
    if (!doc.at("group").is_string()) throw ValidationError("group must be a string");
    g.group = doc.at("group").get<std::string>();
  }
  g.max_age = detail::require_nonneg_int(doc, "max_age");
  if (!doc.contains("endpoints") || !doc.at("endpoints").is_array() ||
      doc.at("endpoints").empty())
    throw ValidationError("endpoints must be a non-empty array");
  for (const Json& ej : doc.at("endpoints")) {
    if (!ej.is_object() || !ej.contains("url") || !ej.at("url").is_string())
      throw ValidationError("endpoint must be an object with a url string");
    ReportEndpoint e;
    e.url = ej.at("url").get<std::string>();
    if (ej.contains("priority")) {
      if (!ej.at("priority").is_number_integer())
        throw ValidationError("priority must be an integer");
      e.priority = ej.at("priority").get<std::int64_t>();
    }
    if (ej.contains("weight")) {
      if (!ej.at("weight").is_number_integer())
        throw ValidationError("weight must be an integer");
      e.weight = ej.at("weight").get<std::int64_t>();
    }
    validate_endpoint(e);
    g.endpoints.push_back(std::move(e));
  }
  validate_group(g);
  return g;
}

inline std::string serialize_report_to_header(const ReportGroup& g) {
  validate_group(g);
  Json doc;
  doc["group"] = g.group;
  doc["max_age"] = g.max_age;
  Json eps = Json::array();
  for (const auto& e : g.endpoints) {
    eps.push_back({{"url", e.url}, {"priority", e.priority}, {"weight", e.weight}});
  }
  doc["endpoints"] = std::move(eps);
  return doc.dump();
}

// ---------------------------------------------------------------------------
// Report batch codec (the POST body of a report upload)

inline Json report_to_json(const NelReport& r, Timestamp now) {
  NelReport stamped = r;
  if (r.observed_at != 0) {
    if (r.observed_at > now)
      throw ValidationError("report observed after encode time");
    stamped.age_ms = now - r.observed_at;
  }
  validate_report(stamped);
  Json body;
  body["sampling_fraction"] = stamped.body.sampling_fraction;
  body["server_ip"] = stamped.body.server_ip;
  body["protocol"] = stamped.body.protocol;
  body["method"] = stamped.body.method;
  body["status_code"] = stamped.body.status_code;
  body["elapsed_time"] = stamped.body.elapsed_time_ms;
  body["phase"] = std::string(to_string(stamped.body.phase));
  body["type"] = stamped.body.type;
  Json doc;
  doc["age"] = stamped.age_ms;
  doc["type"] = std::string(kNetworkErrorType);
  doc["url"] = stamped.url;
  doc["body"] = std::move(body);
  return doc;
}

inline std::string encode_report_batch(const std::vector<NelReport>& reports,
                                       Timestamp now) {
  Json arr = Json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r, now));
  return arr.dump();
}

inline NelReport report_from_json(const Json& doc) {
  if (!doc.is_object()) throw ParseError("report element is not an object");
  if (!doc.contains("body") || !doc.at("body").is_object())
    throw ParseError("report element missing body");
  if (!doc.contains("url") || !doc.at("url").is_string())
    throw ParseError("report element missing url");
  if (!doc.contains("age") || !doc.at("age").is_number())
    throw ParseError("report element missing age");
  NelReport r;
  r.url = doc.at("url").get<std::string>();
  r.age_ms = doc.at("age").get<std::int64_t>();
  const Json& body = doc.at("body");
  if (!body.contains("type") || !body.at("type").is_string())
    throw ParseError("report body missing type");
  r.body.type = body.at("type").get<std::string>();
  if (body.contains("phase")) {
    if (!body.at("phase").is_string()) throw ParseError("report body phase must be a string");
    r.body.phase = phase_from_string(body.at("phase").get<std::string>());
  }
  // Browsers attach more body fields than we model; anything unknown is
  // dropped here and therefore absent after a reserialize.
  if (body.contains("sampling_fraction") && body.at("sampling_fraction").is_number())
    r.body.sampling_fraction = body.at("sampling_fraction").get<double>();
  if (body.contains("server_ip") && body.at("server_ip").is_string())
    r.body.server_ip = body.at("server_ip").get<std::string>();
  if (body.contains("protocol") && body.at("protocol").is_string())
    r.body.protocol = body.at("protocol").get<std::string>();
  if (body.contains("method") && body.at("method").is_string())
    r.body.method = body.at("method").get<std::string>();
  if (body.contains("status_code") && body.at("status_code").is_number_integer())
    r.body.status_code = body.at("status_code").get<std::int64_t>();
  if (body.contains("elapsed_time") && body.at("elapsed_time").is_number_integer())
    r.body.elapsed_time_ms = body.at("elapsed_time").get<std::int64_t>();
  validate_report(r);
  return r;
}

inline std::vector<NelReport> decode_report_batch(std::string_view payload) {
  Json doc = Json::parse(payload, nullptr, false);
  if (doc.is_discarded()) throw ParseError("report batch is not valid JSON");
  if (!doc.is_array()) throw ParseError("report batch is not a JSON array");
  std::vector<NelReport> out;
  for (const Json& el : doc) {
    if (el.is_object() && el.contains("type") && el.at("type").is_string() &&
        el.at("type").get<std::string>() != kNetworkErrorType) {
      // Other report types (csp-violation, deprecation, ...) are not ours.
      continue;
    }
    out.push_back(report_from_json(el));
  }
  return out;
}

}  // namespace nelscope
