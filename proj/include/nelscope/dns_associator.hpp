#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nelscope/dns_wire.hpp"
#include "nelscope/errors.hpp"
#include "nelscope/ip.hpp"
#include "nelscope/jsonl.hpp"
#include "nelscope/policy_controller.hpp"
#include "nelscope/time.hpp"

namespace nelscope {

// ---------------------------------------------------------------------------
// Association store

struct ClientLdnsAssociation {
  IpAddress client_ip;
  IpAddress ldns_ip;
  Timestamp ts = 0;
  std::string qname;
  // Client resolving through itself (VPN/DoH co-location) is worth flagging:
  // such rows carry no independent resolver information.
  bool self_resolution = false;
};

struct AssociationEntry {
  IpAddress ldns_ip;
  Timestamp ts = 0;
  bool self_resolution = false;
  std::string qname;
};

// Map keyed by client IP plus an append-only observation trail, optionally
// mirrored to JSON-lines. Stands in for the usual external key-value store.
class AssociationStore {
 public:
  AssociationStore() = default;

  explicit AssociationStore(const std::string& jsonl_path) : sink_(jsonl_path) {}

  void record(const ClientLdnsAssociation& assoc) {
    std::lock_guard<std::mutex> lock(mu_);
    if (sink_.is_open()) {
      sink_.append(Json{{"client_ip", assoc.client_ip.to_string()},
                        {"ldns_ip", assoc.ldns_ip.to_string()},
                        {"ts", assoc.ts},
                        {"qname", assoc.qname},
                        {"self_resolution", assoc.self_resolution}});
    }
    observations_.push_back(assoc);
    auto& per_client = latest_[assoc.client_ip];
    for (auto& e : per_client) {
      if (e.first.ldns_ip == assoc.ldns_ip) {
        e.first.ts = assoc.ts;
        e.first.qname = assoc.qname;
        e.second = ++seq_;
        return;
      }
    }
    per_client.emplace_back(
        AssociationEntry{assoc.ldns_ip, assoc.ts, assoc.self_resolution, assoc.qname},
        ++seq_);
  }

  // Distinct LDNS addresses for one client, most recently seen first.
  std::vector<AssociationEntry> get_associations(const IpAddress& client_ip) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = latest_.find(client_ip);
    if (it == latest_.end()) return {};
    auto sorted = it->second;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<AssociationEntry> out;
    out.reserve(sorted.size());
    for (const auto& [entry, seq] : sorted) out.push_back(entry);
    return out;
  }

  std::vector<ClientLdnsAssociation> observations() const {
    std::lock_guard<std::mutex> lock(mu_);
    return observations_;
  }

  std::vector<IpAddress> clients() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<IpAddress> out;
    for (const auto& [client, entries] : latest_) out.push_back(client);
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::vector<ClientLdnsAssociation> observations_;
  std::map<IpAddress, std::vector<std::pair<AssociationEntry, std::uint64_t>>> latest_;
  std::uint64_t seq_ = 0;
  JsonlWriter sink_;
};

// ---------------------------------------------------------------------------
// Authoritative server logic

struct DnsZoneConfig {
  std::string base_domain;
  std::map<std::string, IpAddress> static_zone;  // qname -> address
  IpAddress encoded_target;                      // where encoded names point
  std::optional<IpAddress> encoded_target_v6;
  // Zero keeps resolvers from caching encoded names, so every upload's
  // resolution reaches us again.
  std::uint32_t encoded_ttl = 0;
  std::uint32_t zone_ttl = 60;

  static DnsZoneConfig from_json(const Json& doc) {
    DnsZoneConfig cfg;
    try {
      cfg.base_domain = doc.at("base_domain").get<std::string>();
      cfg.encoded_target = IpAddress::parse(doc.at("encoded_target").get<std::string>());
      if (doc.contains("encoded_target_v6"))
        cfg.encoded_target_v6 =
            IpAddress::parse(doc.at("encoded_target_v6").get<std::string>());
      if (doc.contains("zone")) {
        for (const auto& [name, addr] : doc.at("zone").items())
          cfg.static_zone[name] = IpAddress::parse(addr.get<std::string>());
      }
      if (doc.contains("encoded_ttl"))
        cfg.encoded_ttl = doc.at("encoded_ttl").get<std::uint32_t>();
      if (doc.contains("zone_ttl")) cfg.zone_ttl = doc.at("zone_ttl").get<std::uint32_t>();
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("bad dns config: ") + e.what());
    }
    if (cfg.base_domain.empty()) throw ConfigError("dns base_domain must be non-empty");
    return cfg;
  }
};

struct QueryLogEntry {
  Timestamp ts = 0;
  std::string qname;
  std::uint16_t qtype = 0;
  std::string source_ip;
  std::uint8_t rcode = dns::kRcodeNoError;
  bool answered = false;
  bool association = false;
};

struct QueryResult {
  std::uint8_t rcode = dns::kRcodeNoError;
  bool authoritative = false;
  std::vector<dns::Record> answers;
  bool association_made = false;
};

namespace detail {

inline std::string normalize_qname(std::string_view qname) {
  std::string out(qname);
  while (!out.empty() && out.back() == '.') out.pop_back();
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

inline bool under_domain(std::string_view name, std::string_view base) {
  if (name == base) return true;
  if (name.size() <= base.size() + 1) return false;
  return name.substr(name.size() - base.size()) == base &&
         name[name.size() - base.size() - 1] == '.';
}

}  // namespace detail

// Answers A/AAAA/ANY for the configured zone and, for hostnames carrying an
// encoded client address, logs who asked on whose behalf.
class DnsAssociator {
 public:
  DnsAssociator(DnsZoneConfig cfg, std::shared_ptr<AssociationStore> store,
                std::shared_ptr<JsonlWriter> query_sink = nullptr)
      : cfg_(std::move(cfg)), store_(std::move(store)), query_sink_(std::move(query_sink)) {}

  const DnsZoneConfig& config() const { return cfg_; }
  const AssociationStore& store() const { return *store_; }

  QueryResult handle_query(std::string_view raw_qname, std::uint16_t qtype,
                           const IpAddress& source_ip, Timestamp now) {
    std::string qname = detail::normalize_qname(raw_qname);
    QueryResult result;

    if (!detail::under_domain(qname, cfg_.base_domain)) {
      result.rcode = dns::kRcodeRefused;
      log_query(now, qname, qtype, source_ip, result);
      return result;
    }
    result.authoritative = true;

    bool address_qtype =
        qtype == dns::kTypeA || qtype == dns::kTypeAaaa || qtype == dns::kTypeAny;

    IpAddress encoded_client;
    std::string label;
    bool is_encoded = detail::split_hostname_label(qname, cfg_.base_domain, label) &&
                      detail::try_decode_ip_label(label, encoded_client);
    if (is_encoded) {
      if (address_qtype) {
        ClientLdnsAssociation assoc;
        assoc.client_ip = encoded_client;
        assoc.ldns_ip = source_ip;
        assoc.ts = now;
        assoc.qname = qname;
        assoc.self_resolution = encoded_client == source_ip;
        store_->record(assoc);
        result.association_made = true;
        add_answers(result, qname, qtype, cfg_.encoded_target, cfg_.encoded_target_v6,
                    cfg_.encoded_ttl);
      }
      log_query(now, qname, qtype, source_ip, result);
      return result;
    }

    auto it = cfg_.static_zone.find(qname);
    if (it == cfg_.static_zone.end()) {
      result.rcode = dns::kRcodeNxDomain;
      log_query(now, qname, qtype, source_ip, result);
      return result;
    }
    if (address_qtype)
      add_answers(result, qname, qtype, it->second, std::nullopt, cfg_.zone_ttl);
    log_query(now, qname, qtype, source_ip, result);
    return result;
  }

  // Full wire round: FORMERR on garbage without touching any log.
  std::vector<std::uint8_t> handle_packet(const std::uint8_t* data, std::size_t size,
                                          const IpAddress& source_ip, Timestamp now) {
    dns::Message query;
    try {
      query = dns::decode(data, size);
      if (query.is_response || query.questions.size() != 1)
        throw ParseError("expected a single-question query");
    } catch (const Error&) {
      dns::Message err;
      err.id = size >= 2 ? static_cast<std::uint16_t>(data[0] << 8 | data[1]) : 0;
      err.is_response = true;
      err.rcode = dns::kRcodeFormErr;
      return dns::encode(err);
    }

    dns::Message resp;
    resp.id = query.id;
    resp.is_response = true;
    resp.recursion_desired = query.recursion_desired;
    resp.questions = query.questions;

    if (query.opcode != 0) {
      resp.rcode = dns::kRcodeNotImp;
      return dns::encode(resp);
    }
    QueryResult r = handle_query(query.questions[0].qname, query.questions[0].qtype,
                                 source_ip, now);
    resp.rcode = r.rcode;
    resp.authoritative = r.authoritative;
    resp.answers = r.answers;
    return dns::encode(resp);
  }

  std::vector<AssociationEntry> get_associations(const IpAddress& client_ip) const {
    return store_->get_associations(client_ip);
  }

  std::vector<QueryLogEntry> query_log() const {
    std::lock_guard<std::mutex> lock(mu_);
    return query_log_;
  }

 private:
  void add_answers(QueryResult& result, const std::string& qname, std::uint16_t qtype,
                   const IpAddress& v4_or_any, const std::optional<IpAddress>& v6,
                   std::uint32_t ttl) {
    bool want_a = qtype == dns::kTypeA || qtype == dns::kTypeAny;
    bool want_aaaa = qtype == dns::kTypeAaaa || qtype == dns::kTypeAny;
    if (want_a && !v4_or_any.is_v6())
      result.answers.push_back(dns::Record::address(qname, v4_or_any, ttl));
    if (want_aaaa && v4_or_any.is_v6())
      result.answers.push_back(dns::Record::address(qname, v4_or_any, ttl));
    if (want_aaaa && v6 && v6->is_v6())
      result.answers.push_back(dns::Record::address(qname, *v6, ttl));
  }

  void log_query(Timestamp now, const std::string& qname, std::uint16_t qtype,
                 const IpAddress& source_ip, const QueryResult& result) {
    QueryLogEntry entry;
    entry.ts = now;
    entry.qname = qname;
    entry.qtype = qtype;
    entry.source_ip = source_ip.to_string();
    entry.rcode = result.rcode;
    entry.answered = result.rcode == dns::kRcodeNoError;
    entry.association = result.association_made;
    {
      std::lock_guard<std::mutex> lock(mu_);
      query_log_.push_back(entry);
    }
    if (query_sink_) {
      query_sink_->append(Json{{"ts", entry.ts},
                               {"qname", entry.qname},
                               {"qtype", entry.qtype},
                               {"source_ip", entry.source_ip},
                               {"rcode", entry.rcode},
                               {"answered", entry.answered},
                               {"association", entry.association}});
    }
  }

  DnsZoneConfig cfg_;
  std::shared_ptr<AssociationStore> store_;
  std::shared_ptr<JsonlWriter> query_sink_;
  mutable std::mutex mu_;
  std::vector<QueryLogEntry> query_log_;
};

}  // namespace nelscope
