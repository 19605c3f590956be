#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nelscope/browser_emulator.hpp"
#include "nelscope/collector.hpp"
#include "nelscope/dns_associator.hpp"
#include "nelscope/errors.hpp"
#include "nelscope/hash.hpp"
#include "nelscope/ip.hpp"
#include "nelscope/time.hpp"
#include "nelscope/url.hpp"

namespace nelscope {

// ---------------------------------------------------------------------------
// Topology

struct TopologyRegion {
  std::string region_id;
  std::string hostname;
  IpAddress service_ip;
  std::string report_url;
};

struct TopologyClient {
  std::string client_ip;
  std::string vantage;
};

struct Topology {
  std::string base_domain;
  std::vector<TopologyRegion> regions;
  std::vector<TopologyClient> clients;
  // (vantage or detouring region, destination region) -> path RTT, ms
  std::map<std::string, std::map<std::string, double>> rtt_matrix;
  std::map<std::string, std::string> ldns_map;      // client_ip -> ldns_ip
  std::map<std::string, std::string> extra_zone;    // hostname -> serving region
  std::string encoded_target_region;                // handles encoded-host uploads

  static Topology from_json(const Json& doc) {
    Topology t;
    try {
      t.base_domain = doc.at("base_domain").get<std::string>();
      for (const Json& rj : doc.at("regions")) {
        TopologyRegion r;
        r.region_id = rj.at("region_id").get<std::string>();
        r.hostname = rj.at("hostname").get<std::string>();
        r.service_ip = IpAddress::parse(rj.at("service_ip").get<std::string>());
        r.report_url = rj.at("report_url").get<std::string>();
        t.regions.push_back(std::move(r));
      }
      for (const Json& cj : doc.at("clients")) {
        t.clients.push_back(TopologyClient{cj.at("client_ip").get<std::string>(),
                                           cj.at("vantage").get<std::string>()});
      }
      for (const auto& [vantage, row] : doc.at("rtt_matrix").items()) {
        for (const auto& [region, ms] : row.items())
          t.rtt_matrix[vantage][region] = ms.get<double>();
      }
      if (doc.contains("ldns_map")) {
        for (const auto& [client, ldns] : doc.at("ldns_map").items())
          t.ldns_map[client] = ldns.get<std::string>();
      }
      if (doc.contains("zone")) {
        for (const auto& [host, region] : doc.at("zone").items())
          t.extra_zone[host] = region.get<std::string>();
      }
      if (doc.contains("encoded_target_region"))
        t.encoded_target_region = doc.at("encoded_target_region").get<std::string>();
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("bad topology: ") + e.what());
    }
    t.validate();
    return t;
  }

  static Topology load(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("cannot open topology: " + path);
    Json doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("topology is not valid JSON: " + path);
    return from_json(doc);
  }

  const TopologyRegion* find_region(std::string_view id) const {
    for (const auto& r : regions)
      if (r.region_id == id) return &r;
    return nullptr;
  }

  void validate() {
    if (base_domain.empty()) throw ConfigError("topology base_domain must be non-empty");
    if (regions.empty()) throw ConfigError("topology needs at least one region");
    std::set<std::string> ids;
    for (const auto& r : regions) {
      if (!ids.insert(r.region_id).second)
        throw ConfigError("duplicate region_id: " + r.region_id);
    }
    std::set<std::string> client_ips;
    for (const auto& c : clients) {
      IpAddress::parse(c.client_ip);
      if (!client_ips.insert(c.client_ip).second)
        throw ConfigError("duplicate client: " + c.client_ip);
      auto vit = rtt_matrix.find(c.vantage);
      if (vit == rtt_matrix.end())
        throw ConfigError("no rtt_matrix row for vantage: " + c.vantage);
      for (const auto& r : regions) {
        if (!vit->second.count(r.region_id))
          throw ConfigError("rtt_matrix missing (" + c.vantage + ", " + r.region_id + ")");
      }
      if (!ldns_map.count(c.client_ip))
        throw ConfigError("ldns_map missing client: " + c.client_ip);
    }
    for (const auto& [vantage, row] : rtt_matrix) {
      for (const auto& [region, ms] : row) {
        if (!(ms > 0)) throw ConfigError("rtt must be > 0: " + vantage + "->" + region);
      }
    }
    for (const auto& [host, region] : extra_zone) {
      if (!find_region(region)) throw ConfigError("zone entry names unknown region: " + region);
    }
    if (encoded_target_region.empty()) encoded_target_region = regions[0].region_id;
    if (!find_region(encoded_target_region))
      throw ConfigError("unknown encoded_target_region: " + encoded_target_region);
  }
};

// ---------------------------------------------------------------------------
// Scenario

enum class SimEventType { kSetGateway, kSetOutage, kLoadPage, kRotateEndpoints };

struct ScenarioEvent {
  Timestamp t_ms = 0;
  SimEventType type = SimEventType::kLoadPage;
  std::string client;
  std::string gateway;  // empty = direct path
  std::string region;
  bool outage_on = false;
  std::string page;
};

struct Scenario {
  std::string name;
  DurationMs duration_ms = 0;
  Json controller = Json::object();  // knobs for ControllerConfig
  std::map<std::string, std::vector<std::string>> pages;
  std::vector<ScenarioEvent> events;  // expanded and time-sorted

  static Scenario from_json(const Json& doc) {
    Scenario s;
    try {
      s.name = doc.at("name").get<std::string>();
      s.duration_ms = seconds_to_ms(doc.at("duration_s").get<std::int64_t>());
      if (doc.contains("controller")) s.controller = doc.at("controller");
      if (doc.contains("pages")) {
        for (const auto& [page, urls] : doc.at("pages").items()) {
          for (const Json& u : urls) s.pages[page].push_back(u.get<std::string>());
        }
      }
      for (const Json& ej : doc.at("events")) {
        ScenarioEvent base;
        base.t_ms = seconds_to_ms(ej.at("t_s").get<std::int64_t>());
        std::string type = ej.at("type").get<std::string>();
        if (type == "set_gateway") {
          base.type = SimEventType::kSetGateway;
          base.client = ej.at("client").get<std::string>();
          if (ej.contains("gateway") && !ej.at("gateway").is_null())
            base.gateway = ej.at("gateway").get<std::string>();
        } else if (type == "set_outage") {
          base.type = SimEventType::kSetOutage;
          base.region = ej.at("region").get<std::string>();
          base.outage_on = ej.at("on").get<bool>();
        } else if (type == "load_page") {
          base.type = SimEventType::kLoadPage;
          base.client = ej.at("client").get<std::string>();
          base.page = ej.at("page").get<std::string>();
        } else if (type == "rotate_endpoints") {
          base.type = SimEventType::kRotateEndpoints;
        } else {
          throw ConfigError("unknown event type: " + type);
        }
        // {"repeat": {"every_s": X, "until_s": Y}} expands to occurrences at
        // t, t+X, ... while <= Y.
        if (ej.contains("repeat")) {
          DurationMs every = seconds_to_ms(ej.at("repeat").at("every_s").get<std::int64_t>());
          Timestamp until = seconds_to_ms(ej.at("repeat").at("until_s").get<std::int64_t>());
          if (every <= 0) throw ConfigError("repeat.every_s must be positive");
          for (Timestamp t = base.t_ms; t <= until; t += every) {
            ScenarioEvent e = base;
            e.t_ms = t;
            s.events.push_back(std::move(e));
          }
        } else {
          s.events.push_back(std::move(base));
        }
      }
    } catch (const Json::exception& e) {
      throw ConfigError(std::string("bad scenario: ") + e.what());
    }
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const ScenarioEvent& a, const ScenarioEvent& b) {
                       return a.t_ms < b.t_ms;
                     });
    return s;
  }

  static Scenario load(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("cannot open scenario: " + path);
    Json doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("scenario is not valid JSON: " + path);
    return from_json(doc);
  }

  void validate_against(const Topology& topo) const {
    std::set<std::string> client_ips;
    for (const auto& c : topo.clients) client_ips.insert(c.client_ip);
    for (const auto& e : events) {
      if (e.t_ms < 0 || e.t_ms > duration_ms)
        throw ConfigError("event outside scenario duration");
      switch (e.type) {
        case SimEventType::kSetGateway:
          if (!client_ips.count(e.client)) throw ConfigError("unknown client: " + e.client);
          if (!e.gateway.empty() && !topo.find_region(e.gateway))
            throw ConfigError("unknown gateway region: " + e.gateway);
          break;
        case SimEventType::kSetOutage:
          if (!topo.find_region(e.region)) throw ConfigError("unknown region: " + e.region);
          break;
        case SimEventType::kLoadPage:
          if (!client_ips.count(e.client)) throw ConfigError("unknown client: " + e.client);
          if (!pages.count(e.page)) throw ConfigError("unknown page: " + e.page);
          break;
        case SimEventType::kRotateEndpoints:
          break;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Run results

struct TimelineRow {
  std::int64_t minute = 0;
  std::string region_id;
  double median_rtt_ms = 0.0;
  std::int64_t upload_count = 0;  // upload batches landing in this cell
};

struct AdvertEvent {
  Timestamp ts = 0;
  std::string client_ip;
  std::string domain;
  std::string region_id;
};

struct ClientUpload {
  std::string client_ip;
  UploadOutcome outcome;
  std::string region_id;  // resolved from the endpoint actually used
};

struct SimResult {
  std::vector<MeasurementRecord> records;
  std::shared_ptr<AssociationStore> associations;
  std::vector<QueryLogEntry> dns_queries;
  std::vector<TimelineRow> timeline;
  std::vector<AdvertEvent> advertisements;
  std::vector<ClientUpload> uploads;
  std::map<std::string, std::uint64_t> still_queued;  // per client
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t mid = v.size() / 2;
  if (v.size() % 2) return v[mid];
  return (v[mid - 1] + v[mid]) / 2.0;
}

inline std::string report_host(const MeasurementRecord& rec) {
  if (!rec.report) return {};
  try {
    return parse_url(rec.report->url).host;
  } catch (const Error&) {
    return rec.report->url;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The simulator

inline constexpr std::int64_t kSimTimeoutMs = 1000;
inline constexpr DurationMs kSimTickMs = 1000;

// Wires emulated clients, collectors, and the DNS associator over a latency
// matrix under a virtual clock. Same service code as live mode; only the
// transport differs. Fully deterministic in (scenario, topology, seed).
class Simulator {
 public:
  Simulator(Scenario scenario, Topology topology, std::uint64_t seed)
      : scenario_(std::move(scenario)), topo_(std::move(topology)), seed_(seed) {
    scenario_.validate_against(topo_);
    store_ = std::make_shared<RecordStore>();
    assoc_store_ = std::make_shared<AssociationStore>();

    DnsZoneConfig zone;
    zone.base_domain = topo_.base_domain;
    zone.encoded_ttl = 0;
    const TopologyRegion* enc = topo_.find_region(topo_.encoded_target_region);
    zone.encoded_target = enc->service_ip;
    for (const auto& r : topo_.regions) {
      zone.static_zone[r.hostname] = r.service_ip;
      ip_to_region_[r.service_ip] = r.region_id;
    }
    for (const auto& [host, region] : topo_.extra_zone)
      zone.static_zone[host] = topo_.find_region(region)->service_ip;
    associator_ = std::make_unique<DnsAssociator>(zone, assoc_store_);

    ControllerConfig cfg = make_controller_config();
    for (const auto& r : topo_.regions) {
      collectors_[r.region_id] = std::make_unique<Collector>(r.region_id, cfg, store_);
    }
    register_page_resources();

    for (const auto& c : topo_.clients) {
      ClientState state;
      state.info = c;
      state.emu = std::make_unique<BrowserEmulator>(seed_ ^ fnv1a_64(c.client_ip));
      clients_.emplace(c.client_ip, std::move(state));
    }
  }

  // Direct path, or client->gateway->region when a detour is set; nullopt
  // while the destination region is in outage.
  std::optional<double> effective_rtt(const std::string& client_ip,
                                      const std::string& region_id, Timestamp) const {
    auto cit = clients_.find(client_ip);
    if (cit == clients_.end()) throw ConfigError("unknown client: " + client_ip);
    if (!topo_.find_region(region_id)) throw ConfigError("unknown region: " + region_id);
    if (outages_.count(region_id)) return std::nullopt;
    const ClientState& c = cit->second;
    if (c.gateway.empty()) return lookup_rtt(c.info.vantage, region_id);
    return lookup_rtt(c.info.vantage, c.gateway) + lookup_rtt(c.gateway, region_id);
  }

  void set_outage(const std::string& region_id, bool on) {
    if (!topo_.find_region(region_id)) throw ConfigError("unknown region: " + region_id);
    if (on)
      outages_.insert(region_id);
    else
      outages_.erase(region_id);
  }

  SimResult run() {
    std::size_t ei = 0;
    Timestamp next_tick = 0;
    while (next_tick <= scenario_.duration_ms || ei < scenario_.events.size()) {
      Timestamp event_t = ei < scenario_.events.size()
                              ? scenario_.events[ei].t_ms
                              : std::numeric_limits<Timestamp>::max();
      if (ei < scenario_.events.size() && event_t <= next_tick) {
        now_ = event_t;
        apply_event(scenario_.events[ei]);
        ++ei;
      } else if (next_tick <= scenario_.duration_ms) {
        now_ = next_tick;
        tick_clients();
        next_tick += kSimTickMs;
      } else {
        break;
      }
    }
    return build_result();
  }

  const DnsAssociator& associator() const { return *associator_; }
  const RecordStore& store() const { return *store_; }

 private:
  struct ClientState {
    TopologyClient info;
    std::unique_ptr<BrowserEmulator> emu;
    std::string gateway;  // empty = direct
  };

  double lookup_rtt(const std::string& vantage, const std::string& region) const {
    auto vit = topo_.rtt_matrix.find(vantage);
    if (vit == topo_.rtt_matrix.end())
      throw ConfigError("no rtt_matrix row for: " + vantage);
    auto rit = vit->second.find(region);
    if (rit == vit->second.end())
      throw ConfigError("rtt_matrix missing (" + vantage + ", " + region + ")");
    return rit->second;
  }

  ControllerConfig make_controller_config() const {
    Json doc = scenario_.controller;
    doc["base_domain"] = topo_.base_domain;
    Json regions = Json::array();
    for (const auto& r : topo_.regions)
      regions.push_back({{"region_id", r.region_id}, {"report_url", r.report_url}});
    doc["regions"] = std::move(regions);
    if (!doc.contains("insecure_http")) doc["insecure_http"] = true;
    return ControllerConfig::from_json(doc);
  }

  void register_page_resources() {
    for (const auto& [page, urls] : scenario_.pages) {
      for (const auto& url : urls) {
        UrlParts parts = parse_url(url);
        const std::string* region = zone_region(parts.host);
        if (!region)
          throw ConfigError("page resource host not in zone: " + parts.host);
        collectors_[*region]->add_resource(parts.path, "img:" + parts.path);
      }
    }
  }

  // Which region serves this hostname, zone entries first, then region
  // hostnames, then the encoded-name target.
  const std::string* zone_region(const std::string& host) const {
    auto zit = topo_.extra_zone.find(host);
    if (zit != topo_.extra_zone.end()) return &zit->second;
    for (const auto& r : topo_.regions) {
      if (r.hostname == host) return &r.region_id;
    }
    try {
      decode_client_hostname(host, topo_.base_domain);
      return &topo_.encoded_target_region;
    } catch (const Error&) {
      return nullptr;
    }
  }

  void apply_event(const ScenarioEvent& e) {
    switch (e.type) {
      case SimEventType::kSetGateway:
        clients_.at(e.client).gateway = e.gateway;
        break;
      case SimEventType::kSetOutage:
        set_outage(e.region, e.outage_on);
        break;
      case SimEventType::kLoadPage: {
        ClientState& c = clients_.at(e.client);
        c.emu->load_page(
            scenario_.pages.at(e.page),
            [this, &c](const std::string& host) { return resolve(c, host); },
            [this, &c](const IpAddress& addr, const UrlParts& url) {
              return fetch(c, addr, url);
            },
            now_);
        break;
      }
      case SimEventType::kRotateEndpoints:
        for (auto& [id, col] : collectors_) ++col->mutable_config().rotation_offset;
        break;
    }
  }

  void tick_clients() {
    for (auto& [ip, c] : clients_) {
      auto results = c.emu->tick(now_, [this, &c](const ReportEndpoint& ep,
                                                  const std::string& payload,
                                                  std::size_t batch_size) {
        return upload(c, ep, payload, batch_size);
      });
      for (auto& r : results) {
        ClientUpload cu;
        cu.client_ip = ip;
        cu.region_id = r.delivered ? region_for_url(r.endpoint_used) : "";
        cu.outcome = std::move(r);
        uploads_.push_back(std::move(cu));
      }
    }
  }

  std::optional<IpAddress> resolve(ClientState& c, const std::string& host) {
    IpAddress ldns = IpAddress::parse(topo_.ldns_map.at(c.info.client_ip));
    QueryResult r = associator_->handle_query(host, dns::kTypeA, ldns, now_);
    if (r.rcode != dns::kRcodeNoError || r.answers.empty()) return std::nullopt;
    return r.answers[0].to_ip();
  }

  FetchResult fetch(ClientState& c, const IpAddress& addr, const UrlParts& url) {
    FetchResult out;
    auto rit = ip_to_region_.find(addr);
    if (rit == ip_to_region_.end()) {
      out.fail_type = std::string(kOutcomeTcpTimedOut);
      out.elapsed_time_ms = kSimTimeoutMs;
      return out;
    }
    std::optional<double> rtt = effective_rtt(c.info.client_ip, rit->second, now_);
    if (!rtt) {
      out.fail_type = std::string(kOutcomeTcpTimedOut);
      out.elapsed_time_ms = kSimTimeoutMs;
      return out;
    }
    HttpRequest req;
    req.method = "GET";
    req.path = url.path;
    req.headers["Host"] = url.host;
    req.peer_ip = c.info.client_ip;
    req.host = url.host;
    req.now = now_;
    req.transport_rtt_ms = *rtt;
    HttpResponse resp = collectors_.at(rit->second)->handle_request(req);
    out.ok = resp.status >= 100 && resp.status <= 599;
    out.status = resp.status;
    out.elapsed_time_ms = static_cast<std::int64_t>(*rtt + 0.5);
    out.server_ip = addr.to_string();
    out.headers = resp.headers;
    if (resp.status == 200) {
      std::string advertised = detail::lookup_header(resp.headers, "X-Advertised-Region");
      if (!advertised.empty())
        advertisements_.push_back(AdvertEvent{now_, c.info.client_ip, url.host, advertised});
    }
    return out;
  }

  bool upload(ClientState& c, const ReportEndpoint& ep, const std::string& payload,
              std::size_t) {
    UrlParts url = parse_url(ep.url);
    std::optional<IpAddress> addr = resolve(c, url.host);
    if (!addr) return false;
    auto rit = ip_to_region_.find(*addr);
    if (rit == ip_to_region_.end()) return false;
    std::optional<double> rtt = effective_rtt(c.info.client_ip, rit->second, now_);
    if (!rtt) return false;
    HttpRequest req;
    req.method = "POST";
    req.path = std::string(kReportPath);
    req.headers["Host"] = url.host;
    req.headers["Content-Type"] = std::string(kReportContentType);
    req.body = payload;
    req.peer_ip = c.info.client_ip;
    req.host = url.host;
    req.now = now_;
    req.transport_rtt_ms = *rtt;
    return collectors_.at(rit->second)->handle_request(req).status == 200;
  }

  std::string region_for_url(const std::string& url) const {
    if (url.empty()) return {};
    try {
      const std::string* region = zone_region(parse_url(url).host);
      return region ? *region : std::string{};
    } catch (const Error&) {
      return {};
    }
  }

  SimResult build_result() {
    SimResult result;
    result.records = store_->query();
    result.associations = assoc_store_;
    result.dns_queries = associator_->query_log();
    result.advertisements = advertisements_;
    result.uploads = uploads_;
    for (const auto& [ip, c] : clients_)
      result.still_queued[ip] = c.emu->still_queued_total();

    // Timeline: per minute and region, median upload RTT and batch count.
    std::map<std::pair<std::int64_t, std::string>, std::vector<double>> rtts;
    std::map<std::pair<std::int64_t, std::string>, std::set<std::string>> batches;
    for (const auto& rec : result.records) {
      if (!rec.upload) continue;
      auto key = std::make_pair(rec.ts / kMillisPerMinute, rec.region_id);
      rtts[key].push_back(rec.transport_rtt_ms);
      batches[key].insert(rec.client_ip + "\x1f" + std::to_string(rec.ts) + "\x1f" +
                          detail::report_host(rec));
    }
    for (const auto& [key, values] : rtts) {
      TimelineRow row;
      row.minute = key.first;
      row.region_id = key.second;
      row.median_rtt_ms = detail::median(values);
      row.upload_count = static_cast<std::int64_t>(batches[key].size());
      result.timeline.push_back(std::move(row));
    }
    return result;
  }

  Scenario scenario_;
  Topology topo_;
  std::uint64_t seed_;
  Timestamp now_ = 0;

  std::shared_ptr<RecordStore> store_;
  std::shared_ptr<AssociationStore> assoc_store_;
  std::unique_ptr<DnsAssociator> associator_;
  std::map<std::string, std::unique_ptr<Collector>> collectors_;
  std::map<std::string, ClientState> clients_;
  std::map<IpAddress, std::string> ip_to_region_;
  std::set<std::string> outages_;

  std::vector<AdvertEvent> advertisements_;
  std::vector<ClientUpload> uploads_;
};

// ---------------------------------------------------------------------------
// Output files

inline void write_records_jsonl(const std::string& path,
                                const std::vector<MeasurementRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.is_open()) throw ConfigError("cannot write: " + path);
  for (const auto& r : records) out << r.to_json().dump() << '\n';
}

inline void write_associations_csv(const std::string& path, const AssociationStore& store) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.is_open()) throw ConfigError("cannot write: " + path);
  out << "client_ip,ldns_ip,ts,qname\n";
  for (const IpAddress& client : store.clients()) {
    for (const AssociationEntry& e : store.get_associations(client)) {
      out << client.to_string() << ',' << e.ldns_ip.to_string() << ',' << e.ts << ','
          << e.qname << '\n';
    }
  }
}

inline void write_timeline_csv(const std::string& path,
                               const std::vector<TimelineRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out.is_open()) throw ConfigError("cannot write: " + path);
  out << "minute,region_id,median_rtt_ms,upload_count\n";
  for (const auto& r : rows) {
    out << r.minute << ',' << r.region_id << ',' << Json(r.median_rtt_ms).dump() << ','
        << r.upload_count << '\n';
  }
}

}  // namespace nelscope
