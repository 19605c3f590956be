#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <algorithm>

#include "nelscope/errors.hpp"
#include "nelscope/http.hpp"
#include "nelscope/ip.hpp"
#include "nelscope/nel_protocol.hpp"
#include "nelscope/time.hpp"
#include "nelscope/url.hpp"

namespace nelscope {

inline constexpr DurationMs kDefaultUploadIntervalMs = 60 * kMillisPerSecond;
inline constexpr std::size_t kDefaultQueueCap = 100;

// What happened when a resource was requested. Success carries application
// data; failure carries the phase/type pair that goes into the report body.
struct RequestOutcome {
  bool success = false;
  std::string url;
  std::int64_t status_code = 0;
  std::int64_t elapsed_time_ms = 0;
  std::string server_ip;
  std::string protocol = "http/1.1";
  std::string method = "GET";
  ReportPhase phase = ReportPhase::kApplication;
  std::string type;  // failure outcome, e.g. "dns.unreachable"

  static RequestOutcome ok(std::string url, std::int64_t status,
                           std::int64_t elapsed_ms, std::string server_ip = {}) {
    RequestOutcome o;
    o.success = true;
    o.url = std::move(url);
    o.status_code = status;
    o.elapsed_time_ms = elapsed_ms;
    o.server_ip = std::move(server_ip);
    return o;
  }

  static RequestOutcome failed(std::string url, ReportPhase phase, std::string type,
                               std::int64_t elapsed_ms = 0) {
    RequestOutcome o;
    o.success = false;
    o.url = std::move(url);
    o.phase = phase;
    o.type = std::move(type);
    o.elapsed_time_ms = elapsed_ms;
    return o;
  }
};

struct UploadOutcome {
  std::string domain;
  std::string endpoint_used;  // empty if nothing was reachable
  std::size_t batch_size = 0;
  bool delivered = false;
  bool dropped = false;  // queue discarded because no usable policy existed
  Timestamp ts = 0;
};

struct FetchResult {
  bool ok = false;
  std::int64_t status = 0;
  std::int64_t elapsed_time_ms = 0;
  std::string server_ip;
  std::string protocol = "http/1.1";
  std::map<std::string, std::string> headers;
  ReportPhase fail_phase = ReportPhase::kConnection;
  std::string fail_type = std::string(kOutcomeTcpTimedOut);
};

using ResolveFn = std::function<std::optional<IpAddress>(const std::string& host)>;
using FetchFn = std::function<FetchResult(const IpAddress& addr, const UrlParts& url)>;
using UploadFn = std::function<bool(const ReportEndpoint& endpoint,
                                    const std::string& payload, std::size_t batch_size)>;
using DrawFn = std::function<double()>;

// The NEL user-agent state machine: one policy per domain, sampled
// observations, per-domain report queues drained on a timer with endpoint
// failover. One instance per simulated browser; instances share nothing.
class BrowserEmulator {
 public:
  explicit BrowserEmulator(std::uint64_t seed = 0,
                           DurationMs upload_interval_ms = kDefaultUploadIntervalMs,
                           std::size_t queue_cap = kDefaultQueueCap)
      : rng_(seed),
        upload_interval_ms_(upload_interval_ms),
        queue_cap_(queue_cap) {
    draw_ = [this] {
      return std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    };
  }

  void set_draw_fn(DrawFn fn) { draw_ = std::move(fn); }

  // --- policy installation -------------------------------------------------

  // Headers that fail to parse are silently ignored, like a browser would.
  // A parseable policy replaces the previous one unconditionally; max_age 0
  // removes the policy and discards anything queued for the domain.
  void install_from_response(const std::string& domain, std::string_view nel_header,
                             std::string_view report_to_header, Timestamp now) {
    NelPolicy policy;
    ReportGroup group;
    try {
      policy = parse_nel_header(nel_header);
      group = parse_report_to_header(report_to_header);
    } catch (const Error&) {
      return;
    }
    if (policy.removes_policy()) {
      store_.erase(domain);
      auto it = queues_.find(domain);
      if (it != queues_.end()) {
        dropped_no_policy_ += it->second.size();
        queues_.erase(it);
      }
      return;
    }
    policy.installed_at = now;
    store_[domain] = StoreEntry{policy, group, now};
  }

  // --- observation & sampling ----------------------------------------------

  // Returns whether a report was queued. The caller supplies the draw so
  // sampling decisions are reproducible.
  bool observe_request(const std::string& domain, const RequestOutcome& outcome,
                       double draw, Timestamp now) {
    const StoreEntry* entry = find_policy(domain, now);
    if (!entry) return false;
    double fraction = outcome.success ? entry->policy.success_fraction
                                      : entry->policy.failure_fraction;
    if (!(draw < fraction)) return false;

    NelReport r;
    r.url = outcome.url.empty() ? "https://" + domain + "/" : outcome.url;
    r.observed_at = now;
    r.body.sampling_fraction = fraction;
    r.body.server_ip = outcome.server_ip;
    r.body.protocol = outcome.protocol;
    r.body.method = outcome.method;
    r.body.status_code = outcome.success ? outcome.status_code : 0;
    r.body.elapsed_time_ms = outcome.elapsed_time_ms;
    r.body.phase = outcome.success ? ReportPhase::kApplication : outcome.phase;
    r.body.type = outcome.success ? std::string(kOutcomeOk) : outcome.type;

    auto& q = queues_[domain];
    if (q.size() >= queue_cap_) {
      q.pop_front();
      ++dropped_overflow_;
    }
    q.push_back(std::move(r));
    ++queued_total_;
    return true;
  }

  // --- timed upload --------------------------------------------------------

  // Drains every due queue into one batch per domain and delivers it to the
  // endpoint group of the policy current *now*, trying endpoints in order.
  // Total failure re-queues the batch; a missing/expired policy drops it.
  std::vector<UploadOutcome> tick(Timestamp now, const UploadFn& upload) {
    std::vector<UploadOutcome> results;
    for (auto& [domain, queue] : queues_) {
      if (queue.empty()) continue;
      auto due_it = next_upload_at_.find(domain);
      if (due_it != next_upload_at_.end() && due_it->second > now) continue;

      UploadOutcome out;
      out.domain = domain;
      out.batch_size = queue.size();
      out.ts = now;

      const StoreEntry* entry = find_policy(domain, now);
      if (!entry || entry->group.group != entry->policy.report_to) {
        dropped_no_policy_ += queue.size();
        queue.clear();
        out.dropped = true;
        results.push_back(std::move(out));
        continue;
      }

      std::vector<NelReport> batch(queue.begin(), queue.end());
      queue.clear();
      std::string payload = encode_report_batch(batch, now);

      for (const ReportEndpoint* e : failover_order(entry->group)) {
        if (upload(*e, payload, batch.size())) {
          out.delivered = true;
          out.endpoint_used = e->url;
          break;
        }
      }
      if (out.delivered) {
        delivered_reports_ += batch.size();
        ++delivered_batches_;
      } else {
        queue.insert(queue.end(), batch.begin(), batch.end());
      }
      next_upload_at_[domain] = now + upload_interval_ms_;
      results.push_back(std::move(out));
    }
    ledger_.insert(ledger_.end(), results.begin(), results.end());
    return results;
  }

  // --- page loads ----------------------------------------------------------

  // Fetches each resource, installs whatever policy the response carries,
  // then runs the sampling decision with an internally drawn number.
  void load_page(const std::vector<std::string>& resource_urls, const ResolveFn& resolve,
                 const FetchFn& fetch, Timestamp now) {
    for (const auto& url : resource_urls) {
      UrlParts parts = parse_url(url);
      std::optional<IpAddress> addr = resolve(parts.host);
      if (!addr) {
        observe_request(parts.host,
                        RequestOutcome::failed(url, ReportPhase::kDns,
                                               std::string(kOutcomeDnsUnreachable)),
                        draw_(), now);
        continue;
      }
      FetchResult result = fetch(*addr, parts);
      if (!result.ok) {
        observe_request(parts.host,
                        RequestOutcome::failed(url, result.fail_phase, result.fail_type,
                                               result.elapsed_time_ms),
                        draw_(), now);
        continue;
      }
      install_from_response(parts.host,
                            detail::lookup_header(result.headers, kNelHeaderName),
                            detail::lookup_header(result.headers, kReportToHeaderName),
                            now);
      RequestOutcome ok = RequestOutcome::ok(url, result.status, result.elapsed_time_ms,
                                             result.server_ip);
      ok.protocol = result.protocol;
      observe_request(parts.host, ok, draw_(), now);
    }
  }

  // --- introspection -------------------------------------------------------

  bool has_policy(const std::string& domain, Timestamp now) const {
    return find_policy(domain, now) != nullptr;
  }

  std::optional<NelPolicy> current_policy(const std::string& domain, Timestamp now) const {
    const StoreEntry* e = find_policy(domain, now);
    if (!e) return std::nullopt;
    return e->policy;
  }

  std::optional<ReportGroup> current_group(const std::string& domain, Timestamp now) const {
    const StoreEntry* e = find_policy(domain, now);
    if (!e) return std::nullopt;
    return e->group;
  }

  std::size_t policy_count() const { return store_.size(); }

  std::size_t queue_size(const std::string& domain) const {
    auto it = queues_.find(domain);
    return it == queues_.end() ? 0 : it->second.size();
  }

  std::size_t still_queued_total() const {
    std::size_t n = 0;
    for (const auto& [d, q] : queues_) n += q.size();
    return n;
  }

  std::uint64_t queued_total() const { return queued_total_; }
  std::uint64_t delivered_reports_total() const { return delivered_reports_; }
  std::uint64_t delivered_batches_total() const { return delivered_batches_; }
  std::uint64_t dropped_overflow_total() const { return dropped_overflow_; }
  std::uint64_t dropped_no_policy_total() const { return dropped_no_policy_; }
  const std::vector<UploadOutcome>& ledger() const { return ledger_; }

 private:
  struct StoreEntry {
    NelPolicy policy;
    ReportGroup group;
    Timestamp installed_at = 0;

    bool valid_at(Timestamp now) const {
      return installed_at + seconds_to_ms(policy.max_age) >= now;
    }
  };

  // Exact domain first; otherwise the nearest ancestor whose policy opted
  // into subdomains. Expired entries are never consulted.
  const StoreEntry* find_policy(const std::string& domain, Timestamp now) const {
    auto it = store_.find(domain);
    if (it != store_.end() && it->second.valid_at(now)) return &it->second;
    std::string_view rest = domain;
    while (true) {
      auto dot = rest.find('.');
      if (dot == std::string_view::npos) break;
      rest = rest.substr(dot + 1);
      auto pit = store_.find(std::string(rest));
      if (pit != store_.end() && pit->second.policy.include_subdomains &&
          pit->second.valid_at(now))
        return &pit->second;
    }
    return nullptr;
  }

  // Spec'd order is list order; priorities, when present, group the list
  // with lower values tried first.
  static std::vector<const ReportEndpoint*> failover_order(const ReportGroup& g) {
    std::vector<const ReportEndpoint*> order;
    order.reserve(g.endpoints.size());
    for (const auto& e : g.endpoints) order.push_back(&e);
    std::stable_sort(order.begin(), order.end(),
                     [](const ReportEndpoint* a, const ReportEndpoint* b) {
                       return a->priority < b->priority;
                     });
    return order;
  }

  std::mt19937_64 rng_;
  DrawFn draw_;
  DurationMs upload_interval_ms_;
  std::size_t queue_cap_;

  std::map<std::string, StoreEntry> store_;
  std::map<std::string, std::deque<NelReport>> queues_;
  std::map<std::string, Timestamp> next_upload_at_;

  std::uint64_t queued_total_ = 0;
  std::uint64_t delivered_reports_ = 0;
  std::uint64_t delivered_batches_ = 0;
  std::uint64_t dropped_overflow_ = 0;
  std::uint64_t dropped_no_policy_ = 0;
  std::vector<UploadOutcome> ledger_;
};

}  // namespace nelscope
