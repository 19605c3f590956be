#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nelscope/collector.hpp"
#include "nelscope/errors.hpp"
#include "nelscope/time.hpp"
#include "nelscope/url.hpp"

namespace nelscope {

enum class HealthState { kIndeterminate, kHealthy, kDegraded, kRecovering };

inline std::string_view to_string(HealthState s) {
  switch (s) {
    case HealthState::kIndeterminate: return "indeterminate";
    case HealthState::kHealthy: return "healthy";
    case HealthState::kDegraded: return "degraded";
    case HealthState::kRecovering: return "recovering";
  }
  return "indeterminate";
}

struct MonitorParams {
  DurationMs window_ms = 60 * kMillisPerSecond;
  int baseline_windows = 5;   // K: windows needed before judging anything
  double theta_low = 0.5;     // healthy -> degraded below this share of baseline
  double theta_high = 0.8;    // recovery requires at least this share
  int recovery_windows = 3;   // R: consecutive qualifying windows to re-enter healthy

  void validate() const {
    if (window_ms <= 0) throw ConfigError("window must be positive");
    if (baseline_windows < 1) throw ConfigError("k must be >= 1");
    if (recovery_windows < 1) throw ConfigError("r must be >= 1");
    if (!(theta_low > 0.0 && theta_high > theta_low))
      throw ConfigError("need 0 < theta_low < theta_high");
  }
};

struct RegionHealth {
  std::string region_id;
  DurationMs window_ms = 0;
  double baseline_rate = 0.0;
  double current_rate = 0.0;
  HealthState state = HealthState::kIndeterminate;
};

struct HealthTransition {
  Timestamp ts = 0;  // end of the window that triggered the transition
  std::string region_id;
  HealthState old_state = HealthState::kIndeterminate;
  HealthState new_state = HealthState::kIndeterminate;
};

// Upload-rate watchdog per region. Rates count upload *batches*: the records
// log carries one row per report, so rows sharing (client, ts, region, report
// host) collapse into one batch event before counting.
class AvailabilityMonitor {
 public:
  explicit AvailabilityMonitor(MonitorParams params = {}) : params_(params) {
    params_.validate();
  }

  const MonitorParams& params() const { return params_; }

  void ingest(const MeasurementRecord& rec) {
    if (!rec.upload)
      throw ValidationError("monitor ingests upload records only");
    auto& region = regions_[rec.region_id];
    std::int64_t window = rec.ts / params_.window_ms;
    if (!region.first_window_set || (!region.started && window < region.first_window)) {
      region.first_window = window;
      region.first_window_set = true;
    }
    std::string host;
    if (rec.report) {
      try {
        host = parse_url(rec.report->url).host;
      } catch (const Error&) {
        host = rec.report->url;
      }
    }
    std::string batch_key = rec.client_ip + "\x1f" + std::to_string(rec.ts) + "\x1f" + host;
    if (!region.batch_keys.insert(batch_key).second) return;
    region.windows[window] += 1;
  }

  // Folds every window completed before `now` into the state machine and
  // reports where the region stands. Fewer than K complete windows means the
  // verdict is indeterminate.
  RegionHealth evaluate(const std::string& region_id, Timestamp now) {
    RegionHealth out;
    out.region_id = region_id;
    out.window_ms = params_.window_ms;
    auto it = regions_.find(region_id);
    if (it == regions_.end()) return out;
    RegionState& rs = it->second;
    std::int64_t complete_upto = now / params_.window_ms;  // exclusive
    while (rs.next_window < complete_upto || !rs.started) {
      if (!rs.started) {
        if (!rs.first_window_set || rs.first_window >= complete_upto) break;
        rs.next_window = rs.first_window;
        rs.started = true;
      }
      if (rs.next_window >= complete_upto) break;
      process_window(region_id, rs, rs.next_window);
      ++rs.next_window;
    }
    out.baseline_rate = rs.baseline_rate();
    out.current_rate = rs.last_rate;
    out.state = rs.state;
    return out;
  }

  const std::vector<HealthTransition>& transitions() const { return transitions_; }

  std::vector<std::string> regions() const {
    std::vector<std::string> out;
    for (const auto& [id, rs] : regions_) out.push_back(id);
    return out;
  }

 private:
  struct RegionState {
    std::map<std::int64_t, std::int64_t> windows;  // window index -> batch count
    std::set<std::string> batch_keys;
    bool first_window_set = false;
    std::int64_t first_window = 0;
    bool started = false;
    std::int64_t next_window = 0;

    HealthState state = HealthState::kIndeterminate;
    std::deque<double> baseline_hist;
    double frozen_baseline = 0.0;
    int recover_count = 0;
    double last_rate = 0.0;

    double baseline_rate() const {
      if (state == HealthState::kDegraded || state == HealthState::kRecovering)
        return frozen_baseline;
      if (baseline_hist.empty()) return 0.0;
      return std::accumulate(baseline_hist.begin(), baseline_hist.end(), 0.0) /
             static_cast<double>(baseline_hist.size());
    }
  };

  void transition(const std::string& region_id, RegionState& rs, HealthState to,
                  std::int64_t window) {
    HealthTransition t;
    t.ts = (window + 1) * params_.window_ms;
    t.region_id = region_id;
    t.old_state = rs.state;
    t.new_state = to;
    rs.state = to;
    transitions_.push_back(std::move(t));
  }

  void process_window(const std::string& region_id, RegionState& rs, std::int64_t w) {
    auto cit = rs.windows.find(w);
    double rate = cit == rs.windows.end() ? 0.0 : static_cast<double>(cit->second);
    rs.last_rate = rate;
    switch (rs.state) {
      case HealthState::kIndeterminate:
        rs.baseline_hist.push_back(rate);
        if (static_cast<int>(rs.baseline_hist.size()) >= params_.baseline_windows)
          transition(region_id, rs, HealthState::kHealthy, w);
        break;
      case HealthState::kHealthy:
        if (rate < params_.theta_low * rs.baseline_rate()) {
          // Baseline freezes here and stays frozen until fully recovered.
          rs.frozen_baseline = rs.baseline_rate();
          transition(region_id, rs, HealthState::kDegraded, w);
        } else {
          rs.baseline_hist.push_back(rate);
          while (static_cast<int>(rs.baseline_hist.size()) > params_.baseline_windows)
            rs.baseline_hist.pop_front();
        }
        break;
      case HealthState::kDegraded:
        if (rate >= params_.theta_high * rs.frozen_baseline) {
          rs.recover_count = 1;
          transition(region_id, rs, HealthState::kRecovering, w);
          if (rs.recover_count >= params_.recovery_windows)
            transition(region_id, rs, HealthState::kHealthy, w);
        }
        break;
      case HealthState::kRecovering:
        if (rate >= params_.theta_high * rs.frozen_baseline) {
          ++rs.recover_count;
          if (rs.recover_count >= params_.recovery_windows)
            transition(region_id, rs, HealthState::kHealthy, w);
        } else {
          // Any miss restarts the count from zero.
          rs.recover_count = 0;
          transition(region_id, rs, HealthState::kDegraded, w);
        }
        break;
    }
  }

  MonitorParams params_;
  std::map<std::string, RegionState> regions_;
  std::vector<HealthTransition> transitions_;
};

}  // namespace nelscope
