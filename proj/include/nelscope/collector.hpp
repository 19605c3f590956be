#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nelscope/errors.hpp"
#include "nelscope/http.hpp"
#include "nelscope/jsonl.hpp"
#include "nelscope/nel_protocol.hpp"
#include "nelscope/policy_controller.hpp"
#include "nelscope/time.hpp"

namespace nelscope {

inline constexpr std::string_view kReportPath = "/report";

// ---------------------------------------------------------------------------
// Measurement records — the artifact's access log

struct MeasurementRecord {
  Timestamp ts = 0;
  std::string client_ip;
  std::string region_id;
  std::optional<NelReport> report;  // absent for non-upload requests
  double transport_rtt_ms = 0.0;
  std::string request_path;
  bool upload = false;
  std::string error;  // set when an upload body failed to decode

  Json to_json() const {
    Json doc;
    doc["ts"] = ts;
    doc["client_ip"] = client_ip;
    doc["region_id"] = region_id;
    if (report) doc["report"] = report_to_json(*report, ts);
    doc["transport_rtt_ms"] = transport_rtt_ms;
    doc["request_path"] = request_path;
    doc["upload"] = upload;
    if (!error.empty()) doc["error"] = error;
    return doc;
  }

  static MeasurementRecord from_json(const Json& doc) {
    MeasurementRecord r;
    r.ts = doc.at("ts").get<Timestamp>();
    r.client_ip = doc.at("client_ip").get<std::string>();
    r.region_id = doc.at("region_id").get<std::string>();
    if (doc.contains("report")) r.report = report_from_json(doc.at("report"));
    r.transport_rtt_ms = doc.at("transport_rtt_ms").get<double>();
    r.request_path = doc.at("request_path").get<std::string>();
    r.upload = doc.at("upload").get<bool>();
    if (doc.contains("error")) r.error = doc.at("error").get<std::string>();
    return r;
  }
};

struct RecordFilter {
  std::optional<std::string> region_id;
  std::optional<std::string> client_ip;
  std::optional<std::pair<Timestamp, Timestamp>> time_range;  // [from, to)
  bool upload_only = false;
};

// Shared by every collector instance in a process. Appends are serialized;
// queries copy under the lock and so always see a consistent prefix.
class RecordStore {
 public:
  RecordStore() = default;

  explicit RecordStore(const std::string& jsonl_path) : sink_(jsonl_path) {}

  void append(MeasurementRecord rec) {
    std::lock_guard<std::mutex> lock(mu_);
    if (sink_.is_open()) sink_.append(rec.to_json());
    records_.push_back(std::move(rec));
  }

  std::vector<MeasurementRecord> query(const RecordFilter& f = {}) const {
    std::vector<MeasurementRecord> out;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (const auto& r : records_) {
        if (f.region_id && r.region_id != *f.region_id) continue;
        if (f.client_ip && r.client_ip != *f.client_ip) continue;
        if (f.time_range && (r.ts < f.time_range->first || r.ts >= f.time_range->second))
          continue;
        if (f.upload_only && !r.upload) continue;
        out.push_back(r);
      }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const MeasurementRecord& a, const MeasurementRecord& b) {
                       return a.ts < b.ts;
                     });
    return out;
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return records_.size();
  }

 private:
  mutable std::mutex mu_;
  std::vector<MeasurementRecord> records_;
  JsonlWriter sink_;
};

// One collector instance = one region's serving site. Takes report uploads
// on POST /report, serves resources with measurement headers attached on GET,
// and appends one record per request (or per report, for uploads).
class Collector {
 public:
  Collector(std::string region_id, ControllerConfig cfg,
            std::shared_ptr<RecordStore> store)
      : region_id_(std::move(region_id)), cfg_(std::move(cfg)), store_(std::move(store)) {
    cfg_.validate();
    resources_["/corg1.png"] = "not really a corgi";
  }

  const std::string& region_id() const { return region_id_; }
  const ControllerConfig& config() const { return cfg_; }
  ControllerConfig& mutable_config() { return cfg_; }
  const RecordStore& store() const { return *store_; }

  void add_resource(std::string path, std::string bytes) {
    resources_[std::move(path)] = std::move(bytes);
  }

  HttpResponse handle_request(const HttpRequest& req) {
    if (req.method == "POST" && req.path == kReportPath) return handle_upload(req);
    if (req.method == "GET") return handle_resource(req);
    return HttpResponse{404, {}, "not found\n"};
  }

  std::vector<MeasurementRecord> query_records(const RecordFilter& f = {}) const {
    return store_->query(f);
  }

 private:
  HttpResponse handle_upload(const HttpRequest& req) {
    std::string ct = detail::lookup_header(req.headers, "Content-Type");
    if (ct != kReportContentType) {
      append_error_record(req, "unsupported content-type: " + ct);
      return HttpResponse{400, {}, "expected " + std::string(kReportContentType) + "\n"};
    }
    std::vector<NelReport> reports;
    try {
      reports = decode_report_batch(req.body);
    } catch (const Error& e) {
      append_error_record(req, e.what());
      return HttpResponse{400, {}, std::string(e.what()) + "\n"};
    }
    for (const auto& r : reports) {
      MeasurementRecord rec;
      rec.ts = req.now;
      rec.client_ip = req.peer_ip;
      rec.region_id = region_id_;
      rec.report = r;
      rec.transport_rtt_ms = req.transport_rtt_ms;
      rec.request_path = req.path;
      rec.upload = true;
      store_->append(std::move(rec));
    }
    return HttpResponse{200, {}, ""};
  }

  HttpResponse handle_resource(const HttpRequest& req) {
    auto it = resources_.find(req.path);
    if (it == resources_.end()) return HttpResponse{404, {}, "not found\n"};

    RequestContext ctx;
    ctx.client_ip = IpAddress::parse(req.peer_ip);
    ctx.host = detail::strip_port(req.host);
    ctx.now = req.now;
    ctx.resource_path = req.path;
    PolicyResponse policy = build_policy_response(ctx, cfg_);

    MeasurementRecord rec;
    rec.ts = req.now;
    rec.client_ip = req.peer_ip;
    rec.region_id = region_id_;
    rec.transport_rtt_ms = req.transport_rtt_ms;
    rec.request_path = req.path;
    rec.upload = false;
    store_->append(std::move(rec));

    HttpResponse resp;
    resp.status = 200;
    resp.headers[std::string(kNelHeaderName)] = policy.nel_header;
    resp.headers[std::string(kReportToHeaderName)] = policy.report_to_header;
    resp.headers["X-Advertised-Region"] = policy.region_id;
    resp.body = it->second;
    return resp;
  }

  void append_error_record(const HttpRequest& req, std::string why) {
    MeasurementRecord rec;
    rec.ts = req.now;
    rec.client_ip = req.peer_ip;
    rec.region_id = region_id_;
    rec.transport_rtt_ms = req.transport_rtt_ms;
    rec.request_path = req.path;
    rec.upload = false;
    rec.error = std::move(why);
    store_->append(std::move(rec));
  }

  std::string region_id_;
  ControllerConfig cfg_;
  std::shared_ptr<RecordStore> store_;
  std::map<std::string, std::string> resources_;
};

}  // namespace nelscope
