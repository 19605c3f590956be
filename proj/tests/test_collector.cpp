#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nelscope/collector.hpp"
#include "test_util.hpp"

using namespace nelscope;

namespace {

ControllerConfig test_config() {
  ControllerConfig cfg;
  cfg.base_domain = "neltest.sim";
  cfg.regions = {Region{"westus2", "http://westus2.neltest.sim/report"},
                 Region{"northcentralus", "http://northcentralus.neltest.sim/report"},
                 Region{"francecentral", "http://francecentral.neltest.sim/report"},
                 Region{"southeastasia", "http://southeastasia.neltest.sim/report"}};
  cfg.success_fraction = 1.0;
  cfg.failure_fraction = 1.0;
  cfg.max_age = 300;
  cfg.mode = ControllerMode::kFixed;
  cfg.insecure_http = true;
  return cfg;
}

std::string batch_of(int n, Timestamp now) {
  std::mt19937_64 rng(n);
  std::vector<NelReport> reports;
  for (int i = 0; i < n; ++i) {
    NelReport r = testutil::random_report(rng);
    r.observed_at = 0;
    r.age_ms = 100 * i;
    reports.push_back(std::move(r));
  }
  return encode_report_batch(reports, now);
}

HttpRequest upload_request(std::string body, std::string peer, Timestamp now,
                           double rtt = 12.0) {
  HttpRequest req;
  req.method = "POST";
  req.path = "/report";
  req.headers["Content-Type"] = std::string(kReportContentType);
  req.body = std::move(body);
  req.peer_ip = std::move(peer);
  req.host = "westus2.neltest.sim";
  req.now = now;
  req.transport_rtt_ms = rtt;
  return req;
}

}  // namespace

TEST_CASE("upload batch fans out to one record per report") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  HttpResponse resp = collector.handle_request(upload_request(batch_of(3, 5000), "100.99.98.1", 5000));
  CHECK(resp.status == 200);
  auto records = collector.query_records();
  REQUIRE(records.size() == 3);
  for (const auto& rec : records) {
    CHECK(rec.client_ip == "100.99.98.1");
    CHECK(rec.region_id == "westus2");
    CHECK(rec.upload);
    CHECK(rec.report.has_value());
    CHECK(rec.transport_rtt_ms == 12.0);
  }
}

TEST_CASE("resource responses carry measurement headers") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  HttpRequest req;
  req.method = "GET";
  req.path = "/corg1.png";
  req.peer_ip = "100.99.98.1";
  req.host = "westus2.neltest.sim:8080";
  req.now = 1000;
  HttpResponse resp = collector.handle_request(req);
  REQUIRE(resp.status == 200);
  NelPolicy p = parse_nel_header(resp.headers.at("NEL"));
  CHECK(p.success_fraction == 1.0);
  ReportGroup g = parse_report_to_header(resp.headers.at("Report-To"));
  REQUIRE(g.endpoints.size() == 1);
  CHECK_FALSE(resp.body.empty());
  // The request itself is logged as a non-upload record.
  auto records = collector.query_records();
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].upload);
  CHECK_FALSE(records[0].report.has_value());
  CHECK(records[0].request_path == "/corg1.png");
}

TEST_CASE("report uploads do not get policy headers") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  HttpResponse resp = collector.handle_request(upload_request("[]", "1.2.3.4", 0));
  CHECK(resp.status == 200);
  CHECK(resp.headers.find("NEL") == resp.headers.end());
}

TEST_CASE("empty batch produces zero records") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  CHECK(collector.handle_request(upload_request("[]", "1.2.3.4", 0)).status == 200);
  CHECK(collector.query_records().empty());
}

TEST_CASE("undecodable upload gets a 400 and one error record") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  CHECK(collector.handle_request(upload_request("{broken", "1.2.3.4", 77)).status == 400);
  auto records = collector.query_records();
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].upload);
  CHECK_FALSE(records[0].error.empty());
}

TEST_CASE("wrong content type is rejected") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  HttpRequest req = upload_request("[]", "1.2.3.4", 0);
  req.headers["Content-Type"] = "application/json";
  CHECK(collector.handle_request(req).status == 400);
  auto records = collector.query_records();
  REQUIRE(records.size() == 1);
  CHECK_FALSE(records[0].error.empty());
}

TEST_CASE("unknown path is a 404 with no record") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  HttpRequest req;
  req.method = "GET";
  req.path = "/nope.png";
  req.peer_ip = "1.2.3.4";
  req.host = "westus2.neltest.sim";
  CHECK(collector.handle_request(req).status == 404);
  HttpRequest post;
  post.method = "POST";
  post.path = "/elsewhere";
  post.peer_ip = "1.2.3.4";
  CHECK(collector.handle_request(post).status == 404);
  CHECK(collector.query_records().empty());
}

TEST_CASE("query filters and ordering") {
  auto store = std::make_shared<RecordStore>();
  Collector collector("westus2", test_config(), store);
  for (int i = 0; i < 5; ++i) {
    collector.handle_request(
        upload_request(batch_of(1, 1000 * (5 - i)), "100.99.98.1", 1000 * (5 - i)));
  }
  collector.handle_request(upload_request(batch_of(1, 9000), "10.0.0.7", 9000));

  RecordFilter by_region;
  by_region.region_id = "westus2";
  by_region.upload_only = true;
  CHECK(collector.query_records(by_region).size() == 6);

  RecordFilter by_client;
  by_client.client_ip = "100.99.98.1";
  CHECK(collector.query_records(by_client).size() == 5);

  RecordFilter in_range;
  in_range.time_range = {{2000, 4001}};
  CHECK(collector.query_records(in_range).size() == 3);

  RecordFilter empty_range;
  empty_range.time_range = {{100000, 200000}};
  CHECK(collector.query_records(empty_range).empty());

  auto all = collector.query_records();
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].ts <= all[i].ts);
}

TEST_CASE("four instances sharing a store attribute regions correctly") {
  auto store = std::make_shared<RecordStore>();
  ControllerConfig cfg = test_config();
  std::vector<std::unique_ptr<Collector>> instances;
  for (const auto& r : cfg.regions)
    instances.push_back(std::make_unique<Collector>(r.region_id, cfg, store));

  int total = 0;
  for (int round = 0; round < 3; ++round) {
    for (std::size_t i = 0; i < instances.size(); ++i) {
      int n = 1 + static_cast<int>(i);
      instances[i]->handle_request(
          upload_request(batch_of(n, 1000 * (round + 1)), "100.99.98.1", 1000 * (round + 1)));
      total += n;
    }
  }
  RecordFilter uploads;
  uploads.upload_only = true;
  CHECK(store->query(uploads).size() == static_cast<std::size_t>(total));
  // Per-region counts partition the total.
  int sum = 0;
  for (const auto& r : cfg.regions) {
    RecordFilter f;
    f.region_id = r.region_id;
    f.upload_only = true;
    sum += static_cast<int>(store->query(f).size());
  }
  CHECK(sum == total);
}

TEST_CASE("records log uses the exact field names") {
  std::string path = (std::filesystem::temp_directory_path() / "nelscope_records_test.jsonl").string();
  std::remove(path.c_str());
  {
    auto store = std::make_shared<RecordStore>(path);
    Collector collector("westus2", test_config(), store);
    collector.handle_request(upload_request(batch_of(1, 4000), "100.99.98.1", 4000));
  }
  auto rows = read_jsonl(path);
  REQUIRE(rows.size() == 1);
  const Json& row = rows[0];
  for (const char* key :
       {"ts", "client_ip", "region_id", "report", "transport_rtt_ms", "request_path", "upload"})
    CHECK(row.contains(key));
  CHECK(row.at("upload").get<bool>());
  MeasurementRecord back = MeasurementRecord::from_json(row);
  CHECK(back.region_id == "westus2");
  std::remove(path.c_str());
}
