#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <random>

#include "nelscope/browser_emulator.hpp"
#include "nelscope/collector.hpp"
#include "test_util.hpp"

using namespace nelscope;

namespace {

std::string nel_header(double success, std::int64_t max_age, bool subdomains = false,
                       const std::string& group = "default") {
  NelPolicy p;
  p.report_to = group;
  p.max_age = max_age;
  p.success_fraction = success;
  p.failure_fraction = 1.0;
  p.include_subdomains = subdomains;
  return serialize_nel_header(p);
}

std::string group_header(const std::vector<std::string>& urls, std::int64_t max_age = 300,
                         const std::string& group = "default") {
  ReportGroup g;
  g.group = group;
  g.max_age = max_age;
  for (const auto& u : urls) g.endpoints.push_back(ReportEndpoint{u, 0, 1});
  return serialize_report_to_header(g);
}

RequestOutcome ok_outcome(const std::string& url) {
  return RequestOutcome::ok(url, 200, 30, "10.0.0.1");
}

// Transport that remembers what it was asked to deliver and can be told
// which endpoint URLs are unreachable.
struct FakeTransport {
  std::map<std::string, int> delivered_batches;
  std::map<std::string, std::size_t> delivered_reports;
  std::vector<std::string> last_payloads;
  std::set<std::string> down;

  UploadFn fn() {
    return [this](const ReportEndpoint& ep, const std::string& payload, std::size_t n) {
      if (down.count(ep.url)) return false;
      delivered_batches[ep.url] += 1;
      delivered_reports[ep.url] += n;
      last_payloads.push_back(payload);
      return true;
    };
  }
};

}  // namespace

TEST_CASE("a newer policy overwrites the previous one unconditionally") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(0.25, 3600),
                            group_header({"https://a.example/report"}), 0);
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://b.example/report"}), 10);
  CHECK(emu.policy_count() == 1);
  auto policy = emu.current_policy("app.neltest.sim", 10);
  REQUIRE(policy.has_value());
  CHECK(policy->success_fraction == 1.0);
  auto group = emu.current_group("app.neltest.sim", 10);
  REQUIRE(group.has_value());
  CHECK(group->endpoints[0].url == "https://b.example/report");
}

TEST_CASE("max_age zero removes the policy and its queue") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://a.example/report"}), 0);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/x"), 0.0, 1);
  CHECK(emu.queue_size("app.neltest.sim") == 1);
  emu.install_from_response("app.neltest.sim", nel_header(0.0, 0),
                            group_header({"https://a.example/report"}), 2);
  CHECK_FALSE(emu.has_policy("app.neltest.sim", 2));
  CHECK(emu.queue_size("app.neltest.sim") == 0);
  CHECK(emu.dropped_no_policy_total() == 1);
}

TEST_CASE("malformed headers leave the store untouched") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(0.5, 3600),
                            group_header({"https://a.example/report"}), 0);
  emu.install_from_response("app.neltest.sim", "{broken", group_header({"https://b/r"}), 1);
  emu.install_from_response("app.neltest.sim", nel_header(0.9, 60), "also broken", 1);
  auto policy = emu.current_policy("app.neltest.sim", 1);
  REQUIRE(policy.has_value());
  CHECK(policy->success_fraction == 0.5);
}

TEST_CASE("sampling honors the draw") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://a.example/report"}), 0);
  CHECK(emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/a"),
                            0.9999, 1));

  emu.install_from_response("app.neltest.sim", nel_header(0.25, 3600),
                            group_header({"https://a.example/report"}), 1);
  CHECK_FALSE(
      emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/b"), 0.9, 2));
  CHECK(
      emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/c"), 0.2, 3));
}

TEST_CASE("no policy or an expired policy means nothing is queued") {
  BrowserEmulator emu;
  CHECK_FALSE(emu.observe_request("nowhere.sim", ok_outcome("https://nowhere.sim/"), 0.0, 0));
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 10),
                            group_header({"https://a.example/report"}), 0);
  // Valid exactly at max_age, gone after it.
  CHECK(emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/x"), 0.0,
                            10'000));
  CHECK_FALSE(emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/x"),
                                  0.0, 10'001));
}

TEST_CASE("10k observations at fraction 0.25 queue within 3% of a quarter") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(0.25, 1'000'000),
                            group_header({"https://a.example/report"}), 0);
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  int queued = 0, oracle = 0;
  for (int i = 0; i < 10000; ++i) {
    double draw = uniform(rng);
    if (draw < 0.25) ++oracle;  // independent count of the same decision rule
    if (emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), draw,
                            i))
      ++queued;
  }
  CHECK(queued == oracle);
  CHECK(queued >= 2500 - 75);
  CHECK(queued <= 2500 + 75);
}

TEST_CASE("queued reports deliver to the latest policy's endpoint") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://region-a.example/report"}), 0);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, 1000);
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://region-b.example/report"}), 2000);
  FakeTransport transport;
  auto results = emu.tick(3000, transport.fn());
  REQUIRE(results.size() == 1);
  CHECK(results[0].delivered);
  CHECK(results[0].endpoint_used == "https://region-b.example/report");
  CHECK(transport.delivered_batches.count("https://region-b.example/report") == 1);
  CHECK(transport.delivered_batches.count("https://region-a.example/report") == 0);
}

TEST_CASE("failover walks the endpoint list in order") {
  BrowserEmulator emu;
  emu.install_from_response(
      "app.neltest.sim", nel_header(1.0, 3600),
      group_header({"https://first.example/report", "https://second.example/report"}), 0);
  for (int i = 0; i < 3; ++i)
    emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, i);
  FakeTransport transport;
  transport.down.insert("https://first.example/report");
  auto results = emu.tick(1000, transport.fn());
  REQUIRE(results.size() == 1);
  CHECK(results[0].delivered);
  CHECK(results[0].batch_size == 3);
  CHECK(results[0].endpoint_used == "https://second.example/report");
  CHECK(emu.delivered_reports_total() == 3);
}

TEST_CASE("lower priority values are tried first") {
  BrowserEmulator emu;
  ReportGroup g;
  g.group = "default";
  g.max_age = 300;
  g.endpoints.push_back(ReportEndpoint{"https://backup.example/report", 1, 1});
  g.endpoints.push_back(ReportEndpoint{"https://primary.example/report", 0, 1});
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            serialize_report_to_header(g), 0);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, 1);
  FakeTransport transport;
  auto results = emu.tick(1000, transport.fn());
  CHECK(results[0].endpoint_used == "https://primary.example/report");
}

TEST_CASE("uploads keep a 60 second minimum spacing per domain") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://a.example/report"}), 0);
  FakeTransport transport;
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/1"), 0.0, 0);
  CHECK(emu.tick(0, transport.fn()).size() == 1);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/2"), 0.0, 10'000);
  CHECK(emu.tick(30'000, transport.fn()).empty());
  auto second = emu.tick(60'000, transport.fn());
  REQUIRE(second.size() == 1);
  CHECK(second[0].batch_size == 1);
}

TEST_CASE("total failure re-queues the batch for the next cycle") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://only.example/report"}), 0);
  for (int i = 0; i < 2; ++i)
    emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, i);
  FakeTransport transport;
  transport.down.insert("https://only.example/report");
  auto failed = emu.tick(1000, transport.fn());
  REQUIRE(failed.size() == 1);
  CHECK_FALSE(failed[0].delivered);
  CHECK_FALSE(failed[0].dropped);
  CHECK(emu.queue_size("app.neltest.sim") == 2);
  // Not retried before the next upload window even though it failed.
  CHECK(emu.tick(30'000, transport.fn()).empty());
  transport.down.clear();
  auto retried = emu.tick(61'000, transport.fn());
  REQUIRE(retried.size() == 1);
  CHECK(retried[0].delivered);
  CHECK(retried[0].batch_size == 2);
  CHECK(emu.queue_size("app.neltest.sim") == 0);
}

TEST_CASE("age is stamped at send time") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://a.example/report"}), 0);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, 1000);
  FakeTransport transport;
  emu.tick(9000, transport.fn());
  REQUIRE(transport.last_payloads.size() == 1);
  auto reports = decode_report_batch(transport.last_payloads[0]);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].age_ms == 8000);
}

TEST_CASE("a queue without a usable policy is dropped at tick") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 5),
                            group_header({"https://a.example/report"}), 0);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, 1000);
  FakeTransport transport;
  // Policy (max_age 5s) is long expired by the time the timer fires.
  auto results = emu.tick(10'000, transport.fn());
  REQUIRE(results.size() == 1);
  CHECK(results[0].dropped);
  CHECK_FALSE(results[0].delivered);
  CHECK(emu.queue_size("app.neltest.sim") == 0);
  CHECK(emu.dropped_no_policy_total() == 1);
  CHECK(transport.delivered_batches.empty());
}

TEST_CASE("a group name mismatch leaves reports with no endpoints") {
  BrowserEmulator emu;
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600, false, "telemetry"),
                            group_header({"https://a.example/report"}, 300, "other-group"), 0);
  emu.observe_request("app.neltest.sim", ok_outcome("https://app.neltest.sim/img"), 0.0, 1);
  FakeTransport transport;
  auto results = emu.tick(1000, transport.fn());
  REQUIRE(results.size() == 1);
  CHECK(results[0].dropped);
}

TEST_CASE("queue overflow drops the oldest reports") {
  BrowserEmulator emu(0, kDefaultUploadIntervalMs, 5);
  emu.install_from_response("app.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://a.example/report"}), 0);
  for (int i = 0; i < 7; ++i)
    emu.observe_request("app.neltest.sim",
                        ok_outcome("https://app.neltest.sim/img" + std::to_string(i)), 0.0, i);
  CHECK(emu.queue_size("app.neltest.sim") == 5);
  CHECK(emu.dropped_overflow_total() == 2);
  FakeTransport transport;
  emu.tick(1000, transport.fn());
  auto reports = decode_report_batch(transport.last_payloads.at(0));
  REQUIRE(reports.size() == 5);
  CHECK(reports[0].url == "https://app.neltest.sim/img2");  // 0 and 1 were displaced
}

TEST_CASE("include_subdomains covers children until one shadows it") {
  BrowserEmulator emu;
  emu.install_from_response("neltest.sim", nel_header(1.0, 3600, true),
                            group_header({"https://parent.example/report"}), 0);
  CHECK(emu.observe_request("img.neltest.sim", ok_outcome("https://img.neltest.sim/a"), 0.0, 1));
  FakeTransport transport;
  auto results = emu.tick(1000, transport.fn());
  REQUIRE(results.size() == 1);
  CHECK(results[0].endpoint_used == "https://parent.example/report");

  emu.install_from_response("img.neltest.sim", nel_header(1.0, 3600),
                            group_header({"https://child.example/report"}), 2000);
  emu.observe_request("img.neltest.sim", ok_outcome("https://img.neltest.sim/b"), 0.0, 2001);
  results = emu.tick(61'000, transport.fn());
  REQUIRE(results.size() == 1);
  CHECK(results[0].endpoint_used == "https://child.example/report");

  // Without the flag, parents do not cover children.
  BrowserEmulator strict;
  strict.install_from_response("neltest.sim", nel_header(1.0, 3600, false),
                               group_header({"https://parent.example/report"}), 0);
  CHECK_FALSE(
      strict.observe_request("img.neltest.sim", ok_outcome("https://img.neltest.sim/a"), 0.0, 1));
}

// ---------------------------------------------------------------------------
// load_page against in-memory collectors

namespace {

struct TwoSiteWorld {
  std::shared_ptr<RecordStore> store = std::make_shared<RecordStore>();
  std::unique_ptr<Collector> site_a;
  std::unique_ptr<Collector> site_b;
  Timestamp now = 0;

  TwoSiteWorld() {
    ControllerConfig cfg;
    cfg.base_domain = "neltest.sim";
    cfg.regions = {Region{"site_b", "http://siteb.neltest.sim/report"},
                   Region{"site_a", "http://sitea.neltest.sim/report"}};
    cfg.success_fraction = 1.0;
    cfg.failure_fraction = 1.0;
    cfg.max_age = 300;
    cfg.mode = ControllerMode::kFixed;  // regions[0]: everything advertises site B
    cfg.insecure_http = true;
    site_a = std::make_unique<Collector>("site_a", cfg, store);
    site_b = std::make_unique<Collector>("site_b", cfg, store);
  }

  Collector* by_host(const std::string& host) {
    if (host == "sitea.neltest.sim") return site_a.get();
    if (host == "siteb.neltest.sim") return site_b.get();
    return nullptr;
  }

  ResolveFn resolver() {
    return [this](const std::string& host) -> std::optional<IpAddress> {
      if (by_host(host)) return IpAddress::parse("10.0.0.1");
      return std::nullopt;
    };
  }

  FetchFn fetcher(const std::string& client_ip) {
    return [this, client_ip](const IpAddress&, const UrlParts& url) {
      FetchResult out;
      Collector* target = by_host(url.host);
      if (!target) return out;
      HttpRequest req;
      req.method = "GET";
      req.path = url.path;
      req.peer_ip = client_ip;
      req.host = url.host;
      req.now = now;
      req.transport_rtt_ms = 10;
      HttpResponse resp = target->handle_request(req);
      out.ok = true;
      out.status = resp.status;
      out.headers = resp.headers;
      out.elapsed_time_ms = 10;
      out.server_ip = "10.0.0.1";
      return out;
    };
  }

  UploadFn uploader(const std::string& client_ip) {
    return [this, client_ip](const ReportEndpoint& ep, const std::string& payload,
                             std::size_t) {
      UrlParts url = parse_url(ep.url);
      Collector* target = by_host(url.host);
      if (!target) return false;
      HttpRequest req;
      req.method = "POST";
      req.path = std::string(kReportPath);
      req.headers["Content-Type"] = std::string(kReportContentType);
      req.body = payload;
      req.peer_ip = client_ip;
      req.host = url.host;
      req.now = now;
      req.transport_rtt_ms = 25;
      return target->handle_request(req).status == 200;
    };
  }
};

}  // namespace

TEST_CASE("a page served by site A uploads its report to site B") {
  TwoSiteWorld world;
  BrowserEmulator emu(1);
  world.now = 0;
  emu.load_page({"http://sitea.neltest.sim/corg1.png"}, world.resolver(),
                world.fetcher("100.99.98.1"), world.now);
  CHECK(emu.queue_size("sitea.neltest.sim") == 1);
  world.now = 5000;
  auto results = emu.tick(world.now, world.uploader("100.99.98.1"));
  REQUIRE(results.size() == 1);
  CHECK(results[0].delivered);

  RecordFilter uploads;
  uploads.upload_only = true;
  RecordFilter site_b_uploads = uploads;
  site_b_uploads.region_id = "site_b";
  CHECK(world.store->query(site_b_uploads).size() == 1);
  RecordFilter site_a_uploads = uploads;
  site_a_uploads.region_id = "site_a";
  CHECK(world.store->query(site_a_uploads).empty());
  auto rec = world.store->query(site_b_uploads)[0];
  REQUIRE(rec.report.has_value());
  CHECK(rec.report->url == "http://sitea.neltest.sim/corg1.png");
  CHECK(rec.report->body.type == "ok");
}

TEST_CASE("four subdomains install four policies and stay within 4 uploads per minute") {
  TwoSiteWorld world;
  // Serve the same resource under four hostnames of site A.
  std::vector<std::string> page;
  for (int i = 1; i <= 4; ++i) page.push_back("http://sitea.neltest.sim/corg1.png");
  // Distinct domains need distinct hosts; emulate with path-distinct URLs on
  // four aliases that all resolve to site A.
  BrowserEmulator emu(2);
  auto resolve = [](const std::string&) { return IpAddress::parse("10.0.0.1"); };
  auto fetch = world.fetcher("100.99.98.1");
  std::vector<std::string> hosts = {"s1.neltest.sim", "s2.neltest.sim", "s3.neltest.sim",
                                    "s4.neltest.sim"};
  for (Timestamp minute = 0; minute < 3; ++minute) {
    Timestamp now = minute * kMillisPerMinute;
    world.now = now;
    for (const auto& h : hosts) {
      emu.install_from_response(h, nel_header(1.0, 3600),
                                group_header({"http://siteb.neltest.sim/report"}), now);
      emu.observe_request(h, ok_outcome("http://" + h + "/corg1.png"), 0.0, now);
    }
    auto results = emu.tick(now, world.uploader("100.99.98.1"));
    CHECK(results.size() == 4);
  }
  CHECK(emu.policy_count() == 4);
  CHECK(emu.delivered_batches_total() == 12);  // 4 per minute, 3 minutes
}

TEST_CASE("resources with dead DNS report dns.unreachable under a covering policy") {
  TwoSiteWorld world;
  BrowserEmulator emu(3);
  // A wildcard-ish policy covering subdomains was installed earlier.
  emu.install_from_response("neltest.sim", nel_header(1.0, 3600, true),
                            group_header({"http://siteb.neltest.sim/report"}), 0);
  world.now = 1000;
  emu.load_page({"http://gone.neltest.sim/x.png"},
                [](const std::string&) { return std::optional<IpAddress>{}; },
                world.fetcher("100.99.98.1"), world.now);
  CHECK(emu.queue_size("gone.neltest.sim") == 1);
  FakeTransport transport;
  emu.tick(2000, transport.fn());
  auto reports = decode_report_batch(transport.last_payloads.at(0));
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].body.type == "dns.unreachable");
  CHECK(reports[0].body.phase == ReportPhase::kDns);

  // Without any covering policy, nothing is queued.
  BrowserEmulator bare(4);
  bare.load_page({"http://gone.neltest.sim/x.png"},
                 [](const std::string&) { return std::optional<IpAddress>{}; },
                 world.fetcher("100.99.98.1"), 0);
  CHECK(bare.still_queued_total() == 0);
}

// ---------------------------------------------------------------------------
// Property: conservation and rate bound under random operation sequences

TEST_CASE("conservation holds under random operation sequences") {
  std::mt19937_64 rng(987);
  for (int round = 0; round < 20; ++round) {
    BrowserEmulator emu(round, kDefaultUploadIntervalMs, 10);
    FakeTransport transport;
    std::vector<std::string> domains = {"a.sim", "b.sim", "c.sim"};
    std::map<std::string, std::vector<Timestamp>> deliveries;
    Timestamp now = 0;
    for (int step = 0; step < 400; ++step) {
      now += std::uniform_int_distribution<Timestamp>(100, 20'000)(rng);
      const std::string& domain = domains[rng() % domains.size()];
      switch (rng() % 5) {
        case 0:
          emu.install_from_response(
              domain, nel_header(1.0, std::uniform_int_distribution<int>(0, 120)(rng)),
              group_header({"https://" + domain + "/report"}), now);
          break;
        case 1:
        case 2:
          emu.observe_request(domain, ok_outcome("https://" + domain + "/img"),
                              std::uniform_real_distribution<double>(0.0, 1.0)(rng), now);
          break;
        default: {
          if (rng() % 3 == 0)
            transport.down.insert("https://" + domain + "/report");
          else
            transport.down.erase("https://" + domain + "/report");
          auto results = emu.tick(now, transport.fn());
          for (const auto& r : results) {
            if (r.delivered) deliveries[r.domain].push_back(now);
            // Whatever was used belongs to the policy current at tick time.
            if (r.delivered) {
              auto group = emu.current_group(r.domain, now);
              REQUIRE(group.has_value());
              bool member = false;
              for (const auto& e : group->endpoints) member |= (e.url == r.endpoint_used);
              REQUIRE(member);
            }
          }
          break;
        }
      }
      REQUIRE(emu.policy_count() <= domains.size());
    }
    // queued = delivered + dropped + still queued, per run.
    CHECK(emu.queued_total() == emu.delivered_reports_total() +
                                    emu.dropped_overflow_total() +
                                    emu.dropped_no_policy_total() + emu.still_queued_total());
    // No domain ever delivers twice inside one upload interval.
    for (const auto& [domain, times] : deliveries) {
      for (std::size_t i = 1; i < times.size(); ++i)
        CHECK(times[i] - times[i - 1] >= kDefaultUploadIntervalMs);
    }
  }
}
