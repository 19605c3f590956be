#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "nelscope/policy_controller.hpp"
#include "test_util.hpp"

using namespace nelscope;

namespace {

std::vector<Region> four_regions() {
  return {Region{"seattle", "https://seattle.example/report"},
          Region{"chicago", "https://chicago.example/report"},
          Region{"paris", "https://paris.example/report"},
          Region{"singapore", "https://singapore.example/report"}};
}

ControllerConfig base_config() {
  ControllerConfig cfg;
  cfg.base_domain = "neltest.com";
  cfg.regions = four_regions();
  cfg.success_fraction = 1.0;
  cfg.failure_fraction = 1.0;
  cfg.max_age = 300;
  return cfg;
}

}  // namespace

TEST_CASE("select_endpoint with one region is that region") {
  std::vector<Region> one = {Region{"only", "https://only.example/report"}};
  const Region& r =
      select_endpoint(IpAddress::parse("100.99.98.1"), 1'700'000'000'000, one);
  CHECK(r.region_id == "only");
}

TEST_CASE("select_endpoint is deterministic") {
  auto regions = four_regions();
  IpAddress ip = IpAddress::parse("100.99.98.1");
  Timestamp now = 1'700'000'123'456;
  CHECK(select_endpoint(ip, now, regions).region_id ==
        select_endpoint(ip, now, regions).region_id);
  // Same minute, different millisecond: same bucket.
  CHECK(select_endpoint(ip, now, regions).region_id ==
        select_endpoint(ip, now + 1, regions).region_id);
}

TEST_CASE("select_endpoint rejects an empty region list") {
  std::vector<Region> none;
  CHECK_THROWS_AS(select_endpoint(IpAddress::parse("1.2.3.4"), 0, none), ConfigError);
}

TEST_CASE("select_endpoint matches the reference hash oracle") {
  auto regions = four_regions();
  Timestamp now = 1'700'000'000'000;
  std::int64_t minute = now / 60000;
  std::mt19937_64 rng(42);
  for (int i = 0; i < 2000; ++i) {
    IpAddress ip = testutil::random_ipv4(rng);
    std::uint64_t h = testutil::reference_fnv1a_64(std::to_string(minute) + ":" + ip.to_string());
    CHECK(select_endpoint(ip, now, regions).region_id == regions[h % 4].region_id);
  }
}

TEST_CASE("select_endpoint spreads 10k clients evenly over 4 regions") {
  auto regions = four_regions();
  Timestamp now = 1'700'000'000'000;
  std::mt19937_64 rng(4242);
  std::vector<std::int64_t> counts(4, 0);
  std::set<std::string> seen;
  for (int i = 0; i < 10000; ++i) {
    IpAddress ip = testutil::random_ipv4(rng);
    const Region& r = select_endpoint(ip, now, regions);
    for (std::size_t j = 0; j < regions.size(); ++j)
      if (regions[j].region_id == r.region_id) ++counts[j];
    seen.insert(r.region_id);
  }
  CHECK(seen.size() == 4);
  for (std::int64_t c : counts) {
    CHECK(c >= 2500 - 75);  // share within +-3% of 25%
    CHECK(c <= 2500 + 75);
  }
  CHECK(testutil::chi_square(counts, 2500.0) < testutil::chi2_crit_p01(3));
}

TEST_CASE("a fixed client reaches every region across consecutive minutes") {
  auto regions = four_regions();
  IpAddress ip = IpAddress::parse("100.99.98.1");
  std::set<std::string> seen;
  Timestamp start = 1'700'000'000'000;
  for (int m = 0; m < 240; ++m)
    seen.insert(select_endpoint(ip, start + m * kMillisPerMinute, regions).region_id);
  CHECK(seen.size() == 4);
}

TEST_CASE("hostname encoding matches the documented forms") {
  CHECK(encode_client_hostname(IpAddress::parse("1.1.1.1"), "neltest.com") ==
        "1-1-1-1.neltest.com");
  CHECK(encode_client_hostname(IpAddress::parse("100.99.98.1"), "neltest.com") ==
        "100-99-98-1.neltest.com");
  CHECK(encode_client_hostname(IpAddress::parse("2001:db8::1"), "neltest.com") ==
        "2001-0db8-0000-0000-0000-0000-0000-0001.neltest.com");
}

TEST_CASE("hostname labels stay within DNS limits") {
  std::string host = encode_client_hostname(
      IpAddress::parse("ffff:ffff:ffff:ffff:ffff:ffff:ffff:ffff"), "neltest.com");
  std::string label = host.substr(0, host.find('.'));
  CHECK(label.size() <= 63);
  for (char c : label) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
    CHECK(ok);
  }
}

TEST_CASE("hostname decoding inverts encoding") {
  CHECK(decode_client_hostname("1-1-1-1.neltest.com", "neltest.com").to_string() == "1.1.1.1");
  CHECK(decode_client_hostname("74-73-110-17.neltest.com", "neltest.com").to_string() ==
        "74.73.110.17");
}

TEST_CASE("hostname decoding rejects what it should") {
  CHECK_THROWS_AS(decode_client_hostname("1-1-1-1.other.org", "neltest.com"),
                  DomainMismatchError);
  CHECK_THROWS_AS(decode_client_hostname("neltest.com", "neltest.com"), DomainMismatchError);
  CHECK_THROWS_AS(decode_client_hostname("www.neltest.com", "neltest.com"), ParseError);
  CHECK_THROWS_AS(decode_client_hostname("1-2-3.neltest.com", "neltest.com"), ParseError);
  CHECK_THROWS_AS(decode_client_hostname("1-2-3-999.neltest.com", "neltest.com"), ParseError);
  CHECK_THROWS_AS(decode_client_hostname("a-b-c-d.neltest.com", "neltest.com"), ParseError);
}

TEST_CASE("hostname codec roundtrips 1000 random addresses") {
  std::mt19937_64 rng(31415);
  for (int i = 0; i < 500; ++i) {
    IpAddress v4 = testutil::random_ipv4(rng);
    REQUIRE(decode_client_hostname(encode_client_hostname(v4, "neltest.com"), "neltest.com") ==
            v4);
    IpAddress v6 = testutil::random_ipv6(rng);
    REQUIRE(decode_client_hostname(encode_client_hostname(v6, "neltest.com"), "neltest.com") ==
            v6);
  }
}

TEST_CASE("build_policy_response in ldns-association mode encodes the client") {
  ControllerConfig cfg = base_config();
  cfg.mode = ControllerMode::kLdnsAssociation;
  RequestContext ctx;
  ctx.client_ip = IpAddress::parse("1.1.1.1");
  ctx.host = "www.neltest.com";
  ctx.now = 1'700'000'000'000;
  PolicyResponse resp = build_policy_response(ctx, cfg);
  ReportGroup g = parse_report_to_header(resp.report_to_header);
  REQUIRE(g.endpoints.size() == 1);
  CHECK(g.endpoints[0].url == "https://1-1-1-1.neltest.com/report");
}

TEST_CASE("build_policy_response carries the configured sampling and lifetime") {
  ControllerConfig cfg = base_config();
  cfg.mode = ControllerMode::kRegionSampling;
  cfg.success_fraction = 1.0;
  cfg.max_age = 300;
  RequestContext ctx;
  ctx.client_ip = IpAddress::parse("100.99.98.1");
  ctx.host = "www.neltest.com";
  ctx.now = 1'700'000'777'000;
  PolicyResponse resp = build_policy_response(ctx, cfg);
  NelPolicy p = parse_nel_header(resp.nel_header);
  CHECK(p.success_fraction == 1.0);
  CHECK(p.max_age == 300);
  CHECK(p.report_to == "default");
  // The advertised endpoint is exactly the sampler's choice.
  const Region& expect = select_endpoint(ctx.client_ip, ctx.now, cfg.regions);
  ReportGroup g = parse_report_to_header(resp.report_to_header);
  CHECK(g.endpoints[0].url == expect.report_url);
  CHECK(resp.region_id == expect.region_id);
}

TEST_CASE("fixed mode always advertises the first region") {
  ControllerConfig cfg = base_config();
  cfg.mode = ControllerMode::kFixed;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    RequestContext ctx;
    ctx.client_ip = testutil::random_ipv4(rng);
    ctx.host = "www.neltest.com";
    ctx.now = std::uniform_int_distribution<Timestamp>(0, 10'000'000'000)(rng);
    PolicyResponse resp = build_policy_response(ctx, cfg);
    CHECK(resp.region_id == "seattle");
  }
}

TEST_CASE("build_policy_response is a pure function of context and config") {
  ControllerConfig cfg = base_config();
  cfg.mode = ControllerMode::kRegionSampling;
  RequestContext ctx;
  ctx.client_ip = IpAddress::parse("8.8.8.8");
  ctx.host = "www.neltest.com";
  ctx.now = 123'456'789;
  PolicyResponse a = build_policy_response(ctx, cfg);
  PolicyResponse b = build_policy_response(ctx, cfg);
  CHECK(a.nel_header == b.nel_header);
  CHECK(a.report_to_header == b.report_to_header);
  CHECK(a.region_id == b.region_id);
}

TEST_CASE("fixed-mode rotation walks the region list") {
  ControllerConfig cfg = base_config();
  cfg.mode = ControllerMode::kFixed;
  cfg.rotation_period_s = 60;
  RequestContext ctx;
  ctx.client_ip = IpAddress::parse("100.99.98.1");
  ctx.host = "app.neltest.com";
  for (int minute = 0; minute < 8; ++minute) {
    ctx.now = minute * kMillisPerMinute + 5000;
    PolicyResponse resp = build_policy_response(ctx, cfg);
    CHECK(resp.region_id == cfg.regions[minute % 4].region_id);
  }
  // Explicit rotation events shift the whole schedule.
  cfg.rotation_offset = 1;
  ctx.now = 5000;
  CHECK(build_policy_response(ctx, cfg).region_id == "chicago");
}

TEST_CASE("host steering picks the region named by the leftmost label") {
  ControllerConfig cfg = base_config();
  cfg.mode = ControllerMode::kFixed;
  cfg.host_steering = true;
  RequestContext ctx;
  ctx.client_ip = IpAddress::parse("100.99.98.1");
  ctx.now = 1000;
  ctx.host = "chicago.pop.neltest.com";
  CHECK(build_policy_response(ctx, cfg).region_id == "chicago");
  ctx.host = "paris.pop.neltest.com";
  CHECK(build_policy_response(ctx, cfg).region_id == "paris");
  // Unrecognized labels fall back to the configured mode.
  ctx.host = "app.neltest.com";
  CHECK(build_policy_response(ctx, cfg).region_id == "seattle");
}

TEST_CASE("controller config validation") {
  ControllerConfig cfg = base_config();
  cfg.regions.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = base_config();
  cfg.regions.push_back(cfg.regions[0]);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = base_config();
  cfg.subdomain_count = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = base_config();
  cfg.regions[0].report_url = "http://plain.example/report";
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.insecure_http = true;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("controller config loads from JSON") {
  ControllerConfig cfg = ControllerConfig::from_json(Json::parse(R"({
    "base_domain": "neltest.com",
    "regions": [{"region_id": "a", "report_url": "https://a.example/report"}],
    "subdomain_count": 2,
    "success_fraction": 0.25,
    "mode": "region-sampling"
  })"));
  CHECK(cfg.subdomain_count == 2);
  CHECK(cfg.mode == ControllerMode::kRegionSampling);
  CHECK(cfg.success_fraction == 0.25);
  CHECK_THROWS_AS(ControllerConfig::from_json(Json::parse(R"({"regions":[]})")), ConfigError);
  CHECK_THROWS_AS(controller_mode_from_string("banana"), ConfigError);
}
