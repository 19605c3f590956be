#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "nelscope/availability_monitor.hpp"
#include "nelscope/collector.hpp"
#include "nelscope/dns_associator.hpp"
#include "nelscope/errors.hpp"
#include "nelscope/live.hpp"
#include "nelscope/log.hpp"
#include "nelscope/plot.hpp"
#include "nelscope/simulator.hpp"
#include "nelscope/version.hpp"

namespace nelscope::cli {

namespace fs = std::filesystem;

// Every run that writes files drops a manifest next to them, enough to
// reproduce the invocation.
inline void write_run_manifest(const fs::path& dir, const std::string& subcommand,
                               const Json& args, const std::vector<std::string>& outputs) {
  fs::create_directories(dir);
  Json doc;
  doc["version"] = std::string(kVersion);
  doc["subcommand"] = subcommand;
  doc["args"] = args;
  doc["outputs"] = outputs;
  doc["started_at_ms"] = wall_clock_ms();
  std::ofstream out(dir / "run_manifest.json", std::ios::trunc);
  if (!out.is_open())
    throw ConfigError("cannot write manifest in " + dir.string());
  out << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::string scenario_path;
  std::string topology_path;
  std::uint64_t seed = 0;
  std::string out_dir;
};

inline int cmd_simulate(const SimulateOptions& opt) {
  Scenario scenario = Scenario::load(opt.scenario_path);
  Topology topology = Topology::load(opt.topology_path);
  fs::create_directories(opt.out_dir);
  write_run_manifest(opt.out_dir, "simulate",
                     Json{{"scenario", opt.scenario_path},
                          {"topology", opt.topology_path},
                          {"seed", opt.seed},
                          {"out", opt.out_dir}},
                     {"records.jsonl", "associations.csv", "timeline.csv"});
  Simulator sim(std::move(scenario), std::move(topology), opt.seed);
  SimResult result = sim.run();
  fs::path dir(opt.out_dir);
  write_records_jsonl((dir / "records.jsonl").string(), result.records);
  write_associations_csv((dir / "associations.csv").string(), *result.associations);
  write_timeline_csv((dir / "timeline.csv").string(), result.timeline);
  std::cout << "simulated " << result.records.size() << " records, "
            << result.associations->observations().size() << " association observations\n";
  return 0;
}

// ---------------------------------------------------------------------------
// monitor

struct MonitorOptions {
  std::string log_path;
  std::int64_t window_s = 60;
  int k = 5;
  double theta_low = 0.5;
  double theta_high = 0.8;
  int r = 3;
  std::string out_path;  // empty = stdout
};

inline int cmd_monitor(const MonitorOptions& opt) {
  MonitorParams params;
  params.window_ms = seconds_to_ms(opt.window_s);
  params.baseline_windows = opt.k;
  params.theta_low = opt.theta_low;
  params.theta_high = opt.theta_high;
  params.recovery_windows = opt.r;
  AvailabilityMonitor monitor(params);

  Timestamp max_ts = 0;
  for (const Json& row : read_jsonl(opt.log_path)) {
    MeasurementRecord rec = MeasurementRecord::from_json(row);
    max_ts = std::max(max_ts, rec.ts);
    if (rec.upload) monitor.ingest(rec);
  }
  for (const std::string& region : monitor.regions()) monitor.evaluate(region, max_ts + 1);

  std::ostringstream lines;
  lines << "ts,region_id,old_state,new_state\n";
  for (const HealthTransition& t : monitor.transitions()) {
    lines << t.ts << ',' << t.region_id << ',' << to_string(t.old_state) << ','
          << to_string(t.new_state) << '\n';
  }
  if (opt.out_path.empty()) {
    std::cout << lines.str();
  } else {
    write_run_manifest(fs::path(opt.out_path).parent_path(), "monitor",
                       Json{{"log", opt.log_path}, {"window", opt.window_s}},
                       {fs::path(opt.out_path).filename().string()});
    std::ofstream out(opt.out_path, std::ios::trunc);
    if (!out.is_open()) throw ConfigError("cannot write: " + opt.out_path);
    out << lines.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// assoc dump

struct AssocDumpOptions {
  std::string log_path;
  std::string client_filter;
  std::string out_path;  // empty = stdout
};

inline int cmd_assoc_dump(const AssocDumpOptions& opt) {
  AssociationStore store;
  for (const Json& row : read_jsonl(opt.log_path)) {
    ClientLdnsAssociation assoc;
    assoc.client_ip = IpAddress::parse(row.at("client_ip").get<std::string>());
    assoc.ldns_ip = IpAddress::parse(row.at("ldns_ip").get<std::string>());
    assoc.ts = row.at("ts").get<Timestamp>();
    assoc.qname = row.at("qname").get<std::string>();
    assoc.self_resolution = assoc.client_ip == assoc.ldns_ip;
    store.record(assoc);
  }
  std::ostringstream csv;
  csv << "client_ip,ldns_ip,ts,qname\n";
  std::vector<IpAddress> clients;
  if (opt.client_filter.empty()) {
    clients = store.clients();
  } else {
    clients.push_back(IpAddress::parse(opt.client_filter));
  }
  for (const IpAddress& client : clients) {
    for (const AssociationEntry& e : store.get_associations(client)) {
      csv << client.to_string() << ',' << e.ldns_ip.to_string() << ',' << e.ts << ','
          << e.qname << '\n';
    }
  }
  if (opt.out_path.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(opt.out_path, std::ios::trunc);
    if (!out.is_open()) throw ConfigError("cannot write: " + opt.out_path);
    out << csv.str();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// export-plot

struct ExportPlotOptions {
  std::string timeline_path;
  std::string out_path;
};

inline int cmd_export_plot(const ExportPlotOptions& opt) {
  std::vector<TimelineRow> rows = read_timeline_csv(opt.timeline_path);
  std::string svg = render_timeline_svg(rows);
  fs::path out = opt.out_path.empty()
                     ? fs::path(opt.timeline_path).parent_path() / "plot.svg"
                     : fs::path(opt.out_path);
  write_run_manifest(out.parent_path().empty() ? fs::path(".") : out.parent_path(),
                     "export-plot", Json{{"timeline", opt.timeline_path}},
                     {out.filename().string()});
  std::ofstream f(out, std::ios::trunc);
  if (!f.is_open()) throw ConfigError("cannot write: " + out.string());
  f << svg;
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// serve

struct ServeOptions {
  std::string roles = "collector";  // "collector", "dns", or "collector,dns"
  std::string region_id;
  std::string listen = "127.0.0.1:8080";      // collector bind
  std::string dns_listen = "127.0.0.1:5353";  // dns bind
  std::string config_path;
  std::string log_path;
  std::string assoc_log_path;
  std::string query_log_path;
  bool insecure_http = false;
};

struct ServeConfig {
  ControllerConfig controller;
  std::optional<DnsZoneConfig> dns;
  std::vector<std::string> resource_paths;
  std::string testpage_path;

  static ServeConfig load(const std::string& path, bool insecure_override) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("cannot open config: " + path);
    Json doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
    ServeConfig cfg;
    Json controller = doc.contains("controller") ? doc.at("controller") : doc;
    if (insecure_override) controller["insecure_http"] = true;
    cfg.controller = ControllerConfig::from_json(controller);
    if (doc.contains("dns")) cfg.dns = DnsZoneConfig::from_json(doc.at("dns"));
    if (doc.contains("resources")) {
      for (const Json& p : doc.at("resources"))
        cfg.resource_paths.push_back(p.get<std::string>());
    }
    if (doc.contains("testpage")) cfg.testpage_path = doc.at("testpage").get<std::string>();
    return cfg;
  }
};

namespace detail {

inline std::pair<std::string, int> split_listen(const std::string& listen) {
  auto colon = listen.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("listen address must be host:port, got " + listen);
  try {
    return {listen.substr(0, colon), std::stoi(listen.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("bad port in: " + listen);
  }
}

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void handle_signal(int) { stop_flag().store(true); }

}  // namespace detail

// Runs until `stop` flips true (the binary wires SIGINT/SIGTERM to it).
inline int cmd_serve(const ServeOptions& opt, std::atomic<bool>& stop) {
  ServeConfig cfg = ServeConfig::load(opt.config_path, opt.insecure_http);
  bool run_collector = opt.roles.find("collector") != std::string::npos;
  bool run_dns = opt.roles.find("dns") != std::string::npos;
  if (!run_collector && !run_dns)
    throw ConfigError("role must include collector and/or dns: " + opt.roles);

  std::unique_ptr<LiveCollectorServer> collector_server;
  std::unique_ptr<LiveDnsServer> dns_server;

  if (run_collector) {
    if (opt.region_id.empty()) throw ConfigError("collector role needs --region");
    auto store = opt.log_path.empty() ? std::make_shared<RecordStore>()
                                      : std::make_shared<RecordStore>(opt.log_path);
    if (!opt.log_path.empty()) {
      write_run_manifest(fs::path(opt.log_path).parent_path(), "serve",
                         Json{{"role", opt.roles},
                              {"region", opt.region_id},
                              {"listen", opt.listen},
                              {"config", opt.config_path}},
                         {fs::path(opt.log_path).filename().string()});
    }
    auto collector = std::make_shared<Collector>(opt.region_id, cfg.controller, store);
    for (const auto& p : cfg.resource_paths) collector->add_resource(p, "resource:" + p);
    if (!cfg.testpage_path.empty()) {
      std::ifstream page(cfg.testpage_path);
      if (!page.is_open()) throw ConfigError("cannot open testpage: " + cfg.testpage_path);
      std::string html((std::istreambuf_iterator<char>(page)),
                       std::istreambuf_iterator<char>());
      collector->add_resource("/testpage.html", html);
    }
    auto [host, port] = detail::split_listen(opt.listen);
    collector_server = std::make_unique<LiveCollectorServer>(collector, host, port);
    collector_server->start();
  }
  if (run_dns) {
    if (!cfg.dns) throw ConfigError("dns role needs a dns section in the config");
    auto assoc_store = opt.assoc_log_path.empty()
                           ? std::make_shared<AssociationStore>()
                           : std::make_shared<AssociationStore>(opt.assoc_log_path);
    std::shared_ptr<JsonlWriter> query_sink;
    if (!opt.query_log_path.empty())
      query_sink = std::make_shared<JsonlWriter>(opt.query_log_path);
    auto associator = std::make_shared<DnsAssociator>(*cfg.dns, assoc_store, query_sink);
    auto [host, port] = detail::split_listen(opt.dns_listen);
    dns_server = std::make_unique<LiveDnsServer>(associator, host, port);
    dns_server->start();
  }

  while (!stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  if (dns_server) dns_server->stop();
  if (collector_server) collector_server->stop();
  return 0;
}

// ---------------------------------------------------------------------------
// argv wiring

inline int run(int argc, const char* const* argv,
               std::atomic<bool>* external_stop = nullptr) {
  CLI::App app{"NEL measurement toolkit: report collection, client-LDNS "
               "association, and desk-scale experiment replay"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  SimulateOptions sim_opt;
  CLI::App* sim = app.add_subcommand("simulate", "replay a scenario deterministically");
  sim->add_option("--scenario", sim_opt.scenario_path, "scenario JSON")->required();
  sim->add_option("--topology", sim_opt.topology_path, "topology JSON")->required();
  sim->add_option("--seed", sim_opt.seed, "PRNG seed")->default_val("0");
  sim->add_option("--out", sim_opt.out_dir, "output directory")->required();

  MonitorOptions mon_opt;
  CLI::App* mon = app.add_subcommand("monitor", "replay a records log through the "
                                                "availability monitor");
  mon->add_option("--log", mon_opt.log_path, "records.jsonl")->required();
  mon->add_option("--window", mon_opt.window_s, "window seconds")->default_val("60");
  mon->add_option("--k", mon_opt.k, "baseline windows")->default_val("5");
  mon->add_option("--theta-low", mon_opt.theta_low)->default_val("0.5");
  mon->add_option("--theta-high", mon_opt.theta_high)->default_val("0.8");
  mon->add_option("--r", mon_opt.r, "recovery windows")->default_val("3");
  mon->add_option("--out", mon_opt.out_path, "write transitions here instead of stdout");

  AssocDumpOptions assoc_opt;
  CLI::App* assoc = app.add_subcommand("assoc", "association store tools");
  CLI::App* dump = assoc->add_subcommand("dump", "dump associations as CSV");
  dump->add_option("--log", assoc_opt.log_path, "associations.jsonl")->required();
  dump->add_option("--client", assoc_opt.client_filter, "only this client IP");
  dump->add_option("--out", assoc_opt.out_path, "write CSV here instead of stdout");
  assoc->require_subcommand(1);

  ExportPlotOptions plot_opt;
  CLI::App* plot = app.add_subcommand("export-plot", "render timeline.csv as SVG");
  plot->add_option("timeline", plot_opt.timeline_path, "timeline.csv")->required();
  plot->add_option("--out", plot_opt.out_path, "output SVG path");

  ServeOptions serve_opt;
  CLI::App* serve = app.add_subcommand("serve", "run live collector/DNS services");
  serve->add_option("--role", serve_opt.roles, "collector, dns, or collector,dns")
      ->default_val("collector");
  serve->add_option("--region", serve_opt.region_id, "region id of this instance");
  serve->add_option("--listen", serve_opt.listen, "collector bind host:port")
      ->default_val("127.0.0.1:8080");
  serve->add_option("--dns-listen", serve_opt.dns_listen, "dns bind host:port")
      ->default_val("127.0.0.1:5353");
  serve->add_option("--config", serve_opt.config_path, "service config JSON")->required();
  serve->add_option("--log", serve_opt.log_path, "records JSONL path");
  serve->add_option("--assoc-log", serve_opt.assoc_log_path, "associations JSONL path");
  serve->add_option("--query-log", serve_opt.query_log_path, "raw DNS query JSONL path");
  serve->add_flag("--insecure-http", serve_opt.insecure_http,
                  "permit plain-http report endpoints (tests only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_opt);
    if (mon->parsed()) return cmd_monitor(mon_opt);
    if (assoc->parsed() && dump->parsed()) return cmd_assoc_dump(assoc_opt);
    if (plot->parsed()) return cmd_export_plot(plot_opt);
    if (serve->parsed()) {
      std::atomic<bool>* stop = external_stop ? external_stop : &detail::stop_flag();
      if (!external_stop) {
        std::signal(SIGINT, detail::handle_signal);
        std::signal(SIGTERM, detail::handle_signal);
      }
      return cmd_serve(serve_opt, *stop);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace nelscope::cli
