#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "nelscope/browser_emulator.hpp"
#include "nelscope/collector.hpp"
#include "nelscope/dns_associator.hpp"
#include "nelscope/errors.hpp"
#include "nelscope/http.hpp"
#include "nelscope/log.hpp"
#include "nelscope/time.hpp"

namespace nelscope {

// ---------------------------------------------------------------------------
// Live HTTP collector

// cpp-httplib front end over the same Collector the simulator drives.
// Without socket-level RTT access, transport_rtt_ms falls back to request
// wall time measured around the handler.
class LiveCollectorServer {
 public:
  LiveCollectorServer(std::shared_ptr<Collector> collector, std::string bind_addr,
                      int port = 0)
      : collector_(std::move(collector)), bind_addr_(std::move(bind_addr)), port_(port) {
    server_.Post(std::string(kReportPath),
                 [this](const httplib::Request& req, httplib::Response& res) {
                   dispatch(req, res);
                 });
    server_.Get(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
      dispatch(req, res);
    });
  }

  ~LiveCollectorServer() { stop(); }

  // Binds immediately (resolving port 0 to a real one) and serves on a
  // background thread.
  void start() {
    int bound = port_ == 0 ? server_.bind_to_any_port(bind_addr_)
                           : (server_.bind_to_port(bind_addr_, port_) ? port_ : -1);
    if (bound <= 0)
      throw ConfigError("cannot bind collector to " + bind_addr_ + ":" +
                        std::to_string(port_));
    port_ = bound;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    log_line(LogLevel::kInfo, "collector",
             collector_->region_id() + " listening on " + bind_addr_ + ":" +
                 std::to_string(port_));
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }
  const Collector& collector() const { return *collector_; }

 private:
  void dispatch(const httplib::Request& req, httplib::Response& res) {
    auto t0 = std::chrono::steady_clock::now();
    HttpRequest in;
    in.method = req.method;
    in.path = req.path;
    for (const auto& [k, v] : req.headers) in.headers[k] = v;
    in.body = req.body;
    in.peer_ip = req.remote_addr;
    in.host = req.get_header_value("Host");
    in.now = wall_clock_ms();
    in.transport_rtt_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    HttpResponse out = collector_->handle_request(in);
    res.status = out.status;
    for (const auto& [k, v] : out.headers) res.set_header(k, v);
    res.set_content(out.body, "application/octet-stream");
  }

  std::shared_ptr<Collector> collector_;
  std::string bind_addr_;
  int port_ = 0;
  httplib::Server server_;
  std::thread thread_;
};

// ---------------------------------------------------------------------------
// Live UDP DNS server

class LiveDnsServer {
 public:
  LiveDnsServer(std::shared_ptr<DnsAssociator> associator, std::string bind_addr,
                int port)
      : associator_(std::move(associator)), bind_addr_(std::move(bind_addr)), port_(port) {}

  ~LiveDnsServer() { stop(); }

  void start() {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw ConfigError("cannot create UDP socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port_));
    if (inet_pton(AF_INET, bind_addr_.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      fd_ = -1;
      throw ConfigError("bad DNS bind address: " + bind_addr_);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw ConfigError("cannot bind UDP " + bind_addr_ + ":" + std::to_string(port_));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    running_ = true;
    thread_ = std::thread([this] { serve_loop(); });
    log_line(LogLevel::kInfo, "dns",
             "listening on " + bind_addr_ + ":" + std::to_string(port_));
  }

  void stop() {
    running_ = false;
    if (thread_.joinable()) thread_.join();
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  int port() const { return port_; }
  const DnsAssociator& associator() const { return *associator_; }

 private:
  void serve_loop() {
    std::vector<std::uint8_t> buf(1500);
    while (running_) {
      pollfd pfd{fd_, POLLIN, 0};
      int rc = ::poll(&pfd, 1, 100);
      if (rc <= 0 || !(pfd.revents & POLLIN)) continue;
      sockaddr_in peer{};
      socklen_t peer_len = sizeof(peer);
      ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                             reinterpret_cast<sockaddr*>(&peer), &peer_len);
      if (n <= 0) continue;
      char peer_text[INET_ADDRSTRLEN] = {0};
      inet_ntop(AF_INET, &peer.sin_addr, peer_text, sizeof(peer_text));
      std::vector<std::uint8_t> resp = associator_->handle_packet(
          buf.data(), static_cast<std::size_t>(n), IpAddress::parse(peer_text),
          wall_clock_ms());
      ::sendto(fd_, resp.data(), resp.size(), 0, reinterpret_cast<sockaddr*>(&peer),
               peer_len);
    }
  }

  std::shared_ptr<DnsAssociator> associator_;
  std::string bind_addr_;
  int port_ = 0;
  int fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread thread_;
};

// ---------------------------------------------------------------------------
// Live client side (drives the emulator over real sockets)

// One UDP question/answer round against a live DNS server.
inline std::optional<IpAddress> live_resolve(const std::string& server_ip, int server_port,
                                             const std::string& host,
                                             int timeout_ms = 2000) {
  int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) return std::nullopt;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(server_port));
  if (inet_pton(AF_INET, server_ip.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    return std::nullopt;
  }
  static std::atomic<std::uint16_t> next_id{1};
  std::uint16_t id = next_id.fetch_add(1);
  std::vector<std::uint8_t> query = dns::make_query(id, host, dns::kTypeA);
  if (::sendto(fd, query.data(), query.size(), 0, reinterpret_cast<sockaddr*>(&addr),
               sizeof(addr)) < 0) {
    ::close(fd);
    return std::nullopt;
  }
  pollfd pfd{fd, POLLIN, 0};
  if (::poll(&pfd, 1, timeout_ms) <= 0) {
    ::close(fd);
    return std::nullopt;
  }
  std::vector<std::uint8_t> buf(1500);
  ssize_t n = ::recvfrom(fd, buf.data(), buf.size(), 0, nullptr, nullptr);
  ::close(fd);
  if (n <= 0) return std::nullopt;
  try {
    dns::Message resp = dns::decode(buf.data(), static_cast<std::size_t>(n));
    if (resp.id != id || resp.rcode != dns::kRcodeNoError) return std::nullopt;
    for (const auto& rec : resp.answers) {
      if (rec.type == dns::kTypeA) return rec.to_ip();
    }
  } catch (const Error&) {
  }
  return std::nullopt;
}

// ResolveFn/FetchFn/UploadFn implementations for a BrowserEmulator running
// against live services. Hostnames resolve through the live DNS server; the
// port comes from the URL, as report endpoint URLs carry explicit ports in
// loopback deployments.
struct LiveClientBindings {
  std::string dns_ip;
  int dns_port = 0;

  ResolveFn resolver() const {
    return [dns_ip = dns_ip, dns_port = dns_port](const std::string& host) {
      return live_resolve(dns_ip, dns_port, host);
    };
  }

  FetchFn fetcher() const {
    return [](const IpAddress& addr, const UrlParts& url) {
      FetchResult out;
      httplib::Client client(addr.to_string(), url.effective_port());
      client.set_connection_timeout(2, 0);
      client.set_read_timeout(2, 0);
      httplib::Headers headers{{"Host", url.host}};
      auto t0 = std::chrono::steady_clock::now();
      httplib::Result res = client.Get(url.path, headers);
      auto elapsed =
          std::chrono::duration_cast<std::chrono::milliseconds>(
              std::chrono::steady_clock::now() - t0)
              .count();
      if (!res) {
        out.fail_phase = ReportPhase::kConnection;
        out.fail_type = std::string(kOutcomeTcpTimedOut);
        out.elapsed_time_ms = elapsed;
        return out;
      }
      out.ok = true;
      out.status = res->status;
      out.elapsed_time_ms = elapsed;
      out.server_ip = addr.to_string();
      for (const auto& [k, v] : res->headers) out.headers[k] = v;
      return out;
    };
  }

  UploadFn uploader() const {
    return [binding = *this](const ReportEndpoint& endpoint, const std::string& payload,
                             std::size_t) {
      UrlParts url = parse_url(endpoint.url);
      std::optional<IpAddress> addr = live_resolve(binding.dns_ip, binding.dns_port, url.host);
      if (!addr) return false;
      httplib::Client client(addr->to_string(), url.effective_port());
      client.set_connection_timeout(2, 0);
      client.set_read_timeout(2, 0);
      httplib::Headers headers{{"Host", url.host}};
      httplib::Result res = client.Post(std::string(kReportPath), headers, payload,
                                        std::string(kReportContentType));
      return res && res->status == 200;
    };
  }
};

}  // namespace nelscope
