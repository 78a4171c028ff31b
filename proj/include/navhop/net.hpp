#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "navhop/wire.hpp"

namespace navhop {

struct HostPort {
  std::string host;
  std::uint16_t port = 0;

  bool empty() const { return host.empty(); }
  std::string str() const { return host + ":" + std::to_string(port); }
  static HostPort parse(std::string_view s);  // "host:port"

  bool operator==(const HostPort&) const = default;
};

// Owned socket fd.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();

 private:
  int fd_ = -1;
};

// Connect with timeout; throws NodeUnreachable on failure.
Socket dial(const HostPort& addr, int timeout_ms = 2000);

void set_io_timeout(int fd, int timeout_ms);

// One request/response over a fresh connection.
Message rpc(const HostPort& addr, const Message& request, int timeout_ms = 10000);

// Send a request and close without waiting for a response (kill requests).
void fire_and_forget(const HostPort& addr, const Message& request, int timeout_ms = 2000);

// Minimal threaded TCP server: one request/response pair per connection.
// The handler may return nullopt to close the connection without responding.
class RpcServer {
 public:
  using Handler = std::function<std::optional<Message>(const Message&)>;

  RpcServer() = default;
  ~RpcServer();

  void start(const HostPort& listen, Handler handler);
  void stop();

  std::uint16_t port() const { return port_; }
  const HostPort& address() const { return addr_; }

 private:
  void accept_loop();

  Socket listener_;
  Handler handler_;
  HostPort addr_;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};
  std::mutex conn_mu_;
  std::vector<std::thread> conn_threads_;
};

void ignore_sigpipe();

}  // namespace navhop
