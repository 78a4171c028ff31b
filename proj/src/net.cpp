#include "navhop/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "navhop/strings.hpp"

namespace navhop {

HostPort HostPort::parse(std::string_view s) {
  std::size_t colon = s.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    raise(Errc::kInvalidArgument, "expected host:port, got '" + std::string(s) + "'");
  }
  auto port = parse_u64(s.substr(colon + 1));
  if (!port || *port > 65535) raise(Errc::kInvalidArgument, "bad port in '" + std::string(s) + "'");
  return HostPort{std::string(s.substr(0, colon)), static_cast<std::uint16_t>(*port)};
}

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void set_io_timeout(int fd, int timeout_ms) {
  timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

namespace {

sockaddr_in make_addr(const HostPort& hp) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(hp.port);
  if (::inet_pton(AF_INET, hp.host.c_str(), &addr.sin_addr) != 1) {
    raise(Errc::kInvalidArgument, "not an IPv4 address: " + hp.host);
  }
  return addr;
}

}  // namespace

Socket dial(const HostPort& hp, int timeout_ms) {
  sockaddr_in addr = make_addr(hp);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) raise(Errc::kIoError, "socket() failed");
  Socket sock(fd);

  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc != 0) {
    if (errno != EINPROGRESS) {
      raise(Errc::kNodeUnreachable, "connect to " + hp.str() + " failed");
    }
    pollfd pfd{fd, POLLOUT, 0};
    rc = ::poll(&pfd, 1, timeout_ms);
    if (rc <= 0) raise(Errc::kNodeUnreachable, "connect to " + hp.str() + " timed out");
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      raise(Errc::kNodeUnreachable, "connect to " + hp.str() + ": " + strerror(err));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return sock;
}

Message rpc(const HostPort& addr, const Message& request, int timeout_ms) {
  Socket sock = dial(addr, std::min(timeout_ms, 2000));
  set_io_timeout(sock.fd(), timeout_ms);
  write_frame(sock.fd(), encode_message(request));
  return decode_message(read_frame(sock.fd()));
}

void fire_and_forget(const HostPort& addr, const Message& request, int timeout_ms) {
  Socket sock = dial(addr, timeout_ms);
  set_io_timeout(sock.fd(), timeout_ms);
  write_frame(sock.fd(), encode_message(request));
}

RpcServer::~RpcServer() { stop(); }

void RpcServer::start(const HostPort& listen_on, Handler handler) {
  handler_ = std::move(handler);
  sockaddr_in addr = make_addr(listen_on);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) raise(Errc::kIoError, "socket() failed");
  listener_ = Socket(fd);
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    raise(Errc::kIoError, "bind " + listen_on.str() + " failed: " + strerror(errno));
  }
  if (::listen(fd, 64) != 0) raise(Errc::kIoError, "listen failed");

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
  addr_ = HostPort{listen_on.host, port_};
  stopping_ = false;
  accept_thread_ = std::thread([this] { accept_loop(); });
}

void RpcServer::accept_loop() {
  while (!stopping_) {
    pollfd pfd{listener_.fd(), POLLIN, 0};
    int rc = ::poll(&pfd, 1, 200);
    if (stopping_) break;
    if (rc <= 0) continue;
    int conn = ::accept(listener_.fd(), nullptr, nullptr);
    if (conn < 0) continue;
    std::lock_guard lk(conn_mu_);
    conn_threads_.emplace_back([this, conn] {
      Socket sock(conn);
      set_io_timeout(conn, 15000);
      try {
        Message req = decode_message(read_frame(conn));
        std::optional<Message> resp;
        try {
          resp = handler_(req);
        } catch (const Error& e) {
          resp = error_response(e.code(), e.what());
        } catch (const std::exception& e) {
          resp = error_response(Errc::kIoError, e.what());
        }
        if (resp) write_frame(conn, encode_message(*resp));
      } catch (const std::exception&) {
        // Malformed or interrupted request; drop the connection.
      }
    });
  }
}

void RpcServer::stop() {
  if (stopping_.exchange(true)) return;
  if (accept_thread_.joinable()) accept_thread_.join();
  listener_.close();
  std::vector<std::thread> threads;
  {
    std::lock_guard lk(conn_mu_);
    threads.swap(conn_threads_);
  }
  for (auto& t : threads) {
    if (t.joinable()) t.join();
  }
}

void ignore_sigpipe() { ::signal(SIGPIPE, SIG_IGN); }

}  // namespace navhop
