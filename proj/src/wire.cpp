#include "navhop/wire.hpp"

#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "navhop/strings.hpp"

namespace navhop {

Message& Message::set(const std::string& key, std::string_view value) {
  if (key.empty() || key.find('=') != std::string::npos || key.find('\n') != std::string::npos) {
    raise(Errc::kInvalidArgument, "bad message key");
  }
  if (value.find('\n') != std::string_view::npos) {
    raise(Errc::kInvalidArgument, "message value contains newline");
  }
  fields[key] = std::string(value);
  return *this;
}

Message& Message::set_u64(const std::string& key, std::uint64_t value) {
  return set(key, std::to_string(value));
}

const std::string& Message::get(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) raise(Errc::kMissingField, "message field '" + key + "' missing");
  return it->second;
}

std::optional<std::string> Message::opt(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Message::get_u64(const std::string& key) const {
  auto v = parse_u64(get(key));
  if (!v) raise(Errc::kMalformedMessage, "field '" + key + "' is not an unsigned integer");
  return *v;
}

Bytes encode_message(const Message& m) {
  Bytes out;
  for (const auto& [k, v] : m.fields) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

Message decode_message(std::string_view body) {
  Message m;
  std::size_t start = 0;
  while (start < body.size()) {
    std::size_t nl = body.find('\n', start);
    if (nl == std::string_view::npos) raise(Errc::kMalformedMessage, "unterminated line");
    std::string_view line = body.substr(start, nl - start);
    start = nl + 1;
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      raise(Errc::kMalformedMessage, "line is not key=value");
    }
    std::string key(line.substr(0, eq));
    if (m.fields.count(key)) raise(Errc::kMalformedMessage, "duplicate field '" + key + "'");
    m.fields.emplace(std::move(key), std::string(line.substr(eq + 1)));
  }
  return m;
}

Message ok_response() {
  Message m;
  m.set("ok", "1");
  return m;
}

Message error_response(Errc code, std::string_view detail) {
  Message m;
  m.set("ok", "0");
  m.set("error", errc_name(code));
  m.set("message", detail);
  return m;
}

void ensure_ok(const Message& resp) {
  if (resp.get("ok") == "1") return;
  Errc code = errc_from_name(resp.get("error"));
  throw Error(code, resp.opt("message").value_or("remote error"));
}

void write_frame(int fd, std::string_view body) {
  if (body.size() > kMaxFrame) raise(Errc::kInvalidArgument, "frame too large");
  char hdr[4];
  std::uint32_t n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) hdr[i] = static_cast<char>((n >> (8 * i)) & 0xff);
  Bytes out;
  out.append(hdr, 4);
  out.append(body.data(), body.size());
  std::size_t off = 0;
  while (off < out.size()) {
    ssize_t w = ::write(fd, out.data() + off, out.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      raise(Errc::kIoError, "frame write failed: " + std::string(strerror(errno)));
    }
    off += static_cast<std::size_t>(w);
  }
}

namespace {

void read_exact(int fd, char* buf, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    ssize_t r = ::read(fd, buf + off, n - off);
    if (r < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) raise(Errc::kTimeout, "frame read timed out");
      raise(Errc::kIoError, "frame read failed: " + std::string(strerror(errno)));
    }
    if (r == 0) raise(Errc::kIoError, "connection closed mid-frame");
    off += static_cast<std::size_t>(r);
  }
}

}  // namespace

Bytes read_frame(int fd) {
  char hdr[4];
  read_exact(fd, hdr, 4);
  std::uint32_t n = 0;
  for (int i = 3; i >= 0; --i) n = (n << 8) | static_cast<std::uint8_t>(hdr[i]);
  if (n > kMaxFrame) raise(Errc::kMalformedMessage, "oversized frame");
  Bytes body(n, '\0');
  if (n > 0) read_exact(fd, body.data(), n);
  return body;
}

}  // namespace navhop
