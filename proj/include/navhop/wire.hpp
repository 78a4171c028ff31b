#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "navhop/bytes.hpp"
#include "navhop/errors.hpp"

namespace navhop {

// One request or response: a flat key/value document. Encoded as UTF-8
// `key=value` lines with keys in sorted order; values must not contain
// newlines. Requests carry a `service` field; responses carry `ok=1` or
// `ok=0` plus `error`/`message`. See PROTOCOL.md.
struct Message {
  std::map<std::string, std::string> fields;

  Message& set(const std::string& key, std::string_view value);
  Message& set_u64(const std::string& key, std::uint64_t value);

  bool has(const std::string& key) const { return fields.count(key) > 0; }
  const std::string& get(const std::string& key) const;        // throws MissingField
  std::optional<std::string> opt(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;

  bool operator==(const Message&) const = default;
};

Bytes encode_message(const Message& m);
Message decode_message(std::string_view body);

Message ok_response();
Message error_response(Errc code, std::string_view detail);

// Throws the carried error if the response is not ok.
void ensure_ok(const Message& resp);

// Framing: u32 little-endian body length, then the body.
inline constexpr std::size_t kMaxFrame = 64u << 20;

void write_frame(int fd, std::string_view body);
Bytes read_frame(int fd);

}  // namespace navhop
