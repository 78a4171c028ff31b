#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "navhop/errors.hpp"

namespace navhop {

// Byte strings are carried as std::string throughout; the alias marks intent.
using Bytes = std::string;

// Little-endian, fixed-width primitive encoding used by the checkpoint image
// container and the task-state serialization.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void raw(std::string_view data) { buf_.append(data.data(), data.size()); }

  // u32 length prefix followed by the bytes.
  void str32(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

  const Bytes& bytes() const { return buf_; }
  Bytes take() { return std::move(buf_); }

 private:
  Bytes buf_;
};

class ByteReader {
 public:
  // underflow_errc is raised when a read runs past the end of the buffer.
  explicit ByteReader(std::string_view data, Errc underflow_errc = Errc::kIoError)
      : data_(data), errc_(underflow_errc) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

  std::uint32_t u32() {
    std::string_view b = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
    return v;
  }

  std::uint64_t u64() {
    std::string_view b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(b[i]);
    return v;
  }

  std::string_view raw(std::size_t n) { return take(n); }

  std::string_view str32() { return take(u32()); }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view take(std::size_t n) {
    if (n > remaining()) raise(errc_, "short read");
    std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  Errc errc_;
};

std::string to_hex(std::string_view data);

}  // namespace navhop
