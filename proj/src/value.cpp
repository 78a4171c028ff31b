#include "navhop/value.hpp"

#include <bit>

#include "navhop/errors.hpp"

namespace navhop {
namespace {

// One-byte type tags.
constexpr std::uint8_t kTagInt = 'i';
constexpr std::uint8_t kTagFloat = 'f';
constexpr std::uint8_t kTagStr = 's';
constexpr std::uint8_t kTagBlob = 'b';
constexpr std::uint8_t kTagFloatArray = 'a';
constexpr std::uint8_t kTagMap = 'm';

void write_value(ByteWriter& w, const Value& v) {
  const auto& var = v.raw();
  if (const auto* i = std::get_if<std::int64_t>(&var)) {
    w.u8(kTagInt);
    w.u64(static_cast<std::uint64_t>(*i));
  } else if (const auto* d = std::get_if<double>(&var)) {
    w.u8(kTagFloat);
    w.u64(std::bit_cast<std::uint64_t>(*d));
  } else if (const auto* s = std::get_if<std::string>(&var)) {
    w.u8(kTagStr);
    w.str32(*s);
  } else if (const auto* b = std::get_if<Blob>(&var)) {
    w.u8(kTagBlob);
    w.str32(b->data);
  } else if (const auto* a = std::get_if<FloatArray>(&var)) {
    w.u8(kTagFloatArray);
    w.u32(static_cast<std::uint32_t>(a->size()));
    for (double d2 : *a) w.u64(std::bit_cast<std::uint64_t>(d2));
  } else if (const auto* m = std::get_if<ValueMap>(&var)) {
    w.u8(kTagMap);
    w.u32(static_cast<std::uint32_t>(m->size()));
    for (const auto& [k, val] : *m) {
      w.str32(k);
      write_value(w, val);
    }
  }
}

Value read_value(ByteReader& r) {
  switch (r.u8()) {
    case kTagInt:
      return Value(static_cast<std::int64_t>(r.u64()));
    case kTagFloat:
      return Value(std::bit_cast<double>(r.u64()));
    case kTagStr:
      return Value(std::string(r.str32()));
    case kTagBlob:
      return Value::blob(Bytes(r.str32()));
    case kTagFloatArray: {
      std::uint32_t n = r.u32();
      FloatArray a;
      a.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) a.push_back(std::bit_cast<double>(r.u64()));
      return Value(std::move(a));
    }
    case kTagMap: {
      std::uint32_t n = r.u32();
      ValueMap m;
      std::string prev;
      for (std::uint32_t i = 0; i < n; ++i) {
        std::string key(r.str32());
        if (i > 0 && !(prev < key)) {
          raise(Errc::kMalformedMessage, "value map keys not strictly sorted");
        }
        prev = key;
        m.emplace(std::move(key), read_value(r));
      }
      return Value(std::move(m));
    }
    default:
      raise(Errc::kMalformedMessage, "unknown value tag");
  }
}

[[noreturn]] void type_error(const char* want) {
  raise(Errc::kStageFailure, std::string("variable holds a different type, wanted ") + want);
}

}  // namespace

std::int64_t Value::as_int() const {
  if (const auto* p = std::get_if<std::int64_t>(&v_)) return *p;
  type_error("int");
}

double Value::as_double() const {
  if (const auto* p = std::get_if<double>(&v_)) return *p;
  type_error("float");
}

const std::string& Value::as_str() const {
  if (const auto* p = std::get_if<std::string>(&v_)) return *p;
  type_error("string");
}

const Bytes& Value::as_blob() const {
  if (const auto* p = std::get_if<Blob>(&v_)) return p->data;
  type_error("bytes");
}

const FloatArray& Value::as_floats() const {
  if (const auto* p = std::get_if<FloatArray>(&v_)) return *p;
  type_error("float array");
}

const ValueMap& Value::as_map() const {
  if (const auto* p = std::get_if<ValueMap>(&v_)) return *p;
  type_error("map");
}

Bytes serialize_value(const Value& v) {
  ByteWriter w;
  write_value(w, v);
  return w.take();
}

Value deserialize_value(std::string_view data) {
  ByteReader r(data, Errc::kMalformedMessage);
  Value v = read_value(r);
  if (!r.done()) raise(Errc::kMalformedMessage, "trailing bytes after value");
  return v;
}

Bytes serialize_value_map(const ValueMap& m) {
  return serialize_value(Value(m));
}

ValueMap deserialize_value_map(std::string_view data) {
  return deserialize_value(data).as_map();
}

}  // namespace navhop
