#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "navhop/bytes.hpp"

namespace navhop {

class Value;

// Keys sort lexicographically inside std::map, which makes the encoding
// canonical: serialize(deserialize(b)) == b for every emitted serialization.
using ValueMap = std::map<std::string, Value>;

// Byte-string variable, kept distinct from text so the two encode differently.
struct Blob {
  Bytes data;
  bool operator==(const Blob&) const = default;
};

using FloatArray = std::vector<double>;

// The closed set of variable types a task may carry across a checkpoint.
class Value {
 public:
  using Variant = std::variant<std::int64_t, double, std::string, Blob, FloatArray, ValueMap>;

  Value() : v_(std::int64_t{0}) {}
  Value(std::int64_t v) : v_(v) {}
  Value(int v) : v_(static_cast<std::int64_t>(v)) {}
  Value(double v) : v_(v) {}
  Value(std::string v) : v_(std::move(v)) {}
  Value(const char* v) : v_(std::string(v)) {}
  Value(Blob v) : v_(std::move(v)) {}
  Value(FloatArray v) : v_(std::move(v)) {}
  Value(ValueMap v) : v_(std::move(v)) {}

  static Value blob(Bytes data) { return Value(Blob{std::move(data)}); }

  std::int64_t as_int() const;
  double as_double() const;
  const std::string& as_str() const;
  const Bytes& as_blob() const;
  const FloatArray& as_floats() const;
  const ValueMap& as_map() const;

  const Variant& raw() const { return v_; }

  bool operator==(const Value&) const = default;

 private:
  Variant v_;
};

Bytes serialize_value(const Value& v);
Value deserialize_value(std::string_view data);

Bytes serialize_value_map(const ValueMap& m);
ValueMap deserialize_value_map(std::string_view data);

}  // namespace navhop
