#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace navhop {

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, char sep);
std::string trim(std::string_view s);

// Order used for job ids: runs of digits compare by numeric value, everything
// else byte-wise. "2" < "10", "job2" < "job10", "a" < "b".
bool natural_less(std::string_view a, std::string_view b);

struct NaturalLess {
  bool operator()(std::string_view a, std::string_view b) const { return natural_less(a, b); }
};

std::optional<std::uint64_t> parse_u64(std::string_view s);
std::optional<double> parse_double(std::string_view s);

// Shortest decimal form that round-trips the exact double value.
std::string format_double(double v);

}  // namespace navhop
