#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <thread>

namespace navhop {

// Injectable wall clock, unix seconds. Tests pin it to freeze timestamps in
// encoded artifacts.
using Clock = std::function<std::uint64_t()>;

inline std::uint64_t wall_seconds() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

inline std::uint64_t wall_millis() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

inline Clock system_clock_seconds() {
  return [] { return wall_seconds(); };
}

inline Clock fixed_clock(std::uint64_t t) {
  return [t] { return t; };
}

inline void sleep_ms(int ms) {
  std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

}  // namespace navhop
