#pragma once

// Reference implementation for the nearest-footprint search, written against
// the haversine form on raw lat/lon so it shares no code or intermediate
// representation with the library's cartesian version.

#include <cmath>
#include <cstdint>
#include <vector>

namespace navhop::test {

struct OraclePair {
  std::uint32_t fine_index;
  std::uint32_t coarse_index;
  double angle;
};

struct OracleResult {
  std::vector<OraclePair> pairs;
  std::vector<std::uint32_t> unmatched;
};

inline double haversine_angle(double lat1_deg, double lon1_deg, double lat2_deg,
                              double lon2_deg) {
  const long double rad = 3.14159265358979323846264338327950288L / 180.0L;
  long double phi1 = static_cast<long double>(lat1_deg) * rad;
  long double phi2 = static_cast<long double>(lat2_deg) * rad;
  long double dphi = phi2 - phi1;
  long double dlam = (static_cast<long double>(lon2_deg) - lon1_deg) * rad;
  long double s1 = std::sin(dphi / 2);
  long double s2 = std::sin(dlam / 2);
  long double a = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  if (a < 0) a = 0;
  if (a > 1) a = 1;
  return static_cast<double>(2 * std::atan2(std::sqrt(a), std::sqrt(1 - a)));
}

// Brute force over every (fine, coarse) combination; ties keep the lowest
// coarse index, candidates survive only within radius.
inline OracleResult oracle_match(const std::vector<double>& fine_lat,
                                 const std::vector<double>& fine_lon,
                                 const std::vector<double>& coarse_lat,
                                 const std::vector<double>& coarse_lon, double radius) {
  OracleResult out;
  for (std::uint32_t i = 0; i < fine_lat.size(); ++i) {
    bool have = false;
    std::uint32_t best_j = 0;
    double best = 0;
    for (std::uint32_t j = 0; j < coarse_lat.size(); ++j) {
      double a = haversine_angle(fine_lat[i], fine_lon[i], coarse_lat[j], coarse_lon[j]);
      if (!have || a < best) {
        have = true;
        best = a;
        best_j = j;
      }
    }
    if (have && best <= radius) {
      out.pairs.push_back(OraclePair{i, best_j, best});
    } else {
      out.unmatched.push_back(i);
    }
  }
  return out;
}

}  // namespace navhop::test
