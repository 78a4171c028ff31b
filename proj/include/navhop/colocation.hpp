#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "navhop/bytes.hpp"
#include "navhop/task.hpp"

namespace navhop {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDefaultMatchRadius = 0.05;  // radians

struct GeoSample {
  double lat = 0;  // degrees, [-90, 90]
  double lon = 0;  // degrees, (-180, 180]
  double value = 0;

  bool operator==(const GeoSample&) const = default;
};

// One instrument swath: "fine" stands in for the high-resolution imager,
// "coarse" for the sounder footprints it gets mapped onto.
struct InstrumentGranule {
  std::string granule_id;
  std::string instrument;  // "fine" or "coarse"
  std::vector<GeoSample> samples;

  bool operator==(const InstrumentGranule&) const = default;
};

struct EcefVector {
  double x = 0, y = 0, z = 0;  // kilometers
};

EcefVector to_ecef(double lat_deg, double lon_deg);

// atan2 of cross and dot magnitudes: stable for both tiny and near-pi angles.
double great_circle_angle(const EcefVector& u, const EcefVector& v);

struct MatchPair {
  std::uint32_t fine_index = 0;
  std::uint32_t coarse_index = 0;
  double angle = 0;  // radians

  bool operator==(const MatchPair&) const = default;
};

struct MatchProduct {
  std::vector<MatchPair> pairs;                 // ordered by fine index
  std::vector<std::uint32_t> unmatched_fine;    // ascending
  double radius = 0;
};

// Nearest coarse footprint per fine sample, kept when within radius; ties go
// to the lowest coarse index.
MatchProduct match(const std::vector<EcefVector>& fine, const std::vector<EcefVector>& coarse,
                   double radius);

// Deterministic synthetic swaths: same seed, same bytes, on every node.
std::pair<InstrumentGranule, InstrumentGranule> gen_granules(std::uint64_t seed,
                                                             std::uint32_t n_fine,
                                                             std::uint32_t n_coarse);

// Canonical text forms. Doubles print as the shortest round-trip decimal, so
// re-encoding a decoded blob reproduces it byte for byte.
Bytes encode_granule(const InstrumentGranule& g);
InstrumentGranule decode_granule(std::string_view text);
Bytes encode_match_product(const MatchProduct& p);

// Stationary pipeline: read, read, checkpoint, compute, compute, checkpoint,
// match, write, finish. App name "colocation".
StageMachine build_publish_variant();

// Migrating pipeline: hop, read, read, hop, compute, compute, match, hop,
// write+finish. Each node registers it with `other` pointing at its opposite
// number, so the machine always hops away from wherever it currently runs.
// App name "colocation_hop".
StageMachine build_hop_variant(const NodeDescriptor& other);

}  // namespace navhop
