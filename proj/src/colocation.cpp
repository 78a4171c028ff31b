#include "navhop/colocation.hpp"

#include <cmath>
#include <random>

#include "navhop/runtime.hpp"
#include "navhop/strings.hpp"
#include "navhop/wire.hpp"

namespace navhop {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double deg2rad(double d) { return d * (kPi / 180.0); }

}  // namespace

EcefVector to_ecef(double lat_deg, double lon_deg) {
  double phi = deg2rad(lat_deg);
  double lam = deg2rad(lon_deg);
  double c = std::cos(phi);
  return EcefVector{kEarthRadiusKm * c * std::cos(lam), kEarthRadiusKm * c * std::sin(lam),
                    kEarthRadiusKm * std::sin(phi)};
}

double great_circle_angle(const EcefVector& u, const EcefVector& v) {
  double cx = u.y * v.z - u.z * v.y;
  double cy = u.z * v.x - u.x * v.z;
  double cz = u.x * v.y - u.y * v.x;
  double cross = std::sqrt(cx * cx + cy * cy + cz * cz);
  double dot = u.x * v.x + u.y * v.y + u.z * v.z;
  return std::atan2(cross, dot);
}

MatchProduct match(const std::vector<EcefVector>& fine, const std::vector<EcefVector>& coarse,
                   double radius) {
  if (radius <= 0) raise(Errc::kInvalidArgument, "matching radius must be positive");
  MatchProduct out;
  out.radius = radius;
  for (std::uint32_t i = 0; i < fine.size(); ++i) {
    std::uint32_t best_j = 0;
    double best_angle = 0;
    bool have = false;
    for (std::uint32_t j = 0; j < coarse.size(); ++j) {
      double a = great_circle_angle(fine[i], coarse[j]);
      // Strict less keeps the lowest index on exact ties.
      if (!have || a < best_angle) {
        have = true;
        best_angle = a;
        best_j = j;
      }
    }
    if (have && best_angle <= radius) {
      out.pairs.push_back(MatchPair{i, best_j, best_angle});
    } else {
      out.unmatched_fine.push_back(i);
    }
  }
  return out;
}

std::pair<InstrumentGranule, InstrumentGranule> gen_granules(std::uint64_t seed,
                                                             std::uint32_t n_fine,
                                                             std::uint32_t n_coarse) {
  if (n_fine == 0 || n_coarse == 0) {
    raise(Errc::kInvalidArgument, "granule sample counts must be at least 1");
  }
  std::mt19937_64 rng(seed);
  // 53-bit mantissa draw; avoids distribution implementations that differ
  // across standard libraries.
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto fill = [&](InstrumentGranule& g, std::uint32_t n) {
    g.samples.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      double u = uniform();
      double lat = std::asin(2.0 * u - 1.0) * (180.0 / kPi);  // uniform on the sphere
      double lon = 180.0 - 360.0 * uniform();                 // (-180, 180]
      g.samples.push_back(GeoSample{lat, lon, uniform()});
    }
  };
  InstrumentGranule fine{"fine-" + std::to_string(seed), "fine", {}};
  InstrumentGranule coarse{"coarse-" + std::to_string(seed), "coarse", {}};
  fill(fine, n_fine);
  fill(coarse, n_coarse);
  return {std::move(fine), std::move(coarse)};
}

Bytes encode_granule(const InstrumentGranule& g) {
  std::string out =
      "granule " + g.granule_id + " " + g.instrument + " " + std::to_string(g.samples.size()) + "\n";
  for (const auto& s : g.samples) {
    out += format_double(s.lat) + " " + format_double(s.lon) + " " + format_double(s.value) + "\n";
  }
  return out;
}

InstrumentGranule decode_granule(std::string_view text) {
  auto lines = split(text, '\n');
  if (lines.empty() || !lines.back().empty()) {
    raise(Errc::kMalformedMessage, "granule text must end with a newline");
  }
  lines.pop_back();
  if (lines.empty()) raise(Errc::kMalformedMessage, "granule text is empty");
  auto head = split(lines[0], ' ');
  if (head.size() != 4 || head[0] != "granule") {
    raise(Errc::kMalformedMessage, "bad granule header '" + lines[0] + "'");
  }
  InstrumentGranule g;
  g.granule_id = head[1];
  g.instrument = head[2];
  if (g.instrument != "fine" && g.instrument != "coarse") {
    raise(Errc::kMalformedMessage, "instrument must be fine or coarse, got '" + g.instrument + "'");
  }
  auto n = parse_u64(head[3]);
  if (!n || *n == 0) raise(Errc::kMalformedMessage, "bad sample count '" + head[3] + "'");
  if (lines.size() - 1 != *n) {
    raise(Errc::kMalformedMessage, "granule header promises " + head[3] + " samples, has " +
                                       std::to_string(lines.size() - 1));
  }
  g.samples.reserve(*n);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto parts = split(lines[i], ' ');
    if (parts.size() != 3) raise(Errc::kMalformedMessage, "bad sample line '" + lines[i] + "'");
    auto lat = parse_double(parts[0]);
    auto lon = parse_double(parts[1]);
    auto value = parse_double(parts[2]);
    if (!lat || !lon || !value) raise(Errc::kMalformedMessage, "bad number in '" + lines[i] + "'");
    if (*lat < -90.0 || *lat > 90.0 || *lon <= -180.0 || *lon > 180.0) {
      raise(Errc::kInvalidArgument, "coordinates out of range in '" + lines[i] + "'");
    }
    g.samples.push_back(GeoSample{*lat, *lon, *value});
  }
  return g;
}

Bytes encode_match_product(const MatchProduct& p) {
  std::string out = "match_product " + std::to_string(p.pairs.size()) + " " +
                    std::to_string(p.unmatched_fine.size()) + " " + format_double(p.radius) + "\n";
  for (const auto& pr : p.pairs) {
    out += "pair " + std::to_string(pr.fine_index) + " " + std::to_string(pr.coarse_index) + " " +
           format_double(pr.angle) + "\n";
  }
  for (auto idx : p.unmatched_fine) {
    out += "unmatched " + std::to_string(idx) + "\n";
  }
  return out;
}

namespace {

// Stage bodies shared by both variants. Variables live in the task's map so
// every intermediate survives a checkpoint.

double read_params_radius(StageContext& ctx) {
  Bytes text;
  try {
    text = ctx.store().get(ctx.input("params.txt"));
  } catch (const Error& e) {
    if (e.code() == Errc::kNotFound) return kDefaultMatchRadius;
    throw;
  }
  Message params = decode_message(text);
  auto radius = parse_double(params.get("radius"));
  if (!radius || *radius <= 0) {
    raise(Errc::kInvalidArgument, "params radius must be a positive number");
  }
  return *radius;
}

void load_granule(StageContext& ctx, const std::string& file, const std::string& instrument,
                  const std::string& prefix) {
  InstrumentGranule g = decode_granule(ctx.store().get(ctx.input(file)));
  if (g.instrument != instrument) {
    raise(Errc::kInvalidArgument, file + " holds a " + g.instrument + " granule, expected " +
                                      instrument);
  }
  FloatArray lat, lon, val;
  lat.reserve(g.samples.size());
  lon.reserve(g.samples.size());
  val.reserve(g.samples.size());
  for (const auto& s : g.samples) {
    lat.push_back(s.lat);
    lon.push_back(s.lon);
    val.push_back(s.value);
  }
  ctx.vars()[prefix + "_id"] = g.granule_id;
  ctx.vars()[prefix + "_lat"] = std::move(lat);
  ctx.vars()[prefix + "_lon"] = std::move(lon);
  ctx.vars()[prefix + "_val"] = std::move(val);
}

void stage_read_fine(StageContext& ctx) {
  ctx.vars()["radius"] = read_params_radius(ctx);
  load_granule(ctx, "fine.txt", "fine", "fine");
}

void stage_read_coarse(StageContext& ctx) { load_granule(ctx, "coarse.txt", "coarse", "coarse"); }

void compute_ecef(StageContext& ctx, const std::string& prefix) {
  const FloatArray& lat = ctx.vars().at(prefix + "_lat").as_floats();
  const FloatArray& lon = ctx.vars().at(prefix + "_lon").as_floats();
  FloatArray x, y, z;
  x.reserve(lat.size());
  y.reserve(lat.size());
  z.reserve(lat.size());
  for (std::size_t i = 0; i < lat.size(); ++i) {
    if (i == lat.size() / 2) ctx.emit_mid();
    EcefVector v = to_ecef(lat[i], lon[i]);
    x.push_back(v.x);
    y.push_back(v.y);
    z.push_back(v.z);
  }
  ctx.vars()[prefix + "_x"] = std::move(x);
  ctx.vars()[prefix + "_y"] = std::move(y);
  ctx.vars()[prefix + "_z"] = std::move(z);
}

void stage_compute_los(StageContext& ctx) { compute_ecef(ctx, "coarse"); }

void stage_compute_pos(StageContext& ctx) { compute_ecef(ctx, "fine"); }

std::vector<EcefVector> vectors_from_vars(StageContext& ctx, const std::string& prefix) {
  const FloatArray& x = ctx.vars().at(prefix + "_x").as_floats();
  const FloatArray& y = ctx.vars().at(prefix + "_y").as_floats();
  const FloatArray& z = ctx.vars().at(prefix + "_z").as_floats();
  std::vector<EcefVector> out;
  out.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.push_back(EcefVector{x[i], y[i], z[i]});
  return out;
}

void stage_match(StageContext& ctx) {
  std::vector<EcefVector> fine = vectors_from_vars(ctx, "fine");
  std::vector<EcefVector> coarse = vectors_from_vars(ctx, "coarse");
  ctx.emit_mid();
  MatchProduct product = match(fine, coarse, ctx.vars().at("radius").as_double());
  ctx.vars()["product_text"] = Value::blob(encode_match_product(product));
}

void stage_write_product(StageContext& ctx) {
  BlobKey key = ctx.product("match.txt");
  ctx.store().put_atomic(key, ctx.vars().at("product_text").as_blob());
  ctx.vars()["product_key"] = key.full();
}

}  // namespace

StageMachine build_publish_variant() {
  StageMachine m;
  m.app_name = "colocation";
  m.stages = {
      {"read_fine", stage_read_fine},
      {"read_coarse", stage_read_coarse},
      {"ckpt_publish", [](StageContext& ctx) { ctx.publish_ckpt(); }},
      {"compute_los", stage_compute_los},
      {"compute_pos", stage_compute_pos},
      {"ckpt_publish", [](StageContext& ctx) { ctx.publish_ckpt(); }},
      {"match", stage_match},
      {"write_product", stage_write_product},
      {"finish_publish", [](StageContext& ctx) { ctx.publish_finished(); }},
  };
  return m;
}

StageMachine build_hop_variant(const NodeDescriptor& other) {
  auto hop_stage = [other](StageContext& ctx) { ctx.hop(other); };
  StageMachine m;
  m.app_name = "colocation_hop";
  m.stages = {
      {"hop_to_other", hop_stage},
      {"read_fine", stage_read_fine},
      {"read_coarse", stage_read_coarse},
      {"hop_to_other", hop_stage},
      {"compute_los", stage_compute_los},
      {"compute_pos", stage_compute_pos},
      {"match", stage_match},
      {"hop_to_other", hop_stage},
      {"write_product",
       [](StageContext& ctx) {
         stage_write_product(ctx);
         ctx.publish_finished();
       }},
  };
  return m;
}

}  // namespace navhop
