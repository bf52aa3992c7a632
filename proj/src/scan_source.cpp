#include "pcstream/scan_source.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "pcstream/error.hpp"

namespace pcstream {

Environment parse_environment(const std::string& name) {
  if (name == "tunnel") return Environment::kTunnel;
  if (name == "urban") return Environment::kUrban;
  throw ConfigError("unknown environment '" + name + "' (expected tunnel or urban)");
}

std::string to_string(Environment env) { return env == Environment::kTunnel ? "tunnel" : "urban"; }

namespace {

constexpr double kCellLength = 10.0;  // scene is generated in 10 m slices along x
constexpr double kInf = std::numeric_limits<double>::infinity();

uint64_t mix(uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Small, fast engine for the per-return noise.
struct SplitMix64 {
  using result_type = uint64_t;
  uint64_t state;
  static constexpr uint64_t min() { return 0; }
  static constexpr uint64_t max() { return ~uint64_t{0}; }
  uint64_t operator()() {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

// Vertical prism: axis-aligned box or cylinder footprint, from ground to top.
struct Prism {
  bool cylinder = false;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // box footprint
  double cx = 0, cy = 0, r = 0;           // cylinder footprint
  double top = 0;                         // height above ground
};

struct Scene {
  std::vector<Prism> prisms;
  double ceiling = kInf;  // height above ground, tunnel only
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

void add_box(Scene& s, double x0, double y0, double x1, double y1, double top) {
  Prism p;
  p.x0 = std::min(x0, x1);
  p.x1 = std::max(x0, x1);
  p.y0 = std::min(y0, y1);
  p.y1 = std::max(y0, y1);
  p.top = top;
  s.prisms.push_back(p);
}

void add_cylinder(Scene& s, double cx, double cy, double r, double top) {
  Prism p;
  p.cylinder = true;
  p.cx = cx;
  p.cy = cy;
  p.r = r;
  p.top = top;
  s.prisms.push_back(p);
}

void build_tunnel_slice(Scene& s, uint64_t seed, int64_t k) {
  std::mt19937_64 rng(mix(seed ^ mix(static_cast<uint64_t>(k) * 2 + 1)));
  const double x0 = static_cast<double>(k) * kCellLength;
  const double x1 = x0 + kCellLength;
  // Walls follow a slowly varying half-width; each slice is a flat wall segment.
  const double half = 4.0 + 1.0 * std::sin(0.013 * x0 + static_cast<double>(seed % 7));
  add_box(s, x0, half, x1, half + 1.0, 50.0);
  add_box(s, x0, -half - 1.0, x1, -half, 50.0);
  const int n_alcove = static_cast<int>(rng() % 3);
  for (int i = 0; i < n_alcove; ++i) {
    const double ax = uniform(rng, x0, x1 - 2.0);
    const double depth = uniform(rng, 0.3, 1.2);
    const double side = (rng() & 1) ? 1.0 : -1.0;
    add_box(s, ax, side * (half - depth), ax + uniform(rng, 1.0, 2.5), side * half,
            uniform(rng, 1.0, 3.5));
  }
  if (rng() % 2 == 0) {
    add_cylinder(s, uniform(rng, x0, x1), uniform(rng, -half + 1.0, half - 1.0), 0.25,
                 uniform(rng, 0.8, 2.0));
  }
}

void build_urban_slice(Scene& s, uint64_t seed, int64_t k) {
  std::mt19937_64 rng(mix(seed ^ mix(static_cast<uint64_t>(k) * 2)));
  const double x0 = static_cast<double>(k) * kCellLength;
  // Facades on both sides with random setbacks, heights and gaps.
  for (double side : {1.0, -1.0}) {
    if (rng() % 5 == 0) continue;  // cross street / gap
    const double setback = uniform(rng, 8.0, 16.0);
    const double bx0 = x0 + uniform(rng, 0.0, 2.0);
    const double bx1 = x0 + kCellLength - uniform(rng, 0.0, 2.0);
    add_box(s, bx0, side * setback, bx1, side * (setback + 10.0), uniform(rng, 6.0, 30.0));
  }
  // Parked cars.
  const int n_cars = static_cast<int>(rng() % 3);
  for (int i = 0; i < n_cars; ++i) {
    const double side = (rng() & 1) ? 1.0 : -1.0;
    const double cx = x0 + uniform(rng, 0.0, kCellLength - 4.5);
    const double lateral = side * uniform(rng, 3.5, 5.0);
    add_box(s, cx, lateral - 0.9, cx + 4.5, lateral + 0.9, uniform(rng, 1.3, 1.8));
  }
  // Poles and tree trunks.
  const int n_poles = static_cast<int>(rng() % 3);
  for (int i = 0; i < n_poles; ++i) {
    const double side = (rng() & 1) ? 1.0 : -1.0;
    add_cylinder(s, x0 + uniform(rng, 0.0, kCellLength), side * uniform(rng, 6.0, 7.5),
                 uniform(rng, 0.1, 0.35), uniform(rng, 3.0, 8.0));
  }
}

Scene build_scene(const ScanSourceConfig& cfg, double sx) {
  Scene s;
  if (cfg.environment == Environment::kTunnel) s.ceiling = 5.0;
  const double reach = cfg.sensor.max_range + kCellLength;
  const auto k0 = static_cast<int64_t>(std::floor((sx - reach) / kCellLength));
  const auto k1 = static_cast<int64_t>(std::floor((sx + reach) / kCellLength));
  for (int64_t k = k0; k <= k1; ++k) {
    if (cfg.environment == Environment::kTunnel) {
      build_tunnel_slice(s, cfg.seed, k);
    } else {
      build_urban_slice(s, cfg.seed, k);
    }
  }
  return s;
}

// Entry/exit distances of a horizontal ray against a prism footprint.
bool footprint_hit(const Prism& p, double ox, double oy, double dx, double dy, double& t_in,
                   double& t_out) {
  if (p.cylinder) {
    const double fx = ox - p.cx;
    const double fy = oy - p.cy;
    const double b = fx * dx + fy * dy;
    const double c = fx * fx + fy * fy - p.r * p.r;
    const double disc = b * b - c;
    if (disc < 0) return false;
    const double sq = std::sqrt(disc);
    t_in = -b - sq;
    t_out = -b + sq;
  } else {
    double lo = -kInf;
    double hi = kInf;
    const double o[2] = {ox, oy};
    const double d[2] = {dx, dy};
    const double mn[2] = {p.x0, p.y0};
    const double mx[2] = {p.x1, p.y1};
    for (int a = 0; a < 2; ++a) {
      if (std::abs(d[a]) < 1e-12) {
        if (o[a] < mn[a] || o[a] > mx[a]) return false;
        continue;
      }
      double t0 = (mn[a] - o[a]) / d[a];
      double t1 = (mx[a] - o[a]) / d[a];
      if (t0 > t1) std::swap(t0, t1);
      lo = std::max(lo, t0);
      hi = std::min(hi, t1);
    }
    if (lo > hi) return false;
    t_in = lo;
    t_out = hi;
  }
  return t_out > 0.0 && t_in > 0.0;
}

struct Crossing {
  double t_in;
  double t_out;
  double top;
};

}  // namespace

SyntheticScanSource::SyntheticScanSource(ScanSourceConfig config) : config_(config) {
  const auto& s = config_.sensor;
  if (s.rings <= 0 || s.columns <= 0 || !(s.max_range > 0) || !(config_.scan_hz > 0)) {
    throw ConfigError("invalid sensor profile");
  }
}

PointCloudScan SyntheticScanSource::generate(double t) const {
  return generate(t, static_cast<uint32_t>(std::llround(t * config_.scan_hz)));
}

PointCloudScan SyntheticScanSource::generate(double t, uint32_t scan_id) const {
  const auto& sensor = config_.sensor;
  const double sx = config_.velocity * t;
  const double sy = 0.8 * std::sin(0.1 * t);
  const double yaw = 0.05 * std::sin(0.2 * t);
  const double h = sensor.mount_height;
  const Scene scene = build_scene(config_, sx);

  SplitMix64 noise_rng{mix(config_.seed * 0x2545F4914F6CDD1Dull ^
                                static_cast<uint64_t>(std::llround(t * 1e6)))};
  std::normal_distribution<double> noise(0.0, sensor.range_noise);

  const size_t n = sensor.points();
  PointCloudScan scan;
  scan.scan_id = scan_id;
  scan.timestamp = t;
  scan.points.resize(n);
  std::vector<uint8_t> valid(n, 0);

  std::vector<double> tan_el(static_cast<size_t>(sensor.rings));
  std::vector<double> cos_el(static_cast<size_t>(sensor.rings));
  std::vector<double> sin_el(static_cast<size_t>(sensor.rings));
  for (int r = 0; r < sensor.rings; ++r) {
    const double frac = sensor.rings == 1 ? 0.5 : double(r) / double(sensor.rings - 1);
    const double el = (sensor.min_elevation_deg +
                       frac * (sensor.max_elevation_deg - sensor.min_elevation_deg)) *
                      std::numbers::pi / 180.0;
    tan_el[r] = std::tan(el);
    cos_el[r] = std::cos(el);
    sin_el[r] = std::sin(el);
  }

  std::vector<Crossing> crossings;
  crossings.reserve(scene.prisms.size());
  const double max_horizontal = sensor.max_range;
  for (int col = 0; col < sensor.columns; ++col) {
    const double az = 2.0 * std::numbers::pi * double(col) / double(sensor.columns);
    const double dx = std::cos(az + yaw);
    const double dy = std::sin(az + yaw);
    const double cos_az = std::cos(az);
    const double sin_az = std::sin(az);
    crossings.clear();
    for (const auto& p : scene.prisms) {
      double t_in = 0;
      double t_out = 0;
      if (footprint_hit(p, sx, sy, dx, dy, t_in, t_out) && t_in < max_horizontal) {
        crossings.push_back({t_in, t_out, p.top});
      }
    }
    std::sort(crossings.begin(), crossings.end(),
              [](const Crossing& a, const Crossing& b) { return a.t_in < b.t_in; });

    for (int r = 0; r < sensor.rings; ++r) {
      const double te = tan_el[r];
      // Horizontal distance of the first surface hit.
      double best = kInf;
      if (te < 0) best = h / -te;
      if (te > 0 && std::isfinite(scene.ceiling)) best = std::min(best, (scene.ceiling - h) / te);
      for (const auto& c : crossings) {
        if (c.t_in >= best) break;
        const double z_in = h + c.t_in * te;  // height above ground at the footprint edge
        if (z_in >= 0.0 && z_in <= c.top) {
          best = c.t_in;
          break;
        }
        if (te < 0 && z_in > c.top) {
          const double t_top = (h - c.top) / -te;
          if (t_top <= c.t_out) {
            best = t_top;
            break;
          }
        }
      }
      const size_t idx = static_cast<size_t>(r) * static_cast<size_t>(sensor.columns) +
                         static_cast<size_t>(col);
      const double range = best / cos_el[r] + noise(noise_rng);
      const double drop = static_cast<double>(noise_rng() >> 11) * 0x1.0p-53;
      if (!std::isfinite(best) || range > sensor.max_range || range <= 0.1 ||
          drop < sensor.dropout) {
        continue;
      }
      const double horiz = range * cos_el[r];
      scan.points[idx] = Point3{horiz * cos_az, horiz * sin_az, range * sin_el[r]};
      valid[idx] = 1;
    }
  }
  fill_missing_returns(scan, valid);
  return scan;
}

}  // namespace pcstream
