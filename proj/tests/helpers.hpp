#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "pcstream/codec.hpp"
#include "pcstream/predictor.hpp"
#include "pcstream/residual_opt.hpp"
#include "pcstream/scan_source.hpp"

namespace testutil {

using namespace pcstream;

inline PointCloudScan synthetic_scan(uint64_t seed, double t = 0.0, Environment env = Environment::kUrban) {
  ScanSourceConfig cfg;
  cfg.seed = seed;
  cfg.environment = env;
  return SyntheticScanSource(cfg).generate(t);
}

// Small sensor for tests that loop a lot.
inline PointCloudScan small_scan(uint64_t seed, double t = 0.0, int rings = 8, int columns = 128) {
  ScanSourceConfig cfg;
  cfg.seed = seed;
  cfg.sensor.rings = rings;
  cfg.sensor.columns = columns;
  return SyntheticScanSource(cfg).generate(t);
}

inline CodecOptions small_options(int columns = 128) {
  CodecOptions o;
  o.row_stride = static_cast<uint32_t>(columns);
  return o;
}

inline PointCloudScan uniform_scan(uint64_t seed, size_t n, double half = 49.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-half, half);
  PointCloudScan s;
  s.points.resize(n);
  for (auto& p : s.points) p = {u(rng), u(rng), u(rng)};
  return s;
}

inline PointCloudScan constant_scan(size_t n, Point3 p = {1.234, -5.678, 0.375}) {
  PointCloudScan s;
  s.points.assign(n, p);
  return s;
}

// Hand-built table with rates rising in q and falling in c, distortion
// falling in q. Values are exact so expected answers can be derived by hand.
inline ResidualTable toy_table() {
  ResidualTable t;
  t.corpus_id = "toy";
  t.scans = 1;
  t.n_points = 32768;
  for (const auto& cfg : ConfigGrid::full().entries) {
    ResidualRow r;
    r.config = cfg;
    r.mean_ptp = 100.0 / std::ldexp(1.0, cfg.q) * (1.0 + 0.01 * cfg.c);
    r.max_ptp = 3.0 * r.mean_ptp;
    r.l2_norm = 50.0 * r.mean_ptp;
    r.measured_bps = 1e5 * cfg.q * cfg.q / (1.0 + 0.05 * cfg.c);
    r.worst_mean_ptp = 1.5 * r.mean_ptp;
    r.worst_max_ptp = 1.5 * r.max_ptp;
    r.worst_l2_norm = 1.5 * r.l2_norm;
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace testutil
