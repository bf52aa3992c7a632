#pragma once

#include <cstdint>
#include <string>

#include "pcstream/codec.hpp"

namespace pcstream {

// Procedural scene family. Calibration and evaluation both default to kUrban
// but draw from disjoint seeds.
enum class Environment { kTunnel, kUrban };

Environment parse_environment(const std::string& name);
std::string to_string(Environment env);

// Spinning-LiDAR sensor profile (defaults: 32 rings x 1024 columns, 90 deg FOV).
struct SensorProfile {
  int rings = 32;
  int columns = 1024;
  double min_elevation_deg = -45.0;
  double max_elevation_deg = 45.0;
  double max_range = 45.0;     // metres; keeps every return inside the +-50 m box
  double mount_height = 1.5;   // metres above ground
  double range_noise = 0.01;   // 1-sigma, metres
  double dropout = 0.01;       // probability a return is missing

  size_t points() const { return static_cast<size_t>(rings) * static_cast<size_t>(columns); }
};

struct ScanSourceConfig {
  uint64_t seed = 1;
  Environment environment = Environment::kUrban;
  double velocity = 12.0;  // m/s along +x
  double scan_hz = 10.0;
  SensorProfile sensor{};
};

// Deterministic generator: the scan at time t depends only on (config, t).
// Points are ring-major (ring * columns + column), in the sensor frame.
class SyntheticScanSource {
 public:
  explicit SyntheticScanSource(ScanSourceConfig config);

  PointCloudScan generate(double t) const;
  PointCloudScan generate(double t, uint32_t scan_id) const;

  const ScanSourceConfig& config() const { return config_; }

 private:
  ScanSourceConfig config_;
};

// Convenience wrapper matching the generator-state style used by the pipeline.
inline PointCloudScan generate_scan(const SyntheticScanSource& source, double t) {
  return source.generate(t);
}

}  // namespace pcstream
