#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcstream/codec.hpp"
#include "pcstream/predictor.hpp"

namespace pcstream {

struct ResidualRow {
  CompressionConfig config;
  double mean_ptp = 0.0;      // corpus average of per-scan mean_ptp
  double max_ptp = 0.0;       // largest per-point error anywhere in the corpus
  double l2_norm = 0.0;       // corpus average of per-scan l2_norm
  double measured_bps = 0.0;  // mean payload_bits * scan_hz
  // Per-scan worst case of each metric.
  double worst_mean_ptp = 0.0;
  double worst_max_ptp = 0.0;
  double worst_l2_norm = 0.0;
};

struct ResidualTable {
  std::string corpus_id;
  size_t scans = 0;
  int64_t n_points = 0;
  double scan_hz = 10.0;
  std::vector<ResidualRow> rows;  // grid order

  const ResidualRow* find(const CompressionConfig& config) const;
};

// One (scan, config) measurement, for callers that need per-scan detail.
struct ScanMeasurement {
  size_t scan = 0;
  CompressionConfig config;
  uint64_t payload_bits = 0;
  double mean_ptp = 0.0;
  double max_ptp = 0.0;
  double l2_norm = 0.0;
};

struct CalibrationOptions {
  double scan_hz = 10.0;
  CodecOptions codec{};
  std::string corpus_id = "unnamed";
  std::vector<ScanMeasurement>* per_scan = nullptr;  // optional sink
};

// Encode -> decode -> residual for every grid entry over the corpus. Throws
// ConfigError for an empty corpus or mixed cardinalities; codec errors propagate.
ResidualTable calibrate(std::span<const PointCloudScan> corpus, const ConfigGrid& grid,
                        const CalibrationOptions& options = {});

enum class Feasibility { kCorpusAverage, kPerScanWorst };

struct RateBounds {
  double r_min = 0.0;
  double r_max = 0.0;
  ConfigFloor floor_config;
  double epsilon = 0.0;
  ResidualMetric metric = ResidualMetric::kMeanPtp;
  Feasibility mode = Feasibility::kCorpusAverage;
  CompressionConfig r_min_config;  // the row realizing r_min
};

double row_metric(const ResidualRow& row, ResidualMetric metric, Feasibility mode);

// r_min = min measured_bps over rows whose metric <= epsilon; the floor is the
// smallest feasible q plus the feasible-row mask. Throws InfeasibleError (with
// the smallest achievable metric) when no row qualifies, ConfigError for
// epsilon <= 0 or r_min > r_max.
RateBounds min_rate(const ResidualTable& table, double epsilon,
                    ResidualMetric metric = ResidualMetric::kMeanPtp, double r_max = 10e6,
                    Feasibility mode = Feasibility::kCorpusAverage);

ResidualMetric parse_metric(const std::string& name);
std::string to_string(ResidualMetric metric);

// CSV: a "# corpus ..." comment line, then
// q,c,mean_ptp,max_ptp,measured_bps,l2_norm,worst_mean_ptp,worst_max_ptp,worst_l2_norm
void write_table_csv(const std::string& path, const ResidualTable& table);
ResidualTable read_table_csv(const std::string& path);

}  // namespace pcstream
