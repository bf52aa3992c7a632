#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcstream/codec.hpp"
#include "pcstream/scan_source.hpp"

namespace pcstream {

inline constexpr int kNumFeatures = 9;
inline constexpr int kNumQ = kMaxQuantBits - kMinQuantBits + 1;
inline constexpr int kNumC = kMaxCompressionLevel - kMinCompressionLevel + 1;
inline constexpr int kGridSize = kNumQ * kNumC;

using Features = std::array<double, kNumFeatures>;

// Names in featurize() order.
extern const std::array<const char*, kNumFeatures> kFeatureNames;

// (q, c, n, q^2, c^2, n^2, qc, qn, cn), unscaled.
Features featurize(int q, int c, int64_t n);

struct RateSample {
  int q = 0;
  int c = 0;
  int64_t n_points = 0;
  double measured_bps = 0.0;
};

// x_scaled = (x - mean) / scale. Identity by default.
struct FeatureScaling {
  Features mean{};
  Features scale{1, 1, 1, 1, 1, 1, 1, 1, 1};

  Features apply(const Features& raw) const;
};

struct FitDiagnostics {
  size_t samples = 0;
  double r2 = 0.0;
  double rmse = 0.0;
  double relative_rmse = 0.0;  // rmse / mean(measured_bps)
  // Features left out of the fit (coefficient pinned to 0) because they carry
  // no information in the training set, e.g. n terms when n is constant.
  std::bitset<kNumFeatures> inactive;
};

struct RateModel {
  Features alpha{};  // coefficients on scaled features
  double beta = 0.0;
  double scan_hz = 10.0;
  FeatureScaling scaling;
  FitDiagnostics diagnostics;

  // Coefficients and intercept on raw (unscaled) features.
  Features raw_alpha() const;
  double raw_beta() const;
};

// Least squares over standardized features. Throws FitError when the design is
// rank deficient in q/c (naming the degenerate features) or the samples do not
// cover at least 30 rows, 5 distinct q and 3 distinct c.
RateModel fit(std::span<const RateSample> samples, double scan_hz = 10.0);

// max(1, alpha . scaled(phi(q, c, n)) + beta)
double predict(const RateModel& model, int q, int c, int64_t n);

// Relative RMSE of the model on a sample set.
double relative_rmse(const RateModel& model, std::span<const RateSample> samples);

// Grid restriction handed from the residual optimizer: a minimum q plus an
// optional mask over the grid (index = grid_index()).
struct ConfigFloor {
  int min_q = kMinQuantBits;
  std::bitset<kGridSize> allowed = std::bitset<kGridSize>().set();

  bool allows(const CompressionConfig& config) const;
};

int grid_index(const CompressionConfig& config);
CompressionConfig grid_config(int index);

struct ConfigGrid {
  std::vector<CompressionConfig> entries;  // q-major, c ascending
  std::vector<double> predicted_bps;       // parallel; empty until predicted

  static ConfigGrid full();
  static ConfigGrid predicted(const RateModel& model, int64_t n);
};

// argmin |predicted - r_trg| over the floor-restricted grid; ties go to the
// larger q, then the smaller c. Throws ConfigError for an empty restriction
// or r_trg <= 0.
CompressionConfig select_config(const ConfigGrid& grid, double r_trg, const ConfigFloor& floor = {});
CompressionConfig select_config(const RateModel& model, double r_trg, int64_t n,
                                const ConfigFloor& floor = {});

// Versioned text artifact.
std::string serialize_model(const RateModel& model);
RateModel parse_model(const std::string& text);
void save_model(const std::string& path, const RateModel& model);
RateModel load_model(const std::string& path);

// Training corpus CSV: q,c,n_points,measured_bps
void write_samples_csv(const std::string& path, std::span<const RateSample> samples);
std::vector<RateSample> read_samples_csv(const std::string& path);

struct TrainingCorpusConfig {
  ScanSourceConfig source{};  // scan_hz comes from here
  double duration = 600.0;    // seconds of synthetic driving
  double window = 1.0;        // seconds per sample
  uint64_t config_seed = 1;   // draws the (q, c) per window
  CodecOptions codec{};
};

// One sample per window: a uniformly drawn grid config encodes every scan of
// the window; measured_bps = mean payload_bits * scan_hz.
std::vector<RateSample> sample_rates(const TrainingCorpusConfig& config);

}  // namespace pcstream
