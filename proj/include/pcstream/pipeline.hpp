#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcstream/codec.hpp"
#include "pcstream/congestion.hpp"
#include "pcstream/netem.hpp"
#include "pcstream/predictor.hpp"
#include "pcstream/residual_opt.hpp"
#include "pcstream/scan_source.hpp"
#include "pcstream/transport.hpp"

namespace pcstream {

enum class RunMode { kAdaptive, kBaseline };

RunMode parse_mode(const std::string& name);
std::string to_string(RunMode mode);

// Where scans come from: the synthetic generator, or a directory of scan
// files (*.pcs binary, anything else read as ASCII points) played in name order.
struct SourceSpec {
  ScanSourceConfig synthetic{};
  std::string directory;  // non-empty selects the directory source
  bool loop = true;
  size_t points = 0;      // ASCII files are padded to this; 0 = first file's count
};

struct ScenarioConfig {
  std::string name = "scenario";
  double duration = 120.0;
  SourceSpec source{};
  LinkConfig link{};
  ControlParams control{};
  TransportParams transport{};
  CodecOptions codec{};
  RunMode mode = RunMode::kAdaptive;
  CompressionConfig baseline_config{16, 5};
  double metrics_interval = 0.1;
  double feedback_interval = 0.010;
  size_t feedback_packets = 2;
  double encoder_window = 1.0;      // enc_bitrate averaging window
  double convergence_guard = 5.0;   // excluded after start and after each capacity step
  double reassembly_timeout = 2.0;
  // Optional encoder-side tracking, off by default: an online actual/predicted
  // rate correction (source-wide and per config), and aiming below r_trg by
  // the sender backlog spread over backlog_drain_time seconds.
  double bias_gain = 0.0;
  double config_bias_gain = 0.0;
  double backlog_drain_time = 0.0;

  void validate() const;
};

// Products of calibration handed to an adaptive run.
struct RateControlInputs {
  RateModel model;
  RateBounds bounds;
};

struct MetricsRow {
  double t = 0.0;
  double w_ref = 0.0;
  double bytes_in_flight = 0.0;
  double srtt = 0.0;
  double est_queue_delay = 0.0;
  double r_trg = 0.0;
  double enc_bitrate = 0.0;
  double link_capacity = 0.0;
  double link_queue_delay = 0.0;
  int q_used = 0;
  int c_used = 0;
  uint64_t sender_queue_depth = 0;
  uint64_t scans_delivered = 0;
  uint64_t scans_dropped = 0;
  double ce_fraction = 0.0;
  double mean_ptp_of_delivered = 0.0;  // over scans delivered in this interval, nan if none
  // Extra columns.
  uint64_t link_queue_bytes = 0;
  uint64_t link_tail_drops = 0;
  uint64_t link_ce_marks = 0;
  double pacing_rate = 0.0;
};

// What became of a scan by the end of a run.
enum class ScanFate { kDelivered, kEvicted, kLost, kPending, kUnaccounted };
std::string to_string(ScanFate fate);

struct ScanRecord {
  uint32_t scan_id = 0;
  double captured_at = 0.0;
  CompressionConfig config;
  uint64_t payload_bits = 0;
  double r_trg = 0.0;
  double delivered_at = -1.0;  // < 0: never delivered
  double mean_ptp = 0.0;
  double max_ptp = 0.0;
  // kEvicted: dropped from the sender queue. kLost: a fragment was dropped on
  // the link. kPending: still in the sender or on the link at the end.
  ScanFate fate = ScanFate::kUnaccounted;
};

struct RunSummary {
  std::string scenario;
  RunMode mode = RunMode::kAdaptive;
  double duration = 0.0;
  double r_min = 0.0;
  double r_max = 0.0;
  int q_floor = 0;
  double epsilon = 0.0;

  uint64_t scans_generated = 0;
  uint64_t scans_delivered = 0;
  uint64_t scans_dropped_sender = 0;   // evicted from the sender queue
  uint64_t scans_incomplete = 0;       // partial reassemblies given up or corrupt
  uint64_t scans_lost = 0;             // at least one fragment dropped on the link
  uint64_t scans_pending = 0;          // still in the sender or on the link at the end
  uint64_t scans_unaccounted = 0;      // none of the above; should stay 0
  uint64_t packets_sent = 0;
  uint64_t packets_delivered = 0;
  uint64_t tail_drops = 0;
  uint64_t tail_drop_bursts = 0;  // tail drops separated by more than 100 ms start a new burst
  uint64_t random_drops = 0;
  uint64_t ce_marks = 0;
  uint64_t feedback_reports = 0;
  uint64_t feedback_rejected = 0;

  double mean_queue_delay = 0.0;  // per packet, converged intervals only
  double p95_queue_delay = 0.0;
  double max_queue_delay = 0.0;
  double tracking_error = 0.0;    // mean |enc_bitrate - capacity| / capacity, converged rows
  double mean_enc_bitrate = 0.0;
  double max_bif_ratio = 0.0;
  int min_q_used = 0;

  double mean_ptp = 0.0;          // over delivered scans
  double max_ptp = 0.0;
  double p95_mean_ptp = 0.0;
  uint64_t scans_over_epsilon = 0;

  // Final ledger, packets.
  uint64_t link_in = 0;
  uint64_t link_queued = 0;
  uint64_t link_in_flight = 0;
};

struct RunResult {
  std::vector<MetricsRow> rows;
  std::vector<ScanRecord> scans;
  RunSummary summary;
  // (enqueue time, queuing delay) for every packet that crossed the link.
  std::vector<std::pair<double, double>> packet_queue_delays;
  // Times of tail drops.
  std::vector<double> tail_drop_times;
};

// True when t is clear of the start-up period and of the guard after every
// capacity change of at least 25% in the link trace.
bool converged_at(const ScenarioConfig& config, double t);

// Runs a scenario. Adaptive runs need the rate model and bounds; baseline runs
// ignore them. Throws InvariantViolation when a runtime invariant breaks.
RunResult run_scenario(const ScenarioConfig& config, const RateControlInputs* inputs);

// Metrics CSV ("# pcstream metrics v1" then a header row).
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string summary_json(const RunSummary& summary);
void write_scans_csv(const std::string& path, const std::vector<ScanRecord>& scans);

// Scenario files are JSON; relative paths resolve against the file's directory.
ScenarioConfig parse_scenario(const std::string& json_text, const std::string& base_dir = ".");
ScenarioConfig load_scenario(const std::string& path);

struct CalibrationSpec {
  ScanSourceConfig source{1000, Environment::kUrban};
  size_t scans = 60;
  double spacing = 1.0;          // s between corpus scans
  double train_duration = 600.0; // random-config training corpus; 0 fits on the table rows
  uint64_t config_seed = 1;
  CodecOptions codec{};
};

struct Calibration {
  ResidualTable table;
  RateModel model;
  std::vector<RateSample> samples;
};

std::vector<PointCloudScan> generate_corpus(const ScanSourceConfig& source, size_t scans, double spacing);
std::vector<RateSample> samples_from_table(const ResidualTable& table);
Calibration run_calibration(const CalibrationSpec& spec);

}  // namespace pcstream
