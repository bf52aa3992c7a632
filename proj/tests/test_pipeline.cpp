#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pcstream/error.hpp"
#include "pcstream/pipeline.hpp"

using namespace pcstream;

namespace {

constexpr int kRings = 16;
constexpr int kColumns = 256;

ScanSourceConfig small_source(uint64_t seed) {
  ScanSourceConfig s;
  s.seed = seed;
  s.sensor.rings = kRings;
  s.sensor.columns = kColumns;
  return s;
}

struct Small {
  Calibration cal;
  RateControlInputs inputs;
};

// Calibration on the small sensor, shared by the whole file.
const Small& small() {
  static const Small s = [] {
    CalibrationSpec spec;
    spec.source = small_source(1000);
    spec.scans = 6;
    spec.train_duration = 30.0;
    spec.codec.row_stride = kColumns;
    Small out{run_calibration(spec), {}};
    out.inputs.model = out.cal.model;
    out.inputs.bounds = min_rate(out.cal.table, 0.05);
    return out;
  }();
  return s;
}

ScenarioConfig small_scenario(double duration, std::vector<CapacityPoint> trace, uint64_t seed = 3) {
  ScenarioConfig c;
  c.name = "small";
  c.duration = duration;
  c.source.synthetic = small_source(seed);
  c.codec.row_stride = kColumns;
  c.link.trace = std::move(trace);
  c.link.seed = seed;
  return c;
}

// A trace that squeezes the small sensor: between r_min and the top rate.
std::vector<CapacityPoint> squeeze_trace() {
  const auto& b = small().inputs.bounds;
  const double top = small().cal.table.find({24, 0})->measured_bps;
  return {{0.0, 1.3 * top}, {10.0, std::max(1.2 * b.r_min, 0.4 * top)}, {20.0, 1.3 * top}};
}

void expect_ledger(const RunResult& r) {
  const auto& s = r.summary;
  EXPECT_EQ(s.packets_sent, s.link_in);
  EXPECT_EQ(s.link_in, s.packets_delivered + s.tail_drops + s.random_drops + s.link_queued + s.link_in_flight);
  std::set<uint32_t> ids;
  uint64_t delivered = 0;
  for (const auto& rec : r.scans) {
    EXPECT_TRUE(ids.insert(rec.scan_id).second) << rec.scan_id;
    if (rec.delivered_at >= 0.0) {
      ++delivered;
      EXPECT_GE(rec.delivered_at, rec.captured_at);
    }
  }
  EXPECT_EQ(ids.size(), s.scans_generated);
  EXPECT_EQ(delivered, s.scans_delivered);
  // Every scan ends up in exactly one bucket.
  uint64_t by_fate[5] = {0, 0, 0, 0, 0};
  for (const auto& rec : r.scans) {
    ++by_fate[static_cast<int>(rec.fate)];
    EXPECT_EQ(rec.fate == ScanFate::kDelivered, rec.delivered_at >= 0.0) << rec.scan_id;
  }
  EXPECT_EQ(by_fate[static_cast<int>(ScanFate::kUnaccounted)], 0u);
  EXPECT_EQ(s.scans_unaccounted, 0u);
  EXPECT_EQ(by_fate[static_cast<int>(ScanFate::kEvicted)], s.scans_dropped_sender);
  EXPECT_EQ(by_fate[static_cast<int>(ScanFate::kLost)], s.scans_lost);
  EXPECT_EQ(by_fate[static_cast<int>(ScanFate::kPending)], s.scans_pending);
  EXPECT_EQ(s.scans_delivered + s.scans_dropped_sender + s.scans_lost + s.scans_pending, s.scans_generated);
  EXPECT_LE(s.scans_incomplete, s.scans_lost);
}

}  // namespace

TEST(ScanSource, DeterministicAndMoving) {
  SyntheticScanSource src(ScanSourceConfig{});
  const auto a = src.generate(1.0);
  const auto b = src.generate(1.0);
  ASSERT_EQ(a.size(), 32768u);
  ASSERT_EQ(a.points.size(), b.points.size());
  for (size_t i = 0; i < a.points.size(); ++i) ASSERT_EQ(a.points[i], b.points[i]);
  const auto next = src.generate(1.1);
  size_t differ = 0;
  for (size_t i = 0; i < a.points.size(); ++i) differ += a.points[i] != next.points[i];
  EXPECT_GT(differ, a.points.size() / 2);
  ScanSourceConfig other;
  other.seed = 2;
  const auto c = SyntheticScanSource(other).generate(1.0);
  differ = 0;
  for (size_t i = 0; i < a.points.size(); ++i) differ += a.points[i] != c.points[i];
  EXPECT_GT(differ, a.points.size() / 2);
}

TEST(ScanSource, InsideTheBox) {
  const BoundingBox box;
  for (auto env : {Environment::kUrban, Environment::kTunnel}) {
    ScanSourceConfig cfg;
    cfg.environment = env;
    const auto s = SyntheticScanSource(cfg).generate(3.0);
    for (const auto& p : s.points) {
      for (int k = 0; k < 3; ++k) {
        ASSERT_GE(p[k], box.min[k]);
        ASSERT_LE(p[k], box.max[k]);
      }
    }
  }
  EXPECT_EQ(parse_environment("tunnel"), Environment::kTunnel);
  EXPECT_EQ(to_string(Environment::kUrban), "urban");
  EXPECT_THROW(parse_environment("forest"), ConfigError);
}

TEST(Scenario, ShippedFilesLoad) {
  const std::string dir = std::string(PCSTREAM_SOURCE_DIR) + "/scenarios";
  int n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    const auto c = load_scenario(e.path().string());
    c.validate();
    ++n;
  }
  EXPECT_GE(n, 4);
  const auto step = load_scenario(dir + "/step.json");
  EXPECT_EQ(step.duration, 240.0);
  ASSERT_EQ(step.link.trace.size(), 3u);
  EXPECT_EQ(step.link.trace[1].t, 60.0);
  EXPECT_EQ(step.link.trace[1].bps, 3e6);
  EXPECT_EQ(step.link.prop_delay, 0.020);
  EXPECT_EQ(step.link.ce_threshold, 0.005);
  EXPECT_EQ(step.baseline_config.q, 16);
}

TEST(Scenario, UnknownKeysAndBadValues) {
  EXPECT_THROW(parse_scenario(R"({"durration": 5})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"link": {"bandwidth": 5}})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"source": {"environment": "urban", "colour": 1}})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"duration": "long"})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"link": {"trace": [[0, 1e6]], "random_walk": {}}})"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"link": {"trace": [[0, 1e6, 3]]}})"), ConfigError);
  EXPECT_THROW(parse_scenario("{not json"), ConfigError);
  EXPECT_THROW(parse_scenario(R"({"mode": "fast"})"), ConfigError);
  EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), ConfigError);
  auto c = parse_scenario(R"({"duration": -1})");
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Scenario, RelativeTraceFileResolvesAgainstTheScenario) {
  const auto dir = std::filesystem::temp_directory_path() / "pcstream_scenario_test";
  std::filesystem::create_directories(dir);
  write_capacity_csv((dir / "cap.csv").string(), {{0.0, 4e6}, {5.0, 2e6}});
  {
    std::ofstream f(dir / "s.json");
    f << R"({"name": "rel", "seed": 9, "mode": "baseline", "link": {"trace_file": "cap.csv"}})";
  }
  const auto c = load_scenario((dir / "s.json").string());
  std::filesystem::remove_all(dir);
  EXPECT_EQ(c.name, "rel");
  EXPECT_EQ(c.mode, RunMode::kBaseline);
  EXPECT_EQ(c.source.synthetic.seed, 9u);
  EXPECT_EQ(c.link.seed, 9u);
  ASSERT_EQ(c.link.trace.size(), 2u);
  EXPECT_EQ(c.link.trace[1].bps, 2e6);
}

TEST(Convergence, GuardAfterStartAndSteps) {
  ScenarioConfig c;
  c.link.trace = {{0.0, 10e6}, {60.0, 3e6}, {100.0, 3.1e6}, {180.0, 10e6}};
  EXPECT_FALSE(converged_at(c, 4.9));
  EXPECT_TRUE(converged_at(c, 5.0));
  EXPECT_FALSE(converged_at(c, 60.0));
  EXPECT_FALSE(converged_at(c, 64.9));
  EXPECT_TRUE(converged_at(c, 65.0));
  EXPECT_TRUE(converged_at(c, 100.5));  // small change, no guard
  EXPECT_FALSE(converged_at(c, 181.0));
  EXPECT_TRUE(converged_at(c, 185.0));
}

TEST(Run, AdaptiveNeedsInputs) {
  auto c = small_scenario(1.0, {{0.0, 5e6}});
  EXPECT_THROW(run_scenario(c, nullptr), ConfigError);
  c.mode = RunMode::kBaseline;
  EXPECT_NO_THROW(run_scenario(c, nullptr));
}

TEST(Run, SameInputsSameMetrics) {
  const auto c = small_scenario(30.0, squeeze_trace());
  const auto a = run_scenario(c, &small().inputs);
  const auto b = run_scenario(c, &small().inputs);
  EXPECT_EQ(metrics_csv(a.rows), metrics_csv(b.rows));
  EXPECT_EQ(summary_json(a.summary), summary_json(b.summary));
  ASSERT_EQ(a.scans.size(), b.scans.size());
  for (size_t i = 0; i < a.scans.size(); ++i) {
    EXPECT_EQ(a.scans[i].payload_bits, b.scans[i].payload_bits);
    EXPECT_EQ(a.scans[i].delivered_at, b.scans[i].delivered_at);
  }
}

TEST(Run, AdaptiveHonoursFloorBoundsAndLedger) {
  for (uint64_t seed : {3u, 4u}) {
    const auto c = small_scenario(30.0, squeeze_trace(), seed);
    const auto r = run_scenario(c, &small().inputs);
    const auto& b = small().inputs.bounds;
    ASSERT_GT(r.summary.scans_generated, 290u);
    std::set<int> used;
    for (const auto& rec : r.scans) {
      used.insert(grid_index(rec.config));
      EXPECT_GE(rec.config.q, b.floor_config.min_q);
      EXPECT_TRUE(b.floor_config.allowed.test(grid_index(rec.config))) << rec.config.q << "/" << rec.config.c;
      EXPECT_GE(rec.r_trg, b.r_min);
      EXPECT_LE(rec.r_trg, b.r_max);
    }
    for (const auto& row : r.rows) {
      EXPECT_GE(row.r_trg, b.r_min);
      EXPECT_LE(row.r_trg, b.r_max);
    }
    // The squeeze forces the encoder off its top config.
    EXPECT_GE(used.size(), 3u);
    EXPECT_LE(r.summary.max_bif_ratio, c.control.overshoot_factor);
    EXPECT_GE(r.summary.min_q_used, b.floor_config.min_q);
    expect_ledger(r);
    EXPECT_GT(r.summary.scans_delivered, r.summary.scans_generated * 9 / 10);
  }
}

TEST(Run, DeliveredResidualWithinTwiceTheTable) {
  const auto c = small_scenario(20.0, squeeze_trace(), 5);
  const auto r = run_scenario(c, &small().inputs);
  const auto& table = small().cal.table;
  size_t checked = 0;
  for (const auto& rec : r.scans) {
    if (rec.delivered_at < 0.0) continue;
    const auto* row = table.find(rec.config);
    ASSERT_NE(row, nullptr);
    EXPECT_LE(rec.mean_ptp, 2.0 * row->mean_ptp) << rec.scan_id << " at " << rec.config.q << "/" << rec.config.c;
    ++checked;
  }
  EXPECT_GT(checked, 150u);
}

TEST(Run, LinkAtRmaxSettlesBelowIt) {
  // Capacity equal to r_max: CE from any standing queue keeps r_trg in a band under the cap.
  RateControlInputs in = small().inputs;
  const double top = small().cal.table.find({24, 0})->measured_bps;
  in.bounds.r_max = 0.8 * top;
  const auto c = small_scenario(40.0, {{0.0, in.bounds.r_max}}, 6);
  const auto r = run_scenario(c, &in);
  double lo = INFINITY, hi = 0.0, sum = 0.0;
  size_t n = 0;
  for (const auto& row : r.rows) {
    if (row.t < 10.0) continue;
    lo = std::min(lo, row.r_trg);
    hi = std::max(hi, row.r_trg);
    sum += row.r_trg;
    ++n;
  }
  EXPECT_LE(hi, in.bounds.r_max);
  EXPECT_GT(sum / n, 0.5 * in.bounds.r_max);
  EXPECT_GT(lo, in.bounds.r_min);
  EXPECT_EQ(r.summary.tail_drops, 0u);
  EXPECT_LE(r.summary.p95_queue_delay, 0.040);
  expect_ledger(r);
}

TEST(Run, BaselineIgnoresFeedback) {
  auto c = small_scenario(10.0, {{0.0, 20e6}});
  c.mode = RunMode::kBaseline;
  c.baseline_config = {14, 3};
  const auto r = run_scenario(c, nullptr);
  for (const auto& rec : r.scans) EXPECT_EQ(rec.config, (CompressionConfig{14, 3}));
  EXPECT_EQ(r.summary.mode, RunMode::kBaseline);
  EXPECT_EQ(r.summary.tail_drops, 0u);
  expect_ledger(r);
  // Fixed config at ample capacity: nearly everything arrives.
  EXPECT_GE(r.summary.scans_delivered + 2, r.summary.scans_generated);
}

TEST(Run, LossyLinkStillBalances) {
  auto c = small_scenario(20.0, {{0.0, 2e6}});
  c.link.loss_rate = 0.01;
  const auto r = run_scenario(c, &small().inputs);
  EXPECT_GT(r.summary.random_drops, 0u);
  EXPECT_GT(r.summary.scans_incomplete, 0u);
  expect_ledger(r);
}

TEST(Metrics, CsvLayout) {
  const auto c = small_scenario(3.0, {{0.0, 5e6}});
  const auto r = run_scenario(c, &small().inputs);
  ASSERT_EQ(r.rows.size(), 30u);
  for (size_t i = 0; i < r.rows.size(); ++i) EXPECT_NEAR(r.rows[i].t, 0.1 * (i + 1), 1e-9);
  std::istringstream in(metrics_csv(r.rows));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# pcstream metrics v1");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("t,w_ref,bytes_in_flight,srtt,est_queue_delay,r_trg,enc_bitrate,link_capacity,"
                       "link_queue_delay,q_used,c_used,sender_queue_depth,scans_delivered,scans_dropped,"
                       "ce_fraction,mean_ptp_of_delivered",
                       0),
            0u);
  const auto columns = std::count(line.begin(), line.end(), ',');
  size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), columns);
    ++rows;
  }
  EXPECT_EQ(rows, 30u);
}

TEST(Metrics, SummaryJson) {
  const auto c = small_scenario(3.0, {{0.0, 5e6}});
  const auto r = run_scenario(c, &small().inputs);
  const auto j = nlohmann::json::parse(summary_json(r.summary));
  EXPECT_EQ(j["scenario"], "small");
  EXPECT_EQ(j["scans_generated"].get<uint64_t>(), r.summary.scans_generated);
  EXPECT_EQ(j["tail_drops"].get<uint64_t>(), r.summary.tail_drops);
  EXPECT_DOUBLE_EQ(j["r_min"].get<double>(), small().inputs.bounds.r_min);
}
