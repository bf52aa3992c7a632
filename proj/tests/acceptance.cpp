// One line per acceptance criterion; exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pcstream/error.hpp"
#include "pcstream/pipeline.hpp"

using namespace pcstream;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;
// Budgets tighter than any config under 10 Mbps are still searched.
constexpr double kNoCap = 1e12;

void report(int id, bool pass, double secs, double limit, const std::string& detail) {
  const bool in_time = limit <= 0.0 || secs < limit;
  const bool ok = pass && in_time;
  if (!ok) ++failures;
  std::string time = limit > 0.0 ? " [" + std::to_string(secs).substr(0, 6) + " s < " +
                                       std::to_string(static_cast<int>(limit)) + " s" + (in_time ? "" : " EXCEEDED") +
                                       "]"
                                 : " [" + std::to_string(secs).substr(0, 6) + " s]";
  std::printf("criterion %d: %s  %s%s\n", id, ok ? "PASS" : "FAIL", detail.c_str(), time.c_str());
  std::fflush(stdout);
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

CompressionConfig brute_force(const ConfigGrid& g, double r_trg, const ConfigFloor& floor) {
  int best = -1;
  for (size_t i = 0; i < g.entries.size(); ++i) {
    const auto& e = g.entries[i];
    if (e.q < floor.min_q || !floor.allowed.test(grid_index(e))) continue;
    if (best < 0) {
      best = static_cast<int>(i);
      continue;
    }
    const double d = std::fabs(g.predicted_bps[i] - r_trg);
    const double bd = std::fabs(g.predicted_bps[best] - r_trg);
    const auto& b = g.entries[best];
    if (d < bd || (d == bd && (e.q > b.q || (e.q == b.q && e.c < b.c)))) best = static_cast<int>(i);
  }
  return g.entries.at(best);
}

struct MinOracle {
  bool feasible = false;
  double r_min = INFINITY;
  CompressionConfig at{};
  int min_q = kMaxQuantBits + 1;
  std::bitset<kGridSize> mask;
};

MinOracle filter_then_min(const ResidualTable& t, double eps) {
  MinOracle o;
  for (const auto& r : t.rows) {
    if (!(r.mean_ptp <= eps)) continue;
    o.feasible = true;
    o.mask.set(grid_index(r.config));
    o.min_q = std::min(o.min_q, r.config.q);
    if (r.measured_bps < o.r_min) {
      o.r_min = r.measured_bps;
      o.at = r.config;
    }
  }
  return o;
}

// Ledger and exactly-once accounting for one run.
std::string ledger_problem(const RunResult& r) {
  const auto& s = r.summary;
  if (s.packets_sent != s.link_in) return "sent " + std::to_string(s.packets_sent) + " != link_in";
  const uint64_t accounted = s.packets_delivered + s.tail_drops + s.random_drops + s.link_queued + s.link_in_flight;
  if (s.link_in != accounted) return "packets in " + std::to_string(s.link_in) + " != " + std::to_string(accounted);
  std::set<uint32_t> ids;
  uint64_t fates[5] = {0, 0, 0, 0, 0};
  for (const auto& rec : r.scans) {
    if (!ids.insert(rec.scan_id).second) return "scan_id " + std::to_string(rec.scan_id) + " recorded twice";
    ++fates[static_cast<int>(rec.fate)];
    if ((rec.fate == ScanFate::kDelivered) != (rec.delivered_at >= 0.0)) {
      return "scan " + std::to_string(rec.scan_id) + " delivery time disagrees with its fate";
    }
  }
  if (ids.size() != s.scans_generated) return "records != scans generated";
  if (fates[static_cast<int>(ScanFate::kUnaccounted)] != 0) {
    return std::to_string(fates[static_cast<int>(ScanFate::kUnaccounted)]) + " scans unaccounted";
  }
  if (fates[0] != s.scans_delivered) return "delivered records != receiver count";
  if (fates[0] + fates[1] + fates[2] + fates[3] != s.scans_generated) return "fates do not sum";
  return "";
}

}  // namespace

int run_all() {
  using clock = std::chrono::steady_clock;
  const std::string scenarios = std::string(PCSTREAM_SOURCE_DIR) + "/scenarios";
  const ScanSourceConfig cal_source{1000, Environment::kUrban};

  // 1. target bitrate
  {
    const auto t0 = clock::now();
    ControlParams p;
    CongestionState s = make_congestion_state(p);
    s.w_ref = 62500.0;
    s.srtt = 0.05;
    const double exact = target_bitrate(s, p);
    s.w_ref = 3200.0;
    const double low = target_bitrate(s, p);
    s.w_ref = 1e6;
    const double high = target_bitrate(s, p);
    const bool pass = exact == 1e7 && low == 3e6 && high == 1e7;
    report(1, pass, seconds_since(t0), 1.0,
           "8*62500/0.05 = " + num(exact, 10) + "; clamps to " + num(low) + " and " + num(high));
  }

  // 2. residual table monotonicity
  ResidualTable table;
  {
    const auto t0 = clock::now();
    const auto corpus = generate_corpus(cal_source, 60, 1.0);
    CalibrationOptions opt;
    opt.corpus_id = "urban-seed1000";
    table = calibrate(corpus, ConfigGrid::full(), opt);
    const double secs = seconds_since(t0);
    int ptp_bad = 0, bits_bad = 0;
    for (int c = kMinCompressionLevel; c <= kMaxCompressionLevel; ++c) {
      for (int q = kMinQuantBits + 1; q <= kMaxQuantBits; ++q) {
        const auto* lo = table.find({q - 1, c});
        const auto* hi = table.find({q, c});
        if (hi->mean_ptp > lo->mean_ptp) ++ptp_bad;
        if (hi->measured_bps < lo->measured_bps) ++bits_bad;
      }
    }
    report(2, ptp_bad == 0 && bits_bad == 0 && table.scans == 60, secs, 60.0,
           std::to_string(table.scans) + " scans x " + std::to_string(table.rows.size()) +
               " configs; mean_ptp violations " + std::to_string(ptp_bad) + ", payload violations " +
               std::to_string(bits_bad));
  }

  // 4 runs before 3: the selection draws respect the floor it yields.
  RateBounds bounds;
  bool c4_pass = true;
  std::string c4_detail;
  double c4_secs = 0.0;
  {
    double lo = INFINITY, hi = 0.0;
    for (const auto& r : table.rows) {
      lo = std::min(lo, r.mean_ptp);
      hi = std::max(hi, r.mean_ptp);
    }
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(std::log(lo), std::log(2.0 * hi));
    std::vector<double> eps(50);
    for (auto& e : eps) e = std::exp(u(rng));
    std::sort(eps.begin(), eps.end());
    int mismatches = 0, nonmonotone = 0;
    double prev = INFINITY;
    const auto t0 = clock::now();
    for (double e : eps) {
      const auto o = filter_then_min(table, e);
      if (!o.feasible) {
        try {
          min_rate(table, e, ResidualMetric::kMeanPtp, kNoCap);
          ++mismatches;
        } catch (const InfeasibleError&) {
        }
        continue;
      }
      const auto b = min_rate(table, e, ResidualMetric::kMeanPtp, kNoCap);
      if (b.r_min != o.r_min || b.r_min_config != o.at || b.floor_config.min_q != o.min_q ||
          b.floor_config.allowed != o.mask) {
        ++mismatches;
      }
      if (b.r_min > prev) ++nonmonotone;
      prev = b.r_min;
    }
    bool raised = false;
    try {
      min_rate(table, 0.5 * lo, ResidualMetric::kMeanPtp, kNoCap);
    } catch (const InfeasibleError&) {
      raised = true;
    }
    bounds = min_rate(table, 0.05);
    c4_secs = seconds_since(t0);
    c4_pass = mismatches == 0 && nonmonotone == 0 && raised;
    c4_detail = "50 budgets: mismatches " + std::to_string(mismatches) + ", non-monotone " +
                std::to_string(nonmonotone) + ", infeasible raises " + (raised ? "yes" : "no") +
                "; at 0.05 m r_min " + num(bounds.r_min / 1e6) + " Mbps (q=" + std::to_string(bounds.r_min_config.q) +
                " c=" + std::to_string(bounds.r_min_config.c) + "), floor q " +
                std::to_string(bounds.floor_config.min_q);
  }

  // 3. rate model
  RateModel model;
  {
    const auto t0 = clock::now();
    TrainingCorpusConfig tc;
    tc.source = cal_source;
    tc.duration = 600.0;
    const auto samples = sample_rates(tc);
    std::vector<size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(3);
    std::shuffle(idx.begin(), idx.end(), rng);
    const size_t n_train = samples.size() * 4 / 5;
    std::vector<RateSample> train, test;
    for (size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : test).push_back(samples[idx[i]]);
    const RateModel held = fit(train, cal_source.scan_hz);
    const double rmse = relative_rmse(held, test);
    model = fit(samples, cal_source.scan_hz);

    const auto grid = ConfigGrid::predicted(model, 32768);
    std::uniform_real_distribution<double> lr(std::log(0.3e6), std::log(30e6));
    int mismatches = 0;
    for (int k = 0; k < 1000; ++k) {
      const double r = std::exp(lr(rng));
      const ConfigFloor& floor = k % 2 ? bounds.floor_config : ConfigFloor{};
      if (select_config(grid, r, floor) != brute_force(grid, r, floor)) ++mismatches;
    }
    const double secs = seconds_since(t0);
    report(3, mismatches == 0 && rmse <= 0.15, secs, 60.0,
           std::to_string(samples.size()) + " samples; held-out relative RMSE " + num(100.0 * rmse, 3) +
               "% (<= 15%); 1000 selections, mismatches " + std::to_string(mismatches));
  }
  report(4, c4_pass, c4_secs, 10.0, c4_detail);

  RateControlInputs inputs{model, bounds};
  ScenarioConfig step = load_scenario(scenarios + "/step.json");
  step.mode = RunMode::kAdaptive;

  // 5. step response
  RunResult adaptive;
  {
    const auto t0 = clock::now();
    adaptive = run_scenario(step, &inputs);
    const double secs = seconds_since(t0);
    const double down = step.link.trace[1].t;
    double worst = 0.0, worst_t = 0.0;
    for (const auto& row : adaptive.rows) {
      if (row.t < down + 5.0) continue;
      const double ratio = row.enc_bitrate / row.link_capacity;
      if (ratio > worst) {
        worst = ratio;
        worst_t = row.t;
      }
    }
    int below_floor = 0;
    for (const auto& rec : adaptive.scans) below_floor += rec.config.q < bounds.floor_config.min_q;
    const auto& s = adaptive.summary;
    const bool a = worst <= 1.1, b = s.p95_queue_delay <= 0.040, c = s.tail_drops == 0,
               d = s.max_bif_ratio <= step.control.overshoot_factor, e = below_floor == 0;
    report(5, a && b && c && d && e, secs, 120.0,
           std::string("(a) max enc/capacity from ") + num(down + 5.0) + " s " + num(worst) + " at " +
               num(worst_t) + " s" + (a ? "" : " FAIL") + "; (b) p95 queue delay " + num(1e3 * s.p95_queue_delay, 3) +
               " ms" + (b ? "" : " FAIL") + "; (c) tail drops " + std::to_string(s.tail_drops) +
               "; (d) max BIF/w_ref " + num(s.max_bif_ratio, 3) + "; (e) scans below q floor " +
               std::to_string(below_floor) + " (floor " + std::to_string(bounds.floor_config.min_q) + ")");
  }

  // 6. baseline versus adaptive
  {
    const auto t0 = clock::now();
    ScenarioConfig base = step;
    base.mode = RunMode::kBaseline;
    base.baseline_config = {16, step.baseline_config.c};
    const RunResult b = run_scenario(base, nullptr);
    const double secs = seconds_since(t0);
    const double down = step.link.trace[1].t, up = step.link.trace[2].t;
    double first_drop = up;
    for (double td : b.tail_drop_times) {
      if (td >= down) {
        first_drop = std::min(first_drop, td);
        break;
      }
    }
    // Link backlog sampled every metrics tick must grow until the queue overflows.
    size_t samples = 0, shrinks = 0;
    uint64_t prev = 0, start = 0, peak = 0;
    for (const auto& row : b.rows) {
      if (row.t <= down || row.t > first_drop) continue;
      if (samples == 0) start = row.link_queue_bytes;
      if (samples > 0 && row.link_queue_bytes < prev) ++shrinks;
      prev = row.link_queue_bytes;
      peak = std::max(peak, row.link_queue_bytes);
      ++samples;
    }
    const auto& as = adaptive.summary;
    const bool grew = samples >= 2 && shrinks == 0 && peak > start;
    const bool pass = b.summary.tail_drop_bursts >= 1 && grew && as.tail_drops == 0 && as.random_drops == 0;
    report(6, pass, secs, 120.0,
           "baseline q=16: " + std::to_string(b.summary.tail_drop_bursts) + " tail-drop bursts, " +
               std::to_string(b.summary.tail_drops) + " drops; link queue " + std::to_string(start) + " -> " +
               std::to_string(peak) + " B over " + std::to_string(samples) + " samples before the first drop at " +
               num(first_drop) + " s, " + std::to_string(shrinks) + " shrinks; adaptive losses " +
               std::to_string(as.tail_drops + as.random_drops));
  }

  // 7. determinism
  {
    const auto t0 = clock::now();
    const RunResult a = run_scenario(step, &inputs);
    const RunResult b = run_scenario(step, &inputs);
    const double secs = seconds_since(t0);
    const std::string ma = metrics_csv(a.rows), mb = metrics_csv(b.rows);
    const bool same = ma == mb && summary_json(a.summary) == summary_json(b.summary);
    report(7, same, secs, 120.0,
           "two runs of " + step.name + ": metrics " + std::to_string(ma.size()) + " bytes, " +
               (same ? "identical" : "DIFFERENT"));
  }

  // 8. ledger over the scenario suite
  {
    const auto t0 = clock::now();
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(scenarios)) {
      if (e.path().extension() == ".json") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    std::string detail;
    bool pass = !files.empty();
    for (const auto& f : files) {
      ScenarioConfig sc = load_scenario(f);
      for (RunMode mode : {RunMode::kAdaptive, RunMode::kBaseline}) {
        sc.mode = mode;
        std::string problem;
        try {
          const RunResult r = run_scenario(sc, mode == RunMode::kAdaptive ? &inputs : nullptr);
          problem = ledger_problem(r);
        } catch (const InvariantViolation& e) {
          problem = e.what();
        }
        if (!problem.empty()) pass = false;
        detail += (detail.empty() ? "" : ", ") + sc.name + "/" + to_string(mode) + (problem.empty() ? " ok" : " " + problem);
      }
    }
    report(8, pass, seconds_since(t0), 0.0, detail);
  }

  std::printf("%s: %d of 8 criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}

int main() {
  try {
    return run_all();
  } catch (const std::exception& e) {
    std::printf("FAIL: aborted after %d failures: %s\n", failures, e.what());
    return 1;
  }
}
