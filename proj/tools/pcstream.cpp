#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pcstream/error.hpp"
#include "pcstream/pipeline.hpp"

using namespace pcstream;

namespace {

struct BoundsArgs {
  std::string table;
  double epsilon = 0.05;
  std::string metric = "mean_ptp";
  bool worst = false;
};

void add_bounds(CLI::App* app, BoundsArgs& b) {
  app->add_option("--table", b.table, "Residual table CSV from calibrate")->required()->check(CLI::ExistingFile);
  app->add_option("--epsilon", b.epsilon, "Distortion budget in metres")->capture_default_str();
  app->add_option("--metric", b.metric, "mean_ptp, max_ptp or l2_norm")->capture_default_str();
  app->add_flag("--worst", b.worst, "Require every calibration scan to meet the budget");
}

RateBounds resolve_bounds(const BoundsArgs& b, double r_max) {
  const auto table = read_table_csv(b.table);
  return min_rate(table, b.epsilon, parse_metric(b.metric), r_max,
                  b.worst ? Feasibility::kPerScanWorst : Feasibility::kCorpusAverage);
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

void print_summary_line(const RunSummary& s) {
  std::printf(
      "%s %s: delivered %llu/%llu scans, tail drops %llu, p95 queue delay %.1f ms, mean enc %.2f Mbps, "
      "mean_ptp %.4f m\n",
      s.scenario.c_str(), to_string(s.mode).c_str(), static_cast<unsigned long long>(s.scans_delivered),
      static_cast<unsigned long long>(s.scans_generated), static_cast<unsigned long long>(s.tail_drops),
      s.p95_queue_delay * 1e3, s.mean_enc_bitrate / 1e6, s.mean_ptp);
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pcstream: rate-adaptive LiDAR point cloud streaming"};
  app.require_subcommand(1);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Build the residual table and fit the rate model");
  CalibrationSpec cs;
  std::string cal_env = "urban", table_out = "residual_table.csv", model_out = "rate_model.txt", samples_out;
  cal->add_option("--scans", cs.scans, "Calibration corpus size")->capture_default_str();
  cal->add_option("--seed", cs.source.seed, "Scene seed")->capture_default_str();
  cal->add_option("--environment", cal_env, "urban or tunnel")->capture_default_str();
  cal->add_option("--spacing", cs.spacing, "Seconds between corpus scans")->capture_default_str();
  cal->add_option("--train-duration", cs.train_duration,
                  "Seconds of random-config training corpus; 0 fits on the table rows")
      ->capture_default_str();
  cal->add_option("--config-seed", cs.config_seed, "Seed for the per-window config draw")->capture_default_str();
  cal->add_option("--table", table_out, "Residual table output")->capture_default_str();
  cal->add_option("--model", model_out, "Rate model output")->capture_default_str();
  cal->add_option("--samples", samples_out, "Training samples CSV output");

  // minrate
  auto* mr = app.add_subcommand("minrate", "Smallest rate meeting a distortion budget");
  BoundsArgs mr_b;
  double mr_rmax = 10e6;
  add_bounds(mr, mr_b);
  mr->add_option("--r-max", mr_rmax, "Upper rate bound, bps")->capture_default_str();

  // run / baseline / sweep share the scenario inputs
  struct RunArgs {
    std::string scenario, model, metrics, summary, scans;
    BoundsArgs bounds;
    double duration = 0.0;
    int64_t seed = -1;
  };
  RunArgs ra, ba, sa;
  auto add_run = [](CLI::App* sub, RunArgs& a, bool rate_inputs) {
    sub->add_option("--scenario", a.scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
    if (rate_inputs) {
      sub->add_option("--model", a.model, "Rate model from calibrate")->required()->check(CLI::ExistingFile);
      add_bounds(sub, a.bounds);
    }
    sub->add_option("--metrics", a.metrics, "Metrics CSV output ('-' for stdout)");
    sub->add_option("--summary", a.summary, "Summary JSON output ('-' for stdout)");
    sub->add_option("--duration", a.duration, "Override the scenario duration, s");
    sub->add_option("--seed", a.seed, "Override the scenario seed");
  };
  auto* run = app.add_subcommand("run", "Run an adaptive scenario");
  add_run(run, ra, true);
  run->add_option("--scans", ra.scans, "Per-scan CSV output");

  auto* base = app.add_subcommand("baseline", "Run the fixed-config baseline (feedback ignored)");
  add_run(base, ba, false);
  int base_q = 16, base_c = 5;
  base->add_option("--q", base_q, "Quantization bits")->capture_default_str();
  base->add_option("--c", base_c, "Compression level")->capture_default_str();

  auto* sweep = app.add_subcommand("sweep", "Run a scenario over several budgets and seeds");
  add_run(sweep, sa, true);
  std::string sweep_eps, sweep_seeds, sweep_out = "-";
  sweep->add_option("--epsilons", sweep_eps, "Comma-separated budgets (default: --epsilon)");
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds (default: the scenario's)");
  sweep->add_option("--out", sweep_out, "Sweep CSV output ('-' for stdout)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto prepare = [](const RunArgs& a) {
    ScenarioConfig sc = load_scenario(a.scenario);
    if (a.duration > 0.0) sc.duration = a.duration;
    if (a.seed >= 0) {
      sc.source.synthetic.seed = static_cast<uint64_t>(a.seed);
      sc.link.seed = static_cast<uint64_t>(a.seed);
    }
    return sc;
  };
  auto emit = [](const RunArgs& a, const RunResult& r) {
    write_text(a.metrics, metrics_csv(r.rows));
    write_text(a.summary, summary_json(r.summary));
    if (!a.scans.empty()) write_scans_csv(a.scans, r.scans);
    if (a.summary != "-" && a.metrics != "-") print_summary_line(r.summary);
  };

  try {
    if (cal->parsed()) {
      cs.source.environment = parse_environment(cal_env);
      const Calibration c = run_calibration(cs);
      write_table_csv(table_out, c.table);
      save_model(model_out, c.model);
      if (!samples_out.empty()) write_samples_csv(samples_out, c.samples);
      std::printf("calibrated %zu scans x %zu configs; model on %zu samples, relative RMSE %.2f%%\n",
                  c.table.scans, c.table.rows.size(), c.model.diagnostics.samples,
                  100.0 * c.model.diagnostics.relative_rmse);
    } else if (mr->parsed()) {
      const RateBounds b = resolve_bounds(mr_b, mr_rmax);
      std::printf("r_min %.0f bps at q=%d c=%d; q floor %d; %zu feasible configs\n", b.r_min, b.r_min_config.q,
                  b.r_min_config.c, b.floor_config.min_q, b.floor_config.allowed.count());
    } else if (run->parsed()) {
      ScenarioConfig sc = prepare(ra);
      sc.mode = RunMode::kAdaptive;
      RateControlInputs in{load_model(ra.model), resolve_bounds(ra.bounds, sc.control.r_max)};
      emit(ra, run_scenario(sc, &in));
    } else if (base->parsed()) {
      ScenarioConfig sc = prepare(ba);
      sc.mode = RunMode::kBaseline;
      sc.baseline_config = {base_q, base_c};
      emit(ba, run_scenario(sc, nullptr));
    } else if (sweep->parsed()) {
      ScenarioConfig sc0 = prepare(sa);
      sc0.mode = RunMode::kAdaptive;
      const RateModel model = load_model(sa.model);
      const auto table = read_table_csv(sa.bounds.table);
      std::vector<double> eps;
      for (const auto& e : split(sweep_eps)) eps.push_back(std::stod(e));
      if (eps.empty()) eps.push_back(sa.bounds.epsilon);
      std::vector<uint64_t> seeds;
      for (const auto& s : split(sweep_seeds)) seeds.push_back(std::stoull(s));
      if (seeds.empty()) seeds.push_back(sc0.source.synthetic.seed);
      std::ostringstream csv;
      csv << "epsilon,seed,r_min,q_floor,scans_delivered,scans_generated,tail_drops,p95_queue_delay,"
             "mean_enc_bitrate,tracking_error,mean_ptp,max_ptp\n";
      for (double e : eps) {
        const RateBounds b = min_rate(table, e, parse_metric(sa.bounds.metric), sc0.control.r_max,
                                      sa.bounds.worst ? Feasibility::kPerScanWorst : Feasibility::kCorpusAverage);
        for (uint64_t seed : seeds) {
          ScenarioConfig sc = sc0;
          sc.source.synthetic.seed = seed;
          sc.link.seed = seed;
          RateControlInputs in{model, b};
          const RunSummary s = run_scenario(sc, &in).summary;
          csv << e << "," << seed << "," << s.r_min << "," << s.q_floor << "," << s.scans_delivered << ","
              << s.scans_generated << "," << s.tail_drops << "," << s.p95_queue_delay << ","
              << s.mean_enc_bitrate << "," << s.tracking_error << "," << s.mean_ptp << "," << s.max_ptp << "\n";
          if (sweep_out != "-") print_summary_line(s);
        }
      }
      write_text(sweep_out, csv.str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "pcstream: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pcstream: %s\n", e.what());
    return 1;
  }
  return 0;
}
