#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "json.hpp"
#include "pcstream/error.hpp"
#include "pcstream/pipeline.hpp"

namespace pcstream {

namespace {

using nlohmann::json;

void only_keys(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void take(const json& obj, const char* key, T& dst, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    dst = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

std::string resolve(const std::string& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return p;
  return (std::filesystem::path(base) / path).string();
}

}  // namespace

ScenarioConfig parse_scenario(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("scenario is not valid JSON: ") + e.what());
  }
  only_keys(j, "scenario",
            {"name", "duration", "seed", "mode", "source", "link", "control", "transport", "baseline",
             "metrics_interval", "feedback_interval", "feedback_packets", "encoder_window",
             "convergence_guard", "reassembly_timeout", "bias_gain", "config_bias_gain",
             "backlog_drain_time"});
  ScenarioConfig c;
  take(j, "name", c.name, "scenario");
  take(j, "duration", c.duration, "scenario");
  if (j.contains("seed")) {
    uint64_t seed = 0;
    take(j, "seed", seed, "scenario");
    c.source.synthetic.seed = seed;
    c.link.seed = seed;
  }
  if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
  take(j, "metrics_interval", c.metrics_interval, "scenario");
  take(j, "feedback_interval", c.feedback_interval, "scenario");
  take(j, "feedback_packets", c.feedback_packets, "scenario");
  take(j, "encoder_window", c.encoder_window, "scenario");
  take(j, "convergence_guard", c.convergence_guard, "scenario");
  take(j, "reassembly_timeout", c.reassembly_timeout, "scenario");
  take(j, "bias_gain", c.bias_gain, "scenario");
  take(j, "config_bias_gain", c.config_bias_gain, "scenario");
  take(j, "backlog_drain_time", c.backlog_drain_time, "scenario");

  if (j.contains("source")) {
    const json& s = j["source"];
    only_keys(s, "source",
              {"environment", "seed", "velocity", "scan_hz", "rings", "columns", "range_noise", "dropout",
               "directory", "loop", "points"});
    auto& sc = c.source.synthetic;
    if (s.contains("environment")) sc.environment = parse_environment(s["environment"].get<std::string>());
    take(s, "seed", sc.seed, "source");
    take(s, "velocity", sc.velocity, "source");
    take(s, "scan_hz", sc.scan_hz, "source");
    take(s, "rings", sc.sensor.rings, "source");
    take(s, "columns", sc.sensor.columns, "source");
    take(s, "range_noise", sc.sensor.range_noise, "source");
    take(s, "dropout", sc.sensor.dropout, "source");
    if (s.contains("directory")) c.source.directory = resolve(base_dir, s["directory"].get<std::string>());
    take(s, "loop", c.source.loop, "source");
    take(s, "points", c.source.points, "source");
    if (sc.sensor.rings <= 0 || sc.sensor.columns <= 0) throw ConfigError("source: rings and columns must be positive");
    c.codec.row_stride = static_cast<uint32_t>(sc.sensor.columns);
  }

  if (j.contains("link")) {
    const json& l = j["link"];
    only_keys(l, "link",
              {"trace", "trace_file", "random_walk", "prop_delay", "queue_limit", "ce_threshold", "loss_rate",
               "seed"});
    const int sources = static_cast<int>(l.contains("trace")) + static_cast<int>(l.contains("trace_file")) +
                        static_cast<int>(l.contains("random_walk"));
    if (sources > 1) throw ConfigError("link: give one of trace, trace_file, random_walk");
    if (l.contains("trace")) {
      c.link.trace.clear();
      for (const auto& p : l["trace"]) {
        if (!p.is_array() || p.size() != 2) throw ConfigError("link.trace entries must be [t, bps]");
        c.link.trace.push_back({p[0].get<double>(), p[1].get<double>()});
      }
    } else if (l.contains("trace_file")) {
      c.link.trace = read_capacity_csv(resolve(base_dir, l["trace_file"].get<std::string>()));
    } else if (l.contains("random_walk")) {
      const json& w = l["random_walk"];
      only_keys(w, "link.random_walk", {"start_bps", "min_bps", "max_bps", "step_interval", "sigma", "seed"});
      RandomWalkConfig rw;
      rw.duration = c.duration;
      rw.seed = c.link.seed;
      take(w, "start_bps", rw.start_bps, "random_walk");
      take(w, "min_bps", rw.min_bps, "random_walk");
      take(w, "max_bps", rw.max_bps, "random_walk");
      take(w, "step_interval", rw.step_interval, "random_walk");
      take(w, "sigma", rw.sigma, "random_walk");
      take(w, "seed", rw.seed, "random_walk");
      c.link.trace = random_walk_trace(rw);
    }
    take(l, "prop_delay", c.link.prop_delay, "link");
    take(l, "queue_limit", c.link.queue_limit, "link");
    take(l, "ce_threshold", c.link.ce_threshold, "link");
    take(l, "loss_rate", c.link.loss_rate, "link");
    take(l, "seed", c.link.seed, "link");
  }

  if (j.contains("control")) {
    const json& k = j["control"];
    only_keys(k, "control",
              {"overshoot_factor", "loss_beta", "ce_beta", "queue_delay_target", "increase_gain", "srtt_alpha",
               "w_min", "w_max", "w_init", "mss", "r_min", "r_max", "owd_window"});
    auto& p = c.control;
    take(k, "overshoot_factor", p.overshoot_factor, "control");
    take(k, "loss_beta", p.loss_beta, "control");
    take(k, "ce_beta", p.ce_beta, "control");
    take(k, "queue_delay_target", p.queue_delay_target, "control");
    take(k, "increase_gain", p.increase_gain, "control");
    take(k, "srtt_alpha", p.srtt_alpha, "control");
    take(k, "w_min", p.w_min, "control");
    take(k, "w_max", p.w_max, "control");
    take(k, "w_init", p.w_init, "control");
    take(k, "mss", p.mss, "control");
    take(k, "r_min", p.r_min, "control");
    take(k, "r_max", p.r_max, "control");
    take(k, "owd_window", p.owd_window, "control");
  }

  if (j.contains("transport")) {
    const json& t = j["transport"];
    only_keys(t, "transport", {"mtu_payload", "pacing_headroom", "pacing_window", "queue_capacity", "loss_timeout"});
    take(t, "mtu_payload", c.transport.mtu_payload, "transport");
    take(t, "pacing_headroom", c.transport.pacing_headroom, "transport");
    take(t, "pacing_window", c.transport.pacing_window, "transport");
    take(t, "queue_capacity", c.transport.queue_capacity, "transport");
    take(t, "loss_timeout", c.transport.loss_timeout, "transport");
  }

  if (j.contains("baseline")) {
    const json& b = j["baseline"];
    only_keys(b, "baseline", {"q", "c"});
    take(b, "q", c.baseline_config.q, "baseline");
    take(b, "c", c.baseline_config.c, "baseline");
  }
  return c;
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), std::filesystem::path(path).parent_path().string());
}

std::string summary_json(const RunSummary& s) {
  json j;
  auto num = [](double v) -> json { return std::isfinite(v) ? json(v) : json(nullptr); };
  j["scenario"] = s.scenario;
  j["mode"] = to_string(s.mode);
  j["duration"] = num(s.duration);
  j["r_min"] = num(s.r_min);
  j["r_max"] = num(s.r_max);
  j["q_floor"] = s.q_floor;
  j["epsilon"] = num(s.epsilon);
  j["scans_generated"] = s.scans_generated;
  j["scans_delivered"] = s.scans_delivered;
  j["scans_dropped_sender"] = s.scans_dropped_sender;
  j["scans_incomplete"] = s.scans_incomplete;
  j["scans_lost"] = s.scans_lost;
  j["scans_pending"] = s.scans_pending;
  j["scans_unaccounted"] = s.scans_unaccounted;
  j["packets_sent"] = s.packets_sent;
  j["packets_delivered"] = s.packets_delivered;
  j["tail_drops"] = s.tail_drops;
  j["tail_drop_bursts"] = s.tail_drop_bursts;
  j["random_drops"] = s.random_drops;
  j["ce_marks"] = s.ce_marks;
  j["feedback_reports"] = s.feedback_reports;
  j["feedback_rejected"] = s.feedback_rejected;
  j["mean_queue_delay"] = num(s.mean_queue_delay);
  j["p95_queue_delay"] = num(s.p95_queue_delay);
  j["max_queue_delay"] = num(s.max_queue_delay);
  j["tracking_error"] = num(s.tracking_error);
  j["mean_enc_bitrate"] = num(s.mean_enc_bitrate);
  j["max_bif_ratio"] = num(s.max_bif_ratio);
  j["min_q_used"] = s.min_q_used;
  j["mean_ptp"] = num(s.mean_ptp);
  j["max_ptp"] = num(s.max_ptp);
  j["p95_mean_ptp"] = num(s.p95_mean_ptp);
  j["scans_over_epsilon"] = s.scans_over_epsilon;
  j["ledger"] = {{"link_in", s.link_in},
                 {"delivered", s.packets_delivered},
                 {"tail_dropped", s.tail_drops},
                 {"random_dropped", s.random_drops},
                 {"queued", s.link_queued},
                 {"in_flight", s.link_in_flight}};
  return j.dump(2) + "\n";
}

}  // namespace pcstream
