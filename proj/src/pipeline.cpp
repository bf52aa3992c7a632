#include "pcstream/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "pcstream/error.hpp"
#include "pcstream/scan_io.hpp"

namespace pcstream {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class ScanFeed {
 public:
  explicit ScanFeed(const SourceSpec& spec) : spec_(spec), synth_(spec.synthetic) {
    if (spec.directory.empty()) return;
    namespace fs = std::filesystem;
    if (!fs::is_directory(spec.directory)) throw ConfigError("scan directory not found: " + spec.directory);
    for (const auto& e : fs::directory_iterator(spec.directory)) {
      if (e.is_regular_file()) files_.push_back(e.path().string());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw ConfigError("scan directory is empty: " + spec.directory);
  }

  // nullopt once a non-looping directory runs out.
  std::optional<PointCloudScan> next(double t, uint32_t id) {
    if (files_.empty()) return synth_.generate(t, id);
    if (index_ >= files_.size()) {
      if (!spec_.loop) return std::nullopt;
      index_ = 0;
    }
    const std::string& path = files_[index_++];
    PointCloudScan scan;
    if (std::filesystem::path(path).extension() == ".pcs") {
      scan = read_scan_file(path);
    } else {
      scan = read_ascii_file(path, points_ ? points_ : spec_.points);
    }
    if (points_ == 0) points_ = scan.size();
    if (scan.size() != points_) {
      throw ConfigError(path + ": scan has " + std::to_string(scan.size()) + " points, expected " +
                        std::to_string(points_));
    }
    scan.scan_id = id;
    return scan;
  }

 private:
  SourceSpec spec_;
  SyntheticScanSource synth_;
  std::vector<std::string> files_;
  size_t index_ = 0;
  size_t points_ = 0;
};

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double rank = p * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(rank));
  const size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (rank - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

[[noreturn]] void violated(double t, const std::string& what) {
  std::ostringstream os;
  os << "invariant violated at t=" << t << ": " << what;
  throw InvariantViolation(os.str());
}

}  // namespace

RunMode parse_mode(const std::string& name) {
  if (name == "adaptive") return RunMode::kAdaptive;
  if (name == "baseline") return RunMode::kBaseline;
  throw ConfigError("unknown mode '" + name + "' (expected adaptive or baseline)");
}

std::string to_string(RunMode mode) { return mode == RunMode::kBaseline ? "baseline" : "adaptive"; }

std::string to_string(ScanFate fate) {
  switch (fate) {
    case ScanFate::kDelivered: return "delivered";
    case ScanFate::kEvicted: return "evicted";
    case ScanFate::kLost: return "lost";
    case ScanFate::kPending: return "pending";
    default: return "unaccounted";
  }
}

void ScenarioConfig::validate() const {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw ConfigError("duration must be positive");
  if (!(source.synthetic.scan_hz > 0.0)) throw ConfigError("scan_hz must be positive");
  if (!(metrics_interval > 0.0)) throw ConfigError("metrics_interval must be positive");
  if (!(feedback_interval > 0.0)) throw ConfigError("feedback_interval must be positive");
  if (feedback_packets == 0) throw ConfigError("feedback_packets must be >= 1");
  if (!(encoder_window > 0.0)) throw ConfigError("encoder_window must be positive");
  if (!(bias_gain >= 0.0 && bias_gain <= 1.0)) throw ConfigError("bias_gain must lie in [0, 1]");
  if (!(config_bias_gain >= 0.0 && config_bias_gain <= 1.0)) {
    throw ConfigError("config_bias_gain must lie in [0, 1]");
  }
  if (!(backlog_drain_time >= 0.0)) throw ConfigError("backlog_drain_time must be >= 0");
  if (!(convergence_guard >= 0.0)) throw ConfigError("convergence_guard must be >= 0");
  if (!baseline_config.valid()) throw ConfigError("baseline config q/c out of range");
  link.validate();
  control.validate();
  transport.validate();
}

bool converged_at(const ScenarioConfig& config, double t) {
  if (t < config.convergence_guard) return false;
  const auto& tr = config.link.trace;
  for (size_t i = 1; i < tr.size(); ++i) {
    // Small wiggles (random walks) do not reset convergence.
    const double before = tr[i - 1].bps, after = tr[i].bps;
    if (std::fabs(after - before) < 0.25 * std::max(before, after)) continue;
    const double c = tr[i].t;
    if (t >= c && t < c + config.convergence_guard) return false;
  }
  return true;
}

RunResult run_scenario(const ScenarioConfig& cfg_in, const RateControlInputs* inputs) {
  ScenarioConfig cfg = cfg_in;
  const bool adaptive = cfg.mode == RunMode::kAdaptive;
  ConfigFloor floor;
  if (adaptive) {
    if (!inputs) throw ConfigError("adaptive run needs a rate model and rate bounds");
    cfg.control.r_min = inputs->bounds.r_min;
    cfg.control.r_max = inputs->bounds.r_max;
    floor = inputs->bounds.floor_config;
    cfg.transport.congestion_gated = true;
    cfg.transport.min_pacing_rate = cfg.control.r_min;
  } else {
    cfg.transport.congestion_gated = false;
    cfg.transport.min_pacing_rate = cfg.control.r_max;
  }
  cfg.validate();

  ScanFeed feed(cfg.source);
  Sender sender(cfg.transport, cfg.control);
  Receiver receiver(cfg.reassembly_timeout);
  Link link(cfg.link);
  FeedbackPath reverse{cfg.link.prop_delay};

  RunResult out;
  RunSummary& sum = out.summary;
  sum.scenario = cfg.name;
  sum.mode = cfg.mode;
  sum.duration = cfg.duration;
  sum.r_min = cfg.control.r_min;
  sum.r_max = cfg.control.r_max;
  sum.q_floor = adaptive ? floor.min_q : cfg.baseline_config.q;
  sum.epsilon = adaptive ? inputs->bounds.epsilon : 0.0;
  sum.min_q_used = kMaxQuantBits;

  std::optional<ConfigGrid> grid;
  ConfigGrid corrected;
  std::vector<double> config_bias;
  std::map<uint32_t, PointCloudScan> originals;
  std::map<uint32_t, size_t> record_of;
  std::set<uint32_t> delivered_ids, evicted_ids, lost_ids;
  std::deque<std::pair<double, uint64_t>> enc_window;  // (capture time, payload bits)
  uint64_t enc_window_bits = 0;
  std::deque<std::pair<double, std::vector<uint8_t>>> reverse_queue;
  std::vector<double> interval_ptp;
  CompressionConfig last_config{0, 0};
  uint64_t prev_acked = 0, prev_ce = 0;
  double rate_bias = 1.0;  // actual / predicted bits, smoothed
  std::deque<std::pair<double, size_t>> pace_log;
  uint64_t pace_bytes = 0;

  const double scan_period = 1.0 / cfg.source.synthetic.scan_hz;
  uint64_t scan_k = 0, metric_k = 1, fb_k = 1;
  double next_send = kInf;
  bool source_done = false;
  const double overshoot = cfg.control.overshoot_factor;

  auto scan_time = [&] { return static_cast<double>(scan_k) * scan_period; };
  auto metric_time = [&] { return static_cast<double>(metric_k) * cfg.metrics_interval; };
  auto fb_time = [&] { return static_cast<double>(fb_k) * cfg.feedback_interval; };

  auto send_feedback = [&](double t) {
    reverse_queue.emplace_back(reverse.deliver_at(t), serialize_feedback(receiver.make_feedback(t)));
    ++sum.feedback_reports;
  };

  auto pump_sender = [&](double t) {
    for (;;) {
      SendResult r = sender.poll(t);
      if (!r.packet) {
        next_send = r.next_attempt;
        return;
      }
      if (adaptive) {
        const auto& cc = sender.congestion();
        if (cc.bytes_in_flight > overshoot * cc.w_ref * (1.0 + 1e-12)) {
          violated(t, "bytes_in_flight " + std::to_string(cc.bytes_in_flight) + " exceeds " +
                          std::to_string(overshoot) + " w_ref " + std::to_string(cc.w_ref));
        }
      }
      // Sliding-window pacing bound, re-checked from the send log.
      while (!pace_log.empty() && pace_log.front().first <= t - cfg.transport.pacing_window) {
        pace_bytes -= pace_log.front().second;
        pace_log.pop_front();
      }
      pace_log.emplace_back(t, r.packet->wire_size());
      pace_bytes += r.packet->wire_size();
      const double budget =
          cfg.transport.pacing_headroom * sender.pacing_rate() * cfg.transport.pacing_window / 8.0;
      if (static_cast<double>(pace_bytes) > budget * (1.0 + 1e-9)) {
        violated(t, "pacing window holds " + std::to_string(pace_bytes) + " bytes, budget " +
                        std::to_string(budget));
      }
      const uint32_t sid = r.packet->scan_id;
      if (!link.enqueue(std::move(*r.packet), t)) {
        out.tail_drop_times.push_back(t);
        lost_ids.insert(sid);
      }
    }
  };

  auto on_scan = [&](double t) {
    const uint32_t id = static_cast<uint32_t>(scan_k);
    auto scan = feed.next(t, id);
    if (!scan) {
      source_done = true;
      return;
    }
    ++sum.scans_generated;
    CompressionConfig config = cfg.baseline_config;
    double r_trg = sender.pacing_rate();
    if (adaptive) {
      if (!grid) {
        grid = ConfigGrid::predicted(inputs->model, static_cast<int64_t>(scan->size()));
        corrected = *grid;
        config_bias.assign(grid->entries.size(), 1.0);
      }
      r_trg = sender.congestion().r_trg;
      double aim = r_trg;
      if (cfg.backlog_drain_time > 0.0) {
        aim -= 8.0 * static_cast<double>(sender.backlog_bytes()) / cfg.backlog_drain_time;
        aim = std::max(aim, 0.5 * r_trg);
      }
      for (size_t i = 0; i < grid->entries.size(); ++i) {
        corrected.predicted_bps[i] = grid->predicted_bps[i] * rate_bias * config_bias[i];
      }
      config = select_config(corrected, aim, floor);
      if (config.q < floor.min_q) violated(t, "selected q below the distortion floor");
    }
    EncodedUnit unit = encode(*scan, config, cfg.codec);
    unit.scan_id = id;
    if (adaptive) {
      // Track how far the model is off on this source, overall and per config.
      const size_t gi = static_cast<size_t>(grid_index(config));
      const double predicted = grid->predicted_bps[gi];
      const double actual = static_cast<double>(unit.payload_bits) * cfg.source.synthetic.scan_hz;
      const double g = cfg.bias_gain, l = cfg.config_bias_gain;
      rate_bias = std::clamp((1.0 - g) * rate_bias + g * actual / (predicted * config_bias[gi]), 0.5, 2.0);
      config_bias[gi] = std::clamp((1.0 - l) * config_bias[gi] + l * actual / (predicted * rate_bias), 0.5, 2.0);
    }
    last_config = unit.config_used;
    sum.min_q_used = std::min(sum.min_q_used, unit.config_used.q);
    enc_window.emplace_back(t, unit.payload_bits);
    enc_window_bits += unit.payload_bits;

    ScanRecord rec;
    rec.scan_id = id;
    rec.captured_at = t;
    rec.config = unit.config_used;
    rec.payload_bits = unit.payload_bits;
    rec.r_trg = r_trg;
    record_of[id] = out.scans.size();
    out.scans.push_back(rec);
    originals.emplace(id, std::move(*scan));

    if (auto evicted = sender.enqueue(std::move(unit), t)) {
      originals.erase(*evicted);
      evicted_ids.insert(*evicted);
    }
    next_send = t;
  };

  auto on_deliveries = [&](double t) {
    std::vector<Packet> dropped;
    auto arrivals = link.deliver(t, &dropped);
    for (const auto& p : dropped) lost_ids.insert(p.scan_id);
    for (Delivery& d : arrivals) {
      out.packet_queue_delays.emplace_back(d.enqueued_at, d.queue_delay);
      const auto wire = serialize_packet(d.packet);
      auto unit = receiver.receive(wire, t);
      if (!unit) {
        if (receiver.feedback_due(t, cfg.feedback_interval, cfg.feedback_packets)) send_feedback(t);
        continue;
      }
      if (!delivered_ids.insert(unit->scan_id).second) violated(t, "scan delivered twice");
      auto it = originals.find(unit->scan_id);
      auto rit = record_of.find(unit->scan_id);
      if (it == originals.end() || rit == record_of.end()) violated(t, "delivered scan was never sent");
      const ResidualStats st = residual(it->second, decode(*unit));
      originals.erase(it);
      ScanRecord& rec = out.scans[rit->second];
      rec.delivered_at = t;
      rec.mean_ptp = st.mean_ptp;
      rec.max_ptp = st.max_ptp;
      interval_ptp.push_back(st.mean_ptp);
      if (receiver.feedback_due(t, cfg.feedback_interval, cfg.feedback_packets)) send_feedback(t);
    }
  };

  auto check_ledger = [&](double t) {
    const LinkLedger& lg = link.ledger(t);
    const uint64_t accounted = lg.delivered + lg.tail_dropped + lg.random_dropped + lg.queued + lg.in_flight;
    if (sender.stats().packets_sent != lg.packets_in || lg.packets_in != accounted) {
      violated(t, "packet ledger does not balance: sent " + std::to_string(sender.stats().packets_sent) +
                      ", accounted " + std::to_string(accounted));
    }
    const auto& rs = receiver.stats();
    if (rs.packets + rs.duplicates + rs.malformed != lg.delivered) {
      violated(t, "receiver count differs from link deliveries");
    }
    if (receiver.stats().duplicates != 0) violated(t, "duplicate packet on a duplicate-free path");
  };

  auto on_metrics = [&](double t) {
    check_ledger(t);
    while (!enc_window.empty() && enc_window.front().first <= t - cfg.encoder_window) {
      enc_window_bits -= enc_window.front().second;
      enc_window.pop_front();
    }
    const auto& cc = sender.congestion();
    const auto& lg = link.ledger(t);
    const auto& rc = receiver.counters();
    MetricsRow row;
    row.t = t;
    row.w_ref = cc.w_ref;
    row.bytes_in_flight = cc.bytes_in_flight;
    row.srtt = cc.srtt;
    row.est_queue_delay = cc.est_queue_delay;
    row.r_trg = adaptive ? cc.r_trg : sender.pacing_rate();
    if (adaptive && !(row.r_trg >= cfg.control.r_min && row.r_trg <= cfg.control.r_max)) {
      violated(t, "r_trg " + std::to_string(row.r_trg) + " outside [r_min, r_max]");
    }
    row.enc_bitrate = static_cast<double>(enc_window_bits) / cfg.encoder_window;
    row.link_capacity = link.capacity_at(t);
    row.link_queue_delay = link.backlog_delay(t);
    row.q_used = last_config.q;
    row.c_used = last_config.c;
    row.sender_queue_depth = sender.queue_depth();
    row.scans_delivered = receiver.stats().units_delivered;
    row.scans_dropped = sender.stats().units_dropped + receiver.stats().units_abandoned +
                        receiver.stats().corrupt_units;
    const uint64_t d_acked = rc.cumulative_acked_bytes - prev_acked;
    const uint64_t d_ce = rc.cumulative_ce_marked_bytes - prev_ce;
    prev_acked = rc.cumulative_acked_bytes;
    prev_ce = rc.cumulative_ce_marked_bytes;
    row.ce_fraction = d_acked ? static_cast<double>(d_ce) / static_cast<double>(d_acked) : 0.0;
    if (interval_ptp.empty()) {
      row.mean_ptp_of_delivered = std::numeric_limits<double>::quiet_NaN();
    } else {
      double s = 0.0;
      for (double v : interval_ptp) s += v;
      row.mean_ptp_of_delivered = s / static_cast<double>(interval_ptp.size());
      interval_ptp.clear();
    }
    row.link_queue_bytes = link.backlog_bytes(t);
    row.link_tail_drops = lg.tail_dropped;
    row.link_ce_marks = lg.ce_marked;
    row.pacing_rate = sender.pacing_rate();
    out.rows.push_back(row);
  };

  auto on_fb_timer = [&](double t) {
    if (receiver.feedback_due(t, cfg.feedback_interval, cfg.feedback_packets)) send_feedback(t);
    receiver.expire(t);
    if (adaptive) {
      sender.check_timeouts(t);
      next_send = std::min(next_send, t);
    }
    // Originals of scans that can no longer arrive.
    while (!originals.empty()) {
      const auto it = originals.begin();
      const double captured = out.scans[record_of[it->first]].captured_at;
      if (captured >= t - 20.0) break;
      originals.erase(it);
    }
  };

  // Sources in tie-break order at equal times.
  enum Source { kDeliver, kFeedbackArrival, kScan, kSend, kFbTimer, kMetrics, kNone };
  for (;;) {
    double t_next[kNone];
    t_next[kDeliver] = link.next_delivery();
    t_next[kFeedbackArrival] = reverse_queue.empty() ? kInf : reverse_queue.front().first;
    t_next[kScan] = source_done ? kInf : scan_time();
    t_next[kSend] = next_send;
    t_next[kFbTimer] = fb_time();
    t_next[kMetrics] = metric_time();
    int which = kDeliver;
    for (int s = 1; s < kNone; ++s) {
      if (t_next[s] < t_next[which]) which = s;
    }
    const double t = t_next[which];
    if (t > cfg.duration + 1e-9) break;
    switch (which) {
      case kDeliver:
        on_deliveries(t);
        break;
      case kFeedbackArrival: {
        auto bytes = std::move(reverse_queue.front().second);
        reverse_queue.pop_front();
        if (adaptive) {
          sender.on_feedback(bytes, t);
          next_send = std::min(next_send, t);
        }
        break;
      }
      case kScan:
        if (t < cfg.duration) {
          on_scan(t);
        } else {
          source_done = true;
        }
        ++scan_k;
        break;
      case kSend:
        pump_sender(t);
        break;
      case kFbTimer:
        on_fb_timer(t);
        ++fb_k;
        break;
      case kMetrics:
        on_metrics(t);
        ++metric_k;
        break;
      default:
        break;
    }
  }

  const double t_end = cfg.duration;
  check_ledger(t_end);
  const LinkLedger& lg = link.ledger(t_end);
  const auto& ss = sender.stats();
  const auto& rs = receiver.stats();
  sum.scans_delivered = rs.units_delivered;
  sum.scans_dropped_sender = ss.units_dropped;
  sum.scans_incomplete = rs.units_abandoned + rs.corrupt_units;
  sum.packets_sent = ss.packets_sent;
  sum.packets_delivered = lg.delivered;
  sum.tail_drops = lg.tail_dropped;
  sum.random_drops = lg.random_dropped;
  sum.ce_marks = lg.ce_marked;
  sum.feedback_rejected = ss.feedback_rejected;
  sum.max_bif_ratio = ss.max_bif_ratio;
  sum.link_in = lg.packets_in;
  sum.link_queued = lg.queued;
  sum.link_in_flight = lg.in_flight;
  if (sum.scans_generated == 0) sum.min_q_used = 0;

  std::set<uint32_t> pending;
  for (uint32_t id : sender.pending_scan_ids()) pending.insert(id);
  for (uint32_t id : link.scan_ids_inside()) pending.insert(id);
  for (auto& rec : out.scans) {
    const uint32_t id = rec.scan_id;
    const bool delivered = delivered_ids.count(id) > 0;
    const bool evicted = evicted_ids.count(id) > 0;
    const bool lost = lost_ids.count(id) > 0;
    if (delivered) {
      rec.fate = evicted || lost ? ScanFate::kUnaccounted : ScanFate::kDelivered;
    } else if (evicted) {
      rec.fate = lost ? ScanFate::kUnaccounted : ScanFate::kEvicted;
    } else if (lost) {
      rec.fate = ScanFate::kLost;
    } else if (pending.count(id)) {
      rec.fate = ScanFate::kPending;
    }
    switch (rec.fate) {
      case ScanFate::kLost: ++sum.scans_lost; break;
      case ScanFate::kPending: ++sum.scans_pending; break;
      case ScanFate::kUnaccounted: ++sum.scans_unaccounted; break;
      default: break;
    }
  }

  double last_drop = -kInf;
  for (double td : out.tail_drop_times) {
    if (td - last_drop > 0.1) ++sum.tail_drop_bursts;
    last_drop = td;
  }

  std::vector<double> qd;
  for (const auto& [start, wait] : out.packet_queue_delays) {
    if (converged_at(cfg, start)) qd.push_back(wait);
  }
  if (!qd.empty()) {
    double s = 0.0;
    for (double v : qd) s += v;
    sum.mean_queue_delay = s / static_cast<double>(qd.size());
    sum.p95_queue_delay = percentile(qd, 0.95);
    sum.max_queue_delay = *std::max_element(qd.begin(), qd.end());
  }

  double te = 0.0, enc = 0.0;
  size_t n_conv = 0;
  for (const auto& r : out.rows) {
    enc += r.enc_bitrate;
    if (!converged_at(cfg, r.t) || !(r.link_capacity > 0.0)) continue;
    te += std::fabs(r.enc_bitrate - r.link_capacity) / r.link_capacity;
    ++n_conv;
  }
  if (n_conv) sum.tracking_error = te / static_cast<double>(n_conv);
  if (!out.rows.empty()) sum.mean_enc_bitrate = enc / static_cast<double>(out.rows.size());

  std::vector<double> ptp;
  for (const auto& s : out.scans) {
    if (s.delivered_at < 0.0) continue;
    ptp.push_back(s.mean_ptp);
    sum.max_ptp = std::max(sum.max_ptp, s.max_ptp);
    if (adaptive && s.mean_ptp > sum.epsilon) ++sum.scans_over_epsilon;
  }
  if (!ptp.empty()) {
    double s = 0.0;
    for (double v : ptp) s += v;
    sum.mean_ptp = s / static_cast<double>(ptp.size());
    sum.p95_mean_ptp = percentile(ptp, 0.95);
  }
  return out;
}

namespace {

void fmt(std::string& s, double v) {
  char buf[40];
  if (std::isnan(v)) {
    s += "nan";
    return;
  }
  std::snprintf(buf, sizeof buf, "%.9g", v);
  s += buf;
}

void fmt(std::string& s, uint64_t v) { s += std::to_string(v); }
void fmt(std::string& s, int v) { s += std::to_string(v); }

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s =
      "# pcstream metrics v1\n"
      "t,w_ref,bytes_in_flight,srtt,est_queue_delay,r_trg,enc_bitrate,link_capacity,link_queue_delay,"
      "q_used,c_used,sender_queue_depth,scans_delivered,scans_dropped,ce_fraction,mean_ptp_of_delivered,"
      "link_queue_bytes,link_tail_drops,link_ce_marks,pacing_rate\n";
  for (const auto& r : rows) {
    auto col = [&](auto v, bool last = false) {
      fmt(s, v);
      s += last ? '\n' : ',';
    };
    col(r.t);
    col(r.w_ref);
    col(r.bytes_in_flight);
    col(r.srtt);
    col(r.est_queue_delay);
    col(r.r_trg);
    col(r.enc_bitrate);
    col(r.link_capacity);
    col(r.link_queue_delay);
    col(r.q_used);
    col(r.c_used);
    col(r.sender_queue_depth);
    col(r.scans_delivered);
    col(r.scans_dropped);
    col(r.ce_fraction);
    col(r.mean_ptp_of_delivered);
    col(r.link_queue_bytes);
    col(r.link_tail_drops);
    col(r.link_ce_marks);
    col(r.pacing_rate, true);
  }
  return s;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) { out << metrics_csv(rows); }

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  write_metrics_csv(out, rows);
  if (!out) throw ConfigError("short write to " + path);
}

void write_scans_csv(const std::string& path, const std::vector<ScanRecord>& scans) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  std::string s = "scan_id,captured_at,q,c,payload_bits,r_trg,delivered_at,mean_ptp,max_ptp,fate\n";
  for (const auto& r : scans) {
    fmt(s, static_cast<uint64_t>(r.scan_id));
    s += ',';
    fmt(s, r.captured_at);
    s += ',';
    fmt(s, r.config.q);
    s += ',';
    fmt(s, r.config.c);
    s += ',';
    fmt(s, r.payload_bits);
    s += ',';
    fmt(s, r.r_trg);
    s += ',';
    fmt(s, r.delivered_at);
    s += ',';
    fmt(s, r.mean_ptp);
    s += ',';
    fmt(s, r.max_ptp);
    s += ',';
    s += to_string(r.fate);
    s += '\n';
  }
  out << s;
}

std::vector<PointCloudScan> generate_corpus(const ScanSourceConfig& source, size_t scans, double spacing) {
  if (scans == 0) throw ConfigError("corpus needs at least one scan");
  if (!(spacing > 0.0)) throw ConfigError("corpus spacing must be positive");
  SyntheticScanSource src(source);
  std::vector<PointCloudScan> out;
  out.reserve(scans);
  for (size_t k = 0; k < scans; ++k) out.push_back(src.generate(static_cast<double>(k) * spacing, static_cast<uint32_t>(k)));
  return out;
}

std::vector<RateSample> samples_from_table(const ResidualTable& table) {
  std::vector<RateSample> out;
  out.reserve(table.rows.size());
  for (const auto& r : table.rows) out.push_back({r.config.q, r.config.c, table.n_points, r.measured_bps});
  return out;
}

Calibration run_calibration(const CalibrationSpec& spec) {
  Calibration cal;
  const auto corpus = generate_corpus(spec.source, spec.scans, spec.spacing);
  CalibrationOptions opt;
  opt.scan_hz = spec.source.scan_hz;
  opt.codec = spec.codec;
  opt.corpus_id = to_string(spec.source.environment) + "-seed" + std::to_string(spec.source.seed);
  cal.table = calibrate(corpus, ConfigGrid::full(), opt);
  if (spec.train_duration > 0.0) {
    TrainingCorpusConfig tc;
    tc.source = spec.source;
    tc.duration = spec.train_duration;
    tc.config_seed = spec.config_seed;
    tc.codec = spec.codec;
    cal.samples = sample_rates(tc);
  } else {
    cal.samples = samples_from_table(cal.table);
  }
  cal.model = fit(cal.samples, spec.source.scan_hz);
  return cal;
}

}  // namespace pcstream
