#include "pcstream/congestion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pcstream/error.hpp"

namespace pcstream {

namespace {

bool finite_pos(double v) { return std::isfinite(v) && v > 0.0; }

void decrease(CongestionState& s, const ControlParams& p, double factor, double now, CongestionSignal sig) {
  s.w_ref = std::max(p.w_min, s.w_ref * factor);
  s.last_decrease_time = now;
  s.slow_start = false;
  s.last_signal = sig;
  ++s.decreases;
}

// One decrease per smoothed RTT.
bool may_decrease(const CongestionState& s, double now) {
  return now - s.last_decrease_time >= s.srtt;
}

void track_owd(CongestionState& s, const ControlParams& p, double t, double owd) {
  while (!s.owd_min.empty() && s.owd_min.back().second >= owd) s.owd_min.pop_back();
  s.owd_min.emplace_back(t, owd);
  while (s.owd_min.front().first < t - p.owd_window) s.owd_min.pop_front();
  s.est_queue_delay = std::max(0.0, owd - s.owd_min.front().second);
}

}  // namespace

void ControlParams::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("control: ") + what);
  };
  need(overshoot_factor >= 1.0, "overshoot_factor must be >= 1");
  need(loss_beta > 0.0 && loss_beta < 1.0, "loss_beta must lie in (0, 1)");
  need(ce_beta > 0.0 && ce_beta * 1.5 < 1.0, "ce_beta must lie in (0, 1/1.5)");
  need(finite_pos(queue_delay_target), "queue_delay_target must be positive");
  need(finite_pos(increase_gain), "increase_gain must be positive");
  need(srtt_alpha > 0.0 && srtt_alpha <= 1.0, "srtt_alpha must lie in (0, 1]");
  need(finite_pos(w_min), "w_min must be positive");
  need(std::isfinite(w_max) && w_max >= w_min, "w_max must be >= w_min");
  need(w_init >= w_min && w_init <= w_max, "w_init must lie in [w_min, w_max]");
  need(finite_pos(mss), "mss must be positive");
  need(finite_pos(r_min), "r_min must be positive");
  need(std::isfinite(r_max) && r_max >= r_min, "r_max must be >= r_min");
  need(finite_pos(owd_window), "owd_window must be positive");
}

CongestionState make_congestion_state(const ControlParams& params) {
  params.validate();
  CongestionState s;
  s.w_ref = params.w_init;
  s.r_trg = target_bitrate(s, params);
  return s;
}

void update_srtt(CongestionState& state, const ControlParams& params, double rtt_sample) {
  if (!finite_pos(rtt_sample)) throw ProtocolError("rtt sample must be positive");
  if (state.srtt <= 0.0) {
    state.srtt = rtt_sample;
  } else {
    state.srtt = (1.0 - params.srtt_alpha) * state.srtt + params.srtt_alpha * rtt_sample;
  }
}

double target_bitrate(const CongestionState& state, const ControlParams& params) {
  if (state.srtt <= 0.0) return params.r_max;
  return std::clamp(8.0 * state.w_ref / state.srtt, params.r_min, params.r_max);
}

void on_feedback(CongestionState& state, const ControlParams& params, const FeedbackReport& report,
                 double now) {
  const FeedbackReport& prev = state.last_report;
  if (state.has_report) {
    if (report.cumulative_acked_bytes < prev.cumulative_acked_bytes ||
        report.cumulative_ce_marked_bytes < prev.cumulative_ce_marked_bytes ||
        report.cumulative_lost_packets < prev.cumulative_lost_packets ||
        report.highest_acked_seq < prev.highest_acked_seq) {
      throw ProtocolError("feedback counters regressed");
    }
  }
  if (report.cumulative_ce_marked_bytes > report.cumulative_acked_bytes) {
    throw ProtocolError("more CE-marked bytes than acked bytes");
  }
  const uint64_t base_acked = state.has_report ? prev.cumulative_acked_bytes : 0;
  const uint64_t base_ce = state.has_report ? prev.cumulative_ce_marked_bytes : 0;
  const uint32_t base_lost = state.has_report ? prev.cumulative_lost_packets : 0;
  const double acked = static_cast<double>(report.cumulative_acked_bytes - base_acked);
  const double ce = static_cast<double>(report.cumulative_ce_marked_bytes - base_ce);
  const uint32_t lost = report.cumulative_lost_packets - base_lost;
  const bool fresh = !state.has_report || report.echo_timestamp != prev.echo_timestamp;

  const double bif_before = state.bytes_in_flight;
  state.bytes_in_flight = std::max(0.0, state.bytes_in_flight - acked);
  if (fresh && acked > 0.0) {
    const double rtt = now - report.echo_timestamp;
    if (rtt > 0.0) update_srtt(state, params, rtt);
    track_owd(state, params, report.receiver_timestamp, report.receiver_timestamp - report.echo_timestamp);
  }
  state.last_report = report;
  state.has_report = true;
  state.last_ce_fraction = acked > 0.0 ? std::min(1.0, ce / acked) : 0.0;
  state.last_signal = CongestionSignal::kNone;

  if (lost > 0) {
    if (may_decrease(state, now)) decrease(state, params, 1.0 - params.loss_beta, now, CongestionSignal::kLoss);
  } else if (ce > 0.0) {
    if (may_decrease(state, now)) {
      const double scale = std::clamp(state.est_queue_delay / params.queue_delay_target, 0.5, 1.5);
      decrease(state, params, 1.0 - params.ce_beta * scale * state.last_ce_fraction, now,
               CongestionSignal::kCe);
    }
  } else if (acked > 0.0 && bif_before >= state.w_ref / 4.0) {
    if (state.slow_start) {
      state.w_ref += params.increase_gain * acked;
    } else {
      state.w_ref += params.increase_gain * acked * params.mss / state.w_ref;
    }
    state.w_ref = std::min(state.w_ref, params.w_max);
  }
  state.r_trg = target_bitrate(state, params);
}

void on_sender_loss(CongestionState& state, const ControlParams& params, double lost_bytes, double now) {
  release_bytes(state, lost_bytes);
  if (may_decrease(state, now)) decrease(state, params, 1.0 - params.loss_beta, now, CongestionSignal::kLoss);
  state.r_trg = target_bitrate(state, params);
}

void on_packet_sent(CongestionState& state, double bytes) { state.bytes_in_flight += bytes; }

void release_bytes(CongestionState& state, double bytes) {
  state.bytes_in_flight = std::max(0.0, state.bytes_in_flight - bytes);
}

bool can_send(const CongestionState& state, const ControlParams& params, double next_packet_bytes,
              bool frame_in_progress) {
  const double allowance = frame_in_progress ? params.overshoot_factor : 1.0;
  return state.bytes_in_flight + next_packet_bytes <= state.w_ref * allowance;
}

}  // namespace pcstream
