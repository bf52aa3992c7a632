#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <utility>

namespace pcstream {

struct ControlParams {
  double overshoot_factor = 5.0;
  double loss_beta = 0.5;
  double ce_beta = 0.4;
  double queue_delay_target = 0.020;  // s
  double increase_gain = 1.0;
  double srtt_alpha = 0.1;
  double w_min = 3000.0;     // bytes
  double w_max = 1.0e6;      // bytes
  double w_init = 12000.0;   // bytes
  double mss = 1200.0;       // bytes, normalizes the additive increase
  double r_min = 3.0e6;      // bps
  double r_max = 10.0e6;     // bps
  double owd_window = 10.0;  // s, base one-way-delay min filter

  // Throws ConfigError.
  void validate() const;
};

// Sender-visible snapshot of the receiver's cumulative counters.
// receiver_timestamp is the arrival time of the newest packet and
// echo_timestamp its send time.
struct FeedbackReport {
  uint32_t highest_acked_seq = 0;
  uint64_t cumulative_acked_bytes = 0;
  uint64_t cumulative_ce_marked_bytes = 0;
  uint32_t cumulative_lost_packets = 0;
  double receiver_timestamp = 0.0;
  double echo_timestamp = 0.0;

  friend bool operator==(const FeedbackReport&, const FeedbackReport&) = default;
};

enum class CongestionSignal { kNone, kLoss, kCe };

struct CongestionState {
  double w_ref = 12000.0;
  double srtt = 0.0;  // 0 until the first sample
  double bytes_in_flight = 0.0;
  double last_decrease_time = -std::numeric_limits<double>::infinity();
  double r_trg = 0.0;
  bool slow_start = true;
  double est_queue_delay = 0.0;
  double last_ce_fraction = 0.0;
  CongestionSignal last_signal = CongestionSignal::kNone;
  uint64_t decreases = 0;

  bool has_report = false;
  FeedbackReport last_report;
  // (time, owd) pairs with increasing owd, for the windowed minimum.
  std::deque<std::pair<double, double>> owd_min;
};

CongestionState make_congestion_state(const ControlParams& params);

// RTT low-pass; rtt_sample must be > 0.
void update_srtt(CongestionState& state, const ControlParams& params, double rtt_sample);

// clamp(8 w_ref / srtt, r_min, r_max); r_max before the first RTT sample.
double target_bitrate(const CongestionState& state, const ControlParams& params);

// Throws ProtocolError when a counter regressed; the state is left untouched.
void on_feedback(CongestionState& state, const ControlParams& params, const FeedbackReport& report,
                 double now);

// Loss detected by the sender itself (packets it gave up on). Releases the
// bytes from the in-flight count and applies the loss response.
void on_sender_loss(CongestionState& state, const ControlParams& params, double lost_bytes, double now);

void on_packet_sent(CongestionState& state, double bytes);

// Lost-packet bytes the sender learned about from a report.
void release_bytes(CongestionState& state, double bytes);

bool can_send(const CongestionState& state, const ControlParams& params, double next_packet_bytes,
              bool frame_in_progress);

}  // namespace pcstream
