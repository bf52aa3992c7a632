#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "pcstream/codec.hpp"
#include "pcstream/congestion.hpp"

namespace pcstream {

enum class Ecn : uint8_t { kNotEct = 0, kEct1 = 1, kEct0 = 2, kCe = 3 };

// Wire layout (little endian):
//   u32 seq | u32 scan_id | u16 frag_index | u16 frag_count | u64 send_time_ns | u8 ecn | u16 len | payload
inline constexpr uint32_t kWireVersion = 1;
inline constexpr size_t kPacketHeaderBytes = 23;
// u32 highest_seq | u64 acked_bytes | u64 ce_bytes | u32 lost | u64 recv_time_ns | u64 echo_ns
inline constexpr size_t kFeedbackBytes = 40;

struct Packet {
  uint32_t seq = 0;
  uint32_t scan_id = 0;
  uint16_t frag_index = 0;
  uint16_t frag_count = 1;
  double send_time = 0.0;  // s, carried as integer ns
  Ecn ecn = Ecn::kEct1;
  std::vector<uint8_t> payload;

  size_t wire_size() const { return kPacketHeaderBytes + payload.size(); }
  friend bool operator==(const Packet&, const Packet&) = default;
};

std::vector<uint8_t> serialize_packet(const Packet& packet);
// Throws DecodeError on truncation, a bad length, a bad fragment index or ecn value.
Packet parse_packet(std::span<const uint8_t> bytes);

std::vector<uint8_t> serialize_feedback(const FeedbackReport& report);
FeedbackReport parse_feedback(std::span<const uint8_t> bytes);

int64_t to_ns(double seconds);
double from_ns(int64_t ns);

struct TransportParams {
  size_t mtu_payload = 1200;     // bytes of unit data per packet
  double pacing_headroom = 1.25;
  double pacing_window = 0.010;  // s
  size_t queue_capacity = 20;    // units waiting to be sent
  // Fragments are sized so one packet always fits the pacing budget at this rate.
  double min_pacing_rate = 3.0e6;
  double loss_timeout = 1.0;     // s; outstanding packets older than this are given up
  bool congestion_gated = true;  // false: ignore the window, pace only

  void validate() const;
  // Largest payload for which one packet fits the budget at min_pacing_rate.
  size_t fragment_payload() const;
};

// Splits an encoded unit (serialized with serialize_unit) into fragments.
std::vector<Packet> fragment_unit(const EncodedUnit& unit, size_t max_payload);

// Sliding-window pacer: the bytes released in any window of pacing_window
// seconds never exceed headroom * rate * window / 8.
class Pacer {
 public:
  Pacer(double headroom, double window);

  // Earliest time >= now at which `bytes` may go out at `rate_bps`.
  double earliest(double now, size_t bytes, double rate_bps) const;
  void record(double t, size_t bytes);
  double budget_bytes(double rate_bps) const;

 private:
  void expire(double now);
  double headroom_;
  double window_;
  mutable std::deque<std::pair<double, size_t>> sent_;
};

struct SenderStats {
  uint64_t units_enqueued = 0;
  uint64_t units_dropped = 0;  // evicted from a full queue
  uint64_t units_started = 0;
  uint64_t units_completed = 0;  // every fragment handed to the network
  uint64_t packets_sent = 0;
  uint64_t bytes_sent = 0;        // payload bytes
  uint64_t wire_bytes_sent = 0;
  uint64_t packets_acked = 0;
  uint64_t packets_lost = 0;      // reported lost or timed out
  uint64_t feedback_rejected = 0;
  double max_bif_ratio = 0.0;     // max over sends of bytes_in_flight / w_ref
};

struct SendResult {
  std::optional<Packet> packet;
  double next_attempt = 0.0;  // when it is worth asking again; +inf when idle or blocked on feedback
};

class Sender {
 public:
  Sender(TransportParams transport, ControlParams control);

  // Queues a unit; evicts the oldest waiting unit when full. Returns the id
  // of an evicted unit, if any.
  std::optional<uint32_t> enqueue(EncodedUnit unit, double now);

  // Releases at most one packet.
  SendResult poll(double now);

  // Applies a report. Malformed or regressed reports are counted and
  // ignored (returns false).
  bool on_feedback(std::span<const uint8_t> wire, double now);
  bool on_feedback(const FeedbackReport& report, double now);

  // Gives up on packets that have been outstanding longer than loss_timeout.
  void check_timeouts(double now);

  const CongestionState& congestion() const { return cc_; }
  const SenderStats& stats() const { return stats_; }
  const TransportParams& params() const { return tp_; }
  const ControlParams& control() const { return cp_; }
  size_t queue_depth() const { return queue_.size(); }
  // Payload bytes not yet handed to the network (waiting units plus the rest of the current one).
  uint64_t backlog_bytes() const;
  bool frame_in_progress() const { return !current_.empty(); }
  // Units not yet fully handed to the network: the one in progress, then the queue.
  std::vector<uint32_t> pending_scan_ids() const;
  double head_age(double now) const;
  double pacing_rate() const;
  // Payload bytes the sender believes are outstanding, from its own ledger.
  uint64_t outstanding_bytes() const { return outstanding_bytes_; }
  size_t outstanding_packets() const { return outstanding_.size(); }

 private:
  struct Waiting {
    uint32_t scan_id;
    std::vector<Packet> frags;
    double enqueued_at;
  };
  struct Outstanding {
    size_t bytes;
    double sent_at;
  };

  TransportParams tp_;
  ControlParams cp_;
  CongestionState cc_;
  Pacer pacer_;
  SenderStats stats_;
  std::deque<Waiting> queue_;
  std::deque<Packet> current_;
  uint32_t next_seq_ = 0;
  std::map<uint32_t, Outstanding> outstanding_;
  uint64_t outstanding_bytes_ = 0;
};

struct ReceiverStats {
  uint64_t packets = 0;  // accepted: not malformed, not duplicates
  uint64_t duplicates = 0;
  uint64_t malformed = 0;
  uint64_t units_delivered = 0;
  uint64_t units_abandoned = 0;  // partial reassemblies given up
  uint64_t corrupt_units = 0;    // reassembled bytes that failed to parse
};

class Receiver {
 public:
  explicit Receiver(double reassembly_timeout = 2.0);

  // Consumes one datagram; returns a unit once all of its fragments arrived.
  std::optional<EncodedUnit> receive(std::span<const uint8_t> wire, double now);

  FeedbackReport make_feedback(double now);

  // True when a report is owed: two packets since the last report, or
  // `interval` elapsed with something new to say.
  bool feedback_due(double now, double interval, size_t packet_threshold) const;
  // Drops partial units older than the reassembly timeout.
  void expire(double now);

  bool has_packets() const { return has_packets_; }
  const ReceiverStats& stats() const { return stats_; }
  const FeedbackReport& counters() const { return counters_; }

 private:
  struct Partial {
    uint16_t frag_count = 0;
    std::vector<std::vector<uint8_t>> frags;
    std::vector<bool> have;
    size_t received = 0;
    double first_seen = 0.0;
  };

  double reassembly_timeout_;
  FeedbackReport counters_;
  bool has_packets_ = false;
  uint64_t unique_packets_ = 0;
  std::set<uint32_t> seen_seq_;
  std::map<uint32_t, Partial> partial_;
  std::set<uint32_t> completed_;
  size_t since_report_ = 0;
  double last_report_time_ = 0.0;
  bool dirty_ = false;
  ReceiverStats stats_;
};

}  // namespace pcstream
