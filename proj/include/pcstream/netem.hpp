#pragma once

#include <cstdint>
#include <deque>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "pcstream/transport.hpp"

namespace pcstream {

// Piecewise-constant capacity: trace[i].bps holds from trace[i].t until the next point.
struct CapacityPoint {
  double t = 0.0;
  double bps = 0.0;
};

struct RandomWalkConfig {
  double start_bps = 10e6;
  double min_bps = 2e6;
  double max_bps = 12e6;
  double step_interval = 1.0;  // s
  double sigma = 0.1;          // relative step size (log-normal)
  double duration = 120.0;
  uint64_t seed = 1;
};

std::vector<CapacityPoint> read_capacity_csv(const std::string& path);
void write_capacity_csv(const std::string& path, const std::vector<CapacityPoint>& trace);
std::vector<CapacityPoint> random_walk_trace(const RandomWalkConfig& config);
std::vector<CapacityPoint> step_trace(std::initializer_list<CapacityPoint> points);

struct LinkConfig {
  std::vector<CapacityPoint> trace{{0.0, 10e6}};
  double prop_delay = 0.020;     // s, one way
  size_t queue_limit = 375000;   // bytes, including the packet in service
  double ce_threshold = 0.005;   // s of queuing before ECT(1) packets get CE
  double loss_rate = 0.0;        // random loss after serialization
  uint64_t seed = 1;

  void validate() const;
};

struct LinkLedger {
  uint64_t packets_in = 0;
  uint64_t bytes_in = 0;
  uint64_t tail_dropped = 0;
  uint64_t tail_dropped_bytes = 0;
  uint64_t random_dropped = 0;
  uint64_t random_dropped_bytes = 0;
  uint64_t delivered = 0;
  uint64_t delivered_bytes = 0;
  uint64_t ce_marked = 0;
  uint64_t queued = 0;       // accepted, not yet through the server
  uint64_t queued_bytes = 0;
  uint64_t in_flight = 0;    // serialized, still propagating
  uint64_t in_flight_bytes = 0;
};

struct Delivery {
  Packet packet;
  double at = 0.0;            // arrival time at the receiver
  double queue_delay = 0.0;   // waiting time before service began
  double enqueued_at = 0.0;
};

// Bottleneck: FIFO tail drop, serialization at the trace capacity, then a
// fixed propagation delay. Arrival order equals service order.
class Link {
 public:
  explicit Link(LinkConfig config);

  // Offers a packet at `now`. Returns false when it was tail-dropped.
  bool enqueue(Packet packet, double now);

  // Moves every packet whose arrival time is <= now out of the link.
  // Randomly lost packets are accounted for and, if `lost` is given, appended there.
  std::vector<Delivery> deliver(double now, std::vector<Packet>* lost = nullptr);
  // Arrival time of the next packet to leave, +inf if none.
  double next_delivery() const;

  double capacity_at(double t) const;
  // Bytes accepted but not yet fully serialized at `now`.
  size_t backlog_bytes(double now) const;
  // Time until the server goes idle.
  double backlog_delay(double now) const;

  // Refreshes the queued / in-flight split at `now` and returns the ledger.
  const LinkLedger& ledger(double now);
  const LinkConfig& config() const { return cfg_; }
  // Scan ids of every packet still inside the link, in service order.
  std::vector<uint32_t> scan_ids_inside() const;

  // Point in time at which `bits` finish serializing when service starts at `start`.
  double service_end(double start, double bits) const;

 private:
  struct Slot {
    Delivery d;
    double service_end;
    bool lost;
  };
  LinkConfig cfg_;
  std::mt19937_64 rng_;
  std::deque<Slot> slots_;  // service order
  double busy_until_ = 0.0;
  LinkLedger ledger_;
};

// Reverse path: clean, fixed delay.
struct FeedbackPath {
  double delay = 0.020;
  double deliver_at(double now) const { return now + delay; }
};

}  // namespace pcstream
