#include "pcstream/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "pcstream/error.hpp"

namespace pcstream {

namespace {

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i)));
}

template <typename T>
T get(std::span<const uint8_t> in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DecodeError("truncated datagram");
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

int64_t to_ns(double seconds) { return static_cast<int64_t>(std::llround(seconds * 1e9)); }
double from_ns(int64_t ns) { return static_cast<double>(ns) * 1e-9; }

std::vector<uint8_t> serialize_packet(const Packet& p) {
  if (p.payload.size() > 0xFFFF) throw ConfigError("packet payload exceeds 65535 bytes");
  if (p.frag_count == 0 || p.frag_index >= p.frag_count) throw ConfigError("bad fragment index");
  std::vector<uint8_t> out;
  out.reserve(p.wire_size());
  put<uint32_t>(out, p.seq);
  put<uint32_t>(out, p.scan_id);
  put<uint16_t>(out, p.frag_index);
  put<uint16_t>(out, p.frag_count);
  put<uint64_t>(out, static_cast<uint64_t>(to_ns(p.send_time)));
  put<uint8_t>(out, static_cast<uint8_t>(p.ecn));
  put<uint16_t>(out, static_cast<uint16_t>(p.payload.size()));
  out.insert(out.end(), p.payload.begin(), p.payload.end());
  return out;
}

Packet parse_packet(std::span<const uint8_t> bytes) {
  size_t pos = 0;
  Packet p;
  p.seq = get<uint32_t>(bytes, pos);
  p.scan_id = get<uint32_t>(bytes, pos);
  p.frag_index = get<uint16_t>(bytes, pos);
  p.frag_count = get<uint16_t>(bytes, pos);
  p.send_time = from_ns(static_cast<int64_t>(get<uint64_t>(bytes, pos)));
  const uint8_t ecn = get<uint8_t>(bytes, pos);
  const uint16_t len = get<uint16_t>(bytes, pos);
  if (ecn > 3) throw DecodeError("bad ecn codepoint");
  if (p.frag_count == 0 || p.frag_index >= p.frag_count) throw DecodeError("bad fragment index");
  if (bytes.size() - pos != len) throw DecodeError("payload length mismatch");
  p.ecn = static_cast<Ecn>(ecn);
  p.payload.assign(bytes.begin() + static_cast<ptrdiff_t>(pos), bytes.end());
  return p;
}

std::vector<uint8_t> serialize_feedback(const FeedbackReport& r) {
  std::vector<uint8_t> out;
  out.reserve(kFeedbackBytes);
  put<uint32_t>(out, r.highest_acked_seq);
  put<uint64_t>(out, r.cumulative_acked_bytes);
  put<uint64_t>(out, r.cumulative_ce_marked_bytes);
  put<uint32_t>(out, r.cumulative_lost_packets);
  put<uint64_t>(out, static_cast<uint64_t>(to_ns(r.receiver_timestamp)));
  put<uint64_t>(out, static_cast<uint64_t>(to_ns(r.echo_timestamp)));
  return out;
}

FeedbackReport parse_feedback(std::span<const uint8_t> bytes) {
  if (bytes.size() != kFeedbackBytes) throw DecodeError("feedback must be 40 bytes");
  size_t pos = 0;
  FeedbackReport r;
  r.highest_acked_seq = get<uint32_t>(bytes, pos);
  r.cumulative_acked_bytes = get<uint64_t>(bytes, pos);
  r.cumulative_ce_marked_bytes = get<uint64_t>(bytes, pos);
  r.cumulative_lost_packets = get<uint32_t>(bytes, pos);
  r.receiver_timestamp = from_ns(static_cast<int64_t>(get<uint64_t>(bytes, pos)));
  r.echo_timestamp = from_ns(static_cast<int64_t>(get<uint64_t>(bytes, pos)));
  return r;
}

void TransportParams::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("transport: ") + what);
  };
  need(mtu_payload >= 64 && mtu_payload <= 0xFFFF, "mtu_payload must lie in [64, 65535]");
  need(pacing_headroom >= 1.0 && std::isfinite(pacing_headroom), "pacing_headroom must be >= 1");
  need(pacing_window > 0.0 && std::isfinite(pacing_window), "pacing_window must be positive");
  need(queue_capacity >= 1, "queue_capacity must be >= 1");
  need(min_pacing_rate > 0.0 && std::isfinite(min_pacing_rate), "min_pacing_rate must be positive");
  need(loss_timeout > 0.0, "loss_timeout must be positive");
  need(fragment_payload() >= 64, "min_pacing_rate too low for a 64-byte fragment");
}

size_t TransportParams::fragment_payload() const {
  const double budget = pacing_headroom * min_pacing_rate * pacing_window / 8.0;
  const double room = std::floor(budget) - static_cast<double>(kPacketHeaderBytes);
  if (room < 1.0) return 0;
  return std::min(mtu_payload, static_cast<size_t>(room));
}

std::vector<Packet> fragment_unit(const EncodedUnit& unit, size_t max_payload) {
  if (max_payload == 0) throw ConfigError("fragment size must be positive");
  const auto bytes = serialize_unit(unit);
  const size_t count = (bytes.size() + max_payload - 1) / max_payload;
  if (count > 0xFFFF) throw ConfigError("unit needs more than 65535 fragments");
  std::vector<Packet> out(count);
  for (size_t i = 0; i < count; ++i) {
    auto& p = out[i];
    p.scan_id = unit.scan_id;
    p.frag_index = static_cast<uint16_t>(i);
    p.frag_count = static_cast<uint16_t>(count);
    p.ecn = Ecn::kEct1;
    const size_t lo = i * max_payload;
    const size_t hi = std::min(bytes.size(), lo + max_payload);
    p.payload.assign(bytes.begin() + static_cast<ptrdiff_t>(lo), bytes.begin() + static_cast<ptrdiff_t>(hi));
  }
  return out;
}

Pacer::Pacer(double headroom, double window) : headroom_(headroom), window_(window) {}

double Pacer::budget_bytes(double rate_bps) const { return headroom_ * rate_bps * window_ / 8.0; }

void Pacer::expire(double now) {
  while (!sent_.empty() && sent_.front().first <= now - window_) sent_.pop_front();
}

double Pacer::earliest(double now, size_t bytes, double rate_bps) const {
  while (!sent_.empty() && sent_.front().first <= now - window_) sent_.pop_front();
  if (sent_.empty()) return now;
  // Spacing after the previous packet at the paced rate.
  const auto& last = sent_.back();
  double t = std::max(now, last.first + static_cast<double>(last.second) * 8.0 / (headroom_ * rate_bps));
  // Window bound: a record at time s leaves the window (t - W, t] once t >= s + W.
  const double budget = budget_bytes(rate_bps);
  double in_window = 0.0;
  for (const auto& r : sent_) {
    if (r.first > t - window_) in_window += static_cast<double>(r.second);
  }
  for (const auto& r : sent_) {
    if (in_window + static_cast<double>(bytes) <= budget) break;
    if (r.first > t - window_) {
      in_window -= static_cast<double>(r.second);
      t = std::max(t, r.first + window_);
      // s + W - W can round below s; step until the record has really left.
      while (r.first > t - window_) t = std::nextafter(t, kInf);
    }
  }
  return t;
}

void Pacer::record(double t, size_t bytes) {
  expire(t);
  sent_.emplace_back(t, bytes);
}

Sender::Sender(TransportParams transport, ControlParams control)
    : tp_(transport), cp_(control), pacer_(transport.pacing_headroom, transport.pacing_window) {
  tp_.validate();
  cp_.validate();
  cc_ = make_congestion_state(cp_);
}

std::optional<uint32_t> Sender::enqueue(EncodedUnit unit, double now) {
  std::optional<uint32_t> evicted;
  if (queue_.size() >= tp_.queue_capacity) {
    evicted = queue_.front().scan_id;
    queue_.pop_front();
    ++stats_.units_dropped;
  }
  queue_.push_back({unit.scan_id, fragment_unit(unit, tp_.fragment_payload()), now});
  ++stats_.units_enqueued;
  return evicted;
}

double Sender::head_age(double now) const {
  if (queue_.empty()) return 0.0;
  return now - queue_.front().enqueued_at;
}

uint64_t Sender::backlog_bytes() const {
  uint64_t b = 0;
  for (const auto& w : queue_) {
    for (const auto& f : w.frags) b += f.payload.size();
  }
  for (const auto& f : current_) b += f.payload.size();
  return b;
}

std::vector<uint32_t> Sender::pending_scan_ids() const {
  std::vector<uint32_t> out;
  if (!current_.empty()) out.push_back(current_.front().scan_id);
  for (const auto& w : queue_) out.push_back(w.scan_id);
  return out;
}

double Sender::pacing_rate() const { return tp_.congestion_gated ? cc_.r_trg : cp_.r_max; }

SendResult Sender::poll(double now) {
  SendResult res;
  res.next_attempt = kInf;
  const bool in_progress = !current_.empty();
  if (!in_progress && queue_.empty()) return res;

  size_t payload = 0;
  if (in_progress) {
    payload = current_.front().payload.size();
  } else {
    payload = queue_.front().frags.front().payload.size();
  }
  if (tp_.congestion_gated && !can_send(cc_, cp_, static_cast<double>(payload), in_progress)) {
    return res;  // wait for feedback
  }
  const size_t wire = payload + kPacketHeaderBytes;
  const double t = pacer_.earliest(now, wire, pacing_rate());
  if (t > now) {
    res.next_attempt = t;
    return res;
  }
  if (!in_progress) {
    auto frags = std::move(queue_.front().frags);
    queue_.pop_front();
    current_.assign(std::make_move_iterator(frags.begin()), std::make_move_iterator(frags.end()));
    ++stats_.units_started;
  }
  Packet p = std::move(current_.front());
  current_.pop_front();
  p.seq = next_seq_++;
  p.send_time = from_ns(to_ns(now));
  pacer_.record(now, p.wire_size());
  outstanding_.emplace(p.seq, Outstanding{p.payload.size(), now});
  outstanding_bytes_ += p.payload.size();
  on_packet_sent(cc_, static_cast<double>(p.payload.size()));
  ++stats_.packets_sent;
  stats_.bytes_sent += p.payload.size();
  stats_.wire_bytes_sent += p.wire_size();
  if (current_.empty()) ++stats_.units_completed;
  if (tp_.congestion_gated) {
    stats_.max_bif_ratio = std::max(stats_.max_bif_ratio, cc_.bytes_in_flight / cc_.w_ref);
  }
  res.packet = std::move(p);
  res.next_attempt = now;
  return res;
}

bool Sender::on_feedback(std::span<const uint8_t> wire, double now) {
  FeedbackReport r;
  try {
    r = parse_feedback(wire);
  } catch (const DecodeError&) {
    ++stats_.feedback_rejected;
    return false;
  }
  return on_feedback(r, now);
}

bool Sender::on_feedback(const FeedbackReport& report, double now) {
  const uint64_t prev_acked = cc_.has_report ? cc_.last_report.cumulative_acked_bytes : 0;
  const uint32_t prev_lost = cc_.has_report ? cc_.last_report.cumulative_lost_packets : 0;
  try {
    pcstream::on_feedback(cc_, cp_, report, now);
  } catch (const ProtocolError&) {
    ++stats_.feedback_rejected;
    return false;
  }
  const uint64_t acked = report.cumulative_acked_bytes - prev_acked;
  stats_.packets_lost += report.cumulative_lost_packets - prev_lost;
  if (report.cumulative_acked_bytes == 0) return true;
  // No reordering on the path: everything at or below highest_acked_seq
  // has either arrived or is gone.
  uint64_t removed = 0;
  while (!outstanding_.empty() && outstanding_.begin()->first <= report.highest_acked_seq) {
    removed += outstanding_.begin()->second.bytes;
    outstanding_.erase(outstanding_.begin());
    ++stats_.packets_acked;
  }
  outstanding_bytes_ -= removed;
  if (removed > acked) release_bytes(cc_, static_cast<double>(removed - acked));
  return true;
}

void Sender::check_timeouts(double now) {
  const double timeout = std::max(tp_.loss_timeout, 3.0 * cc_.srtt);
  uint64_t lost = 0;
  while (!outstanding_.empty() && outstanding_.begin()->second.sent_at < now - timeout) {
    lost += outstanding_.begin()->second.bytes;
    outstanding_.erase(outstanding_.begin());
    ++stats_.packets_lost;
  }
  if (lost == 0) return;
  outstanding_bytes_ -= lost;
  on_sender_loss(cc_, cp_, static_cast<double>(lost), now);
}

Receiver::Receiver(double reassembly_timeout) : reassembly_timeout_(reassembly_timeout) {}

std::optional<EncodedUnit> Receiver::receive(std::span<const uint8_t> wire, double now) {
  Packet p;
  try {
    p = parse_packet(wire);
  } catch (const DecodeError&) {
    ++stats_.malformed;
    return std::nullopt;
  }
  auto part_it = partial_.find(p.scan_id);
  const bool frag_seen = part_it != partial_.end() && p.frag_index < part_it->second.have.size() &&
                         part_it->second.have[p.frag_index];
  if (seen_seq_.count(p.seq) || completed_.count(p.scan_id) || frag_seen) {
    ++stats_.duplicates;
    return std::nullopt;
  }
  if (part_it != partial_.end() && part_it->second.frag_count != p.frag_count) {
    ++stats_.malformed;
    return std::nullopt;
  }
  ++stats_.packets;
  seen_seq_.insert(p.seq);
  // Without reordering only recent sequence numbers can repeat.
  while (seen_seq_.size() > 65536) seen_seq_.erase(seen_seq_.begin());
  ++unique_packets_;
  counters_.cumulative_acked_bytes += p.payload.size();
  if (p.ecn == Ecn::kCe) counters_.cumulative_ce_marked_bytes += p.payload.size();
  if (!has_packets_ || p.seq >= counters_.highest_acked_seq) {
    counters_.highest_acked_seq = p.seq;
    counters_.receiver_timestamp = now;
    counters_.echo_timestamp = p.send_time;
  }
  has_packets_ = true;
  const uint64_t expected = static_cast<uint64_t>(counters_.highest_acked_seq) + 1;
  counters_.cumulative_lost_packets =
      static_cast<uint32_t>(expected > unique_packets_ ? expected - unique_packets_ : 0);
  ++since_report_;
  dirty_ = true;

  if (part_it == partial_.end()) {
    Partial fresh;
    fresh.frag_count = p.frag_count;
    fresh.frags.resize(p.frag_count);
    fresh.have.assign(p.frag_count, false);
    fresh.first_seen = now;
    part_it = partial_.emplace(p.scan_id, std::move(fresh)).first;
  }
  Partial& part = part_it->second;
  part.have[p.frag_index] = true;
  part.frags[p.frag_index] = std::move(p.payload);
  ++part.received;
  if (part.received < part.frag_count) return std::nullopt;

  std::vector<uint8_t> bytes;
  for (const auto& f : part.frags) bytes.insert(bytes.end(), f.begin(), f.end());
  const uint32_t id = part_it->first;
  partial_.erase(part_it);
  completed_.insert(id);
  try {
    EncodedUnit unit = parse_unit(bytes);
    ++stats_.units_delivered;
    return unit;
  } catch (const DecodeError&) {
    ++stats_.corrupt_units;
    return std::nullopt;
  }
}

FeedbackReport Receiver::make_feedback(double now) {
  since_report_ = 0;
  last_report_time_ = now;
  dirty_ = false;
  return counters_;
}

bool Receiver::feedback_due(double now, double interval, size_t packet_threshold) const {
  if (!has_packets_) return false;
  if (since_report_ >= packet_threshold) return true;
  return now - last_report_time_ >= interval - 1e-12;
}

void Receiver::expire(double now) {
  for (auto it = partial_.begin(); it != partial_.end();) {
    if (it->second.first_seen < now - reassembly_timeout_) {
      ++stats_.units_abandoned;
      it = partial_.erase(it);
    } else {
      ++it;
    }
  }
}

}  // namespace pcstream
