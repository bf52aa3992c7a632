#include "pcstream/netem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "pcstream/error.hpp"

namespace pcstream {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

void check_trace(const std::vector<CapacityPoint>& trace) {
  if (trace.empty()) throw ConfigError("capacity trace is empty");
  if (trace.front().t != 0.0) throw ConfigError("capacity trace must start at t = 0");
  for (size_t i = 0; i < trace.size(); ++i) {
    if (!std::isfinite(trace[i].bps) || trace[i].bps < 0.0) throw ConfigError("capacity must be finite and >= 0");
    if (i > 0 && !(trace[i].t > trace[i - 1].t)) throw ConfigError("capacity trace times must increase");
  }
}
}  // namespace

std::vector<CapacityPoint> read_capacity_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<CapacityPoint> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fs(line);
    CapacityPoint p;
    if (!(fs >> p.t)) {
      // Blank line or a header row.
      if (line.find_first_not_of(" \t\r") == std::string::npos || out.empty()) continue;
      throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    if (!(fs >> p.bps)) throw ConfigError(path + ":" + std::to_string(line_no) + ": missing capacity");
    out.push_back(p);
  }
  check_trace(out);
  return out;
}

void write_capacity_csv(const std::string& path, const std::vector<CapacityPoint>& trace) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << std::setprecision(17) << "t_seconds,capacity_bps\n";
  for (const auto& p : trace) out << p.t << "," << p.bps << "\n";
}

std::vector<CapacityPoint> random_walk_trace(const RandomWalkConfig& c) {
  if (!(c.min_bps > 0.0) || c.max_bps < c.min_bps || c.start_bps < c.min_bps || c.start_bps > c.max_bps) {
    throw ConfigError("random walk bounds must satisfy 0 < min <= start <= max");
  }
  if (!(c.step_interval > 0.0) || !(c.duration > 0.0) || c.sigma < 0.0) {
    throw ConfigError("random walk needs positive step_interval and duration");
  }
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> step(0.0, c.sigma);
  std::vector<CapacityPoint> out;
  double bps = c.start_bps;
  for (double t = 0.0; t < c.duration; t += c.step_interval) {
    out.push_back({t, bps});
    bps = std::clamp(bps * std::exp(step(rng)), c.min_bps, c.max_bps);
  }
  return out;
}

std::vector<CapacityPoint> step_trace(std::initializer_list<CapacityPoint> points) {
  std::vector<CapacityPoint> out(points);
  check_trace(out);
  return out;
}

void LinkConfig::validate() const {
  check_trace(trace);
  if (!(prop_delay >= 0.0) || !std::isfinite(prop_delay)) throw ConfigError("link: prop_delay must be >= 0");
  if (queue_limit == 0) throw ConfigError("link: queue_limit must be positive");
  if (!(ce_threshold >= 0.0)) throw ConfigError("link: ce_threshold must be >= 0");
  if (!(loss_rate >= 0.0 && loss_rate < 1.0)) throw ConfigError("link: loss_rate must lie in [0, 1)");
  const double peak = std::max_element(trace.begin(), trace.end(), [](const auto& a, const auto& b) {
                        return a.bps < b.bps;
                      })->bps;
  if (!(peak > 0.0)) throw ConfigError("link: capacity is zero everywhere");
  // A full queue must be able to hold more than the marking threshold.
  if (static_cast<double>(queue_limit) * 8.0 / peak <= ce_threshold) {
    throw ConfigError("link: queue_limit drains faster than ce_threshold");
  }
}

Link::Link(LinkConfig config) : cfg_(std::move(config)), rng_(cfg_.seed) { cfg_.validate(); }

double Link::capacity_at(double t) const {
  auto it = std::upper_bound(cfg_.trace.begin(), cfg_.trace.end(), t,
                             [](double v, const CapacityPoint& p) { return v < p.t; });
  if (it == cfg_.trace.begin()) return cfg_.trace.front().bps;
  return std::prev(it)->bps;
}

double Link::service_end(double start, double bits) const {
  auto it = std::upper_bound(cfg_.trace.begin(), cfg_.trace.end(), start,
                             [](double v, const CapacityPoint& p) { return v < p.t; });
  size_t i = it == cfg_.trace.begin() ? 0 : static_cast<size_t>(std::distance(cfg_.trace.begin(), it)) - 1;
  double t = start;
  double left = bits;
  for (;;) {
    const double rate = cfg_.trace[i].bps;
    const double seg_end = i + 1 < cfg_.trace.size() ? cfg_.trace[i + 1].t : kInf;
    if (rate > 0.0) {
      const double done = t + left / rate;
      if (done <= seg_end) return done;
      left -= (seg_end - t) * rate;
    } else if (seg_end == kInf) {
      return kInf;
    }
    t = seg_end;
    ++i;
  }
}

size_t Link::backlog_bytes(double now) const {
  size_t bytes = 0;
  for (auto it = slots_.rbegin(); it != slots_.rend() && it->service_end > now; ++it) {
    bytes += it->d.packet.wire_size();
  }
  return bytes;
}

double Link::backlog_delay(double now) const { return std::max(0.0, busy_until_ - now); }

bool Link::enqueue(Packet packet, double now) {
  const size_t size = packet.wire_size();
  ++ledger_.packets_in;
  ledger_.bytes_in += size;
  if (backlog_bytes(now) + size > cfg_.queue_limit) {
    ++ledger_.tail_dropped;
    ledger_.tail_dropped_bytes += size;
    return false;
  }
  const double start = std::max(now, busy_until_);
  const double wait = start - now;
  if (wait > cfg_.ce_threshold && packet.ecn == Ecn::kEct1) {
    packet.ecn = Ecn::kCe;
    ++ledger_.ce_marked;
  }
  const double end = service_end(start, static_cast<double>(size) * 8.0);
  busy_until_ = end;
  bool lost = false;
  if (cfg_.loss_rate > 0.0) lost = std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < cfg_.loss_rate;
  slots_.push_back({Delivery{std::move(packet), end + cfg_.prop_delay, wait, now}, end, lost});
  return true;
}

double Link::next_delivery() const { return slots_.empty() ? kInf : slots_.front().d.at; }

std::vector<uint32_t> Link::scan_ids_inside() const {
  std::vector<uint32_t> out;
  out.reserve(slots_.size());
  for (const auto& s : slots_) out.push_back(s.d.packet.scan_id);
  return out;
}

std::vector<Delivery> Link::deliver(double now, std::vector<Packet>* lost) {
  std::vector<Delivery> out;
  while (!slots_.empty() && slots_.front().d.at <= now) {
    Slot& s = slots_.front();
    if (s.lost) {
      ++ledger_.random_dropped;
      ledger_.random_dropped_bytes += s.d.packet.wire_size();
      if (lost) lost->push_back(std::move(s.d.packet));
    } else {
      ++ledger_.delivered;
      ledger_.delivered_bytes += s.d.packet.wire_size();
      out.push_back(std::move(s.d));
    }
    slots_.pop_front();
  }
  return out;
}

const LinkLedger& Link::ledger(double now) {
  ledger_.queued = ledger_.queued_bytes = 0;
  ledger_.in_flight = ledger_.in_flight_bytes = 0;
  for (const auto& s : slots_) {
    if (s.service_end > now) {
      ++ledger_.queued;
      ledger_.queued_bytes += s.d.packet.wire_size();
    } else {
      ++ledger_.in_flight;
      ledger_.in_flight_bytes += s.d.packet.wire_size();
    }
  }
  return ledger_;
}

}  // namespace pcstream
