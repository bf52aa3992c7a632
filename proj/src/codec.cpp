#include "pcstream/codec.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>

#include "bitstream.hpp"
#include "pcstream/error.hpp"
#include "range_coder.hpp"

namespace pcstream {

using detail::BitReader;
using detail::BitWriter;
using detail::ByteReader;
using detail::ByteWriter;

double BoundingBox::max_extent() const {
  return std::max({extent(0), extent(1), extent(2)});
}

double BoundingBox::diagonal() const {
  return std::sqrt(extent(0) * extent(0) + extent(1) * extent(1) + extent(2) * extent(2));
}

bool BoundingBox::contains(const Point3& p) const {
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(p[a]) || p[a] < double(min[a]) || p[a] > double(max[a])) return false;
  }
  return true;
}

BoundingBox BoundingBox::tight(std::span<const Point3> points) {
  BoundingBox box;
  if (points.empty()) return box;
  for (int a = 0; a < 3; ++a) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : points) {
      lo = std::min(lo, p[a]);
      hi = std::max(hi, p[a]);
    }
    float flo = static_cast<float>(lo);
    if (double(flo) > lo) flo = std::nextafter(flo, -std::numeric_limits<float>::infinity());
    float fhi = static_cast<float>(hi);
    if (double(fhi) < hi) fhi = std::nextafter(fhi, std::numeric_limits<float>::infinity());
    if (fhi <= flo) fhi = std::nextafter(flo, std::numeric_limits<float>::infinity());
    box.min[a] = flo;
    box.max[a] = fhi;
  }
  return box;
}

size_t PointCloudScan::valid_count() const {
  if (padded.empty()) return points.size();
  return static_cast<size_t>(std::count(padded.begin(), padded.end(), uint8_t{0}));
}

void fill_missing_returns(PointCloudScan& scan, std::span<const uint8_t> valid) {
  const size_t n = scan.points.size();
  if (valid.size() != n) throw ConfigError("validity mask size does not match the scan");
  scan.padded.assign(n, 0);
  const auto first = std::find_if(valid.begin(), valid.end(), [](uint8_t v) { return v != 0; });
  if (first == valid.end()) {
    // No returns at all: collapse onto the sensor origin.
    std::fill(scan.points.begin(), scan.points.end(), Point3{});
    std::fill(scan.padded.begin(), scan.padded.end(), uint8_t{1});
    return;
  }
  Point3 last = scan.points[static_cast<size_t>(first - valid.begin())];
  for (size_t i = 0; i < n; ++i) {
    if (valid[i]) {
      last = scan.points[i];
    } else {
      scan.points[i] = last;
      scan.padded[i] = 1;
    }
  }
}

void pad_to(PointCloudScan& scan, size_t n) {
  if (scan.points.size() >= n) return;
  const size_t old = scan.points.size();
  if (scan.padded.empty()) scan.padded.assign(old, 0);
  const Point3 last = old == 0 ? Point3{} : scan.points.back();
  scan.points.resize(n, last);
  scan.padded.resize(n, 1);
}

double metric_value(const ResidualStats& stats, ResidualMetric metric) {
  switch (metric) {
    case ResidualMetric::kMeanPtp:
      return stats.mean_ptp;
    case ResidualMetric::kMaxPtp:
      return stats.max_ptp;
    case ResidualMetric::kL2Norm:
      return stats.l2_norm;
  }
  return stats.mean_ptp;
}

namespace {

constexpr uint8_t kFormatVersion = 1;
constexpr int kBlockSize = 256;  // entropy-mode predictor blocks
constexpr int kMinBlockLog2 = 4;
constexpr int kBaseBlockLog2 = 8;  // encoder-side analyses are built from this size up
constexpr int kMaxBlockLog2 = 15;
constexpr int kNumPredictors = 4;
constexpr int kMaxWidth = 27;  // residual bit lengths are <= q + 2 <= 26

enum class Mode : uint8_t { kGlobal = 0, kBlock = 1, kEntropy = 2 };

// Predictor ids: 0 previous point, 1 linear extrapolation along the ring,
// 2 same column in the previous ring, 3 parallelogram of the two.
enum Predictor : int { kPrev = 0, kLinear = 1, kUp = 2, kParallelogram = 3 };

struct Quantized {
  int q = 0;
  uint32_t n = 0;
  uint32_t stride = 0;
  std::array<std::vector<int64_t>, 3> idx;
};

inline uint32_t zigzag(int64_t r) {
  return static_cast<uint32_t>((static_cast<uint64_t>(r) << 1) ^ static_cast<uint64_t>(r >> 63));
}

inline int64_t unzigzag(uint32_t u) {
  return static_cast<int64_t>(u >> 1) ^ -static_cast<int64_t>(u & 1u);
}

inline int bit_length(uint32_t u) { return u == 0 ? 0 : 32 - std::countl_zero(u); }

inline int64_t predict(int pred, const int64_t* a, uint32_t i, uint32_t stride) {
  const int64_t prev = i >= 1 ? a[i - 1] : 0;
  switch (pred) {
    case kLinear:
      return i >= 2 ? 2 * a[i - 1] - a[i - 2] : prev;
    case kUp:
      return (stride > 0 && i >= stride) ? a[i - stride] : prev;
    case kParallelogram:
      return (stride > 0 && i >= stride + 1) ? a[i - 1] + a[i - stride] - a[i - stride - 1] : prev;
    default:
      return prev;
  }
}

// Residuals of one predictor for all three axes, computed on demand.
class ResidualCache {
 public:
  explicit ResidualCache(const Quantized& qz) : qz_(qz) {}

  std::span<const uint32_t> get(int pred, int axis) {
    auto& slot = cache_[pred][axis];
    if (!slot) {
      slot.reset(new uint32_t[qz_.n]);  // left uninitialized; fill() writes every entry
      fill(pred, qz_.idx[axis].data(), slot.get());
    }
    return {slot.get(), qz_.n};
  }

 private:
  // Same values as predict(), with the edge cases peeled off the hot loop.
  void fill(int pred, const int64_t* a, uint32_t* out) const {
    const uint32_t n = qz_.n;
    const uint32_t s = qz_.stride;
    const uint32_t head = std::min(n, pred == kLinear ? 2u : (pred == kPrev ? 1u : (s > 0 ? s + 1 : n)));
    for (uint32_t i = 0; i < head; ++i) out[i] = zigzag(a[i] - predict(pred, a, i, s));
    switch (pred) {
      case kPrev:
        for (uint32_t i = head; i < n; ++i) out[i] = zigzag(a[i] - a[i - 1]);
        break;
      case kLinear:
        for (uint32_t i = head; i < n; ++i) out[i] = zigzag(a[i] - 2 * a[i - 1] + a[i - 2]);
        break;
      case kUp:
        for (uint32_t i = head; i < n; ++i) out[i] = zigzag(a[i] - a[i - s]);
        break;
      default:
        for (uint32_t i = head; i < n; ++i) out[i] = zigzag(a[i] - a[i - 1] - a[i - s] + a[i - s - 1]);
        break;
    }
  }

  const Quantized& qz_;
  std::unique_ptr<uint32_t[]> cache_[kNumPredictors][3];
};

// ---- common payload framing -------------------------------------------------

void write_prefix(ByteWriter& w, Mode mode, const Quantized& qz,
                  const std::vector<uint8_t>& padding_section) {
  w.u8(kFormatVersion);
  w.u8(static_cast<uint8_t>(mode));
  w.varint(qz.n);
  w.varint(qz.stride);
  w.bytes(padding_section);
}

std::vector<uint8_t> padding_section(const PointCloudScan& scan) {
  ByteWriter w;
  if (scan.padded.empty() ||
      std::none_of(scan.padded.begin(), scan.padded.end(), [](uint8_t v) { return v != 0; })) {
    w.u8(0);
    return w.take();
  }
  // Alternating run lengths, starting with a (possibly empty) unpadded run.
  std::vector<uint64_t> runs;
  uint8_t state = 0;
  uint64_t run = 0;
  for (uint8_t p : scan.padded) {
    const uint8_t v = p ? 1 : 0;
    if (v != state) {
      runs.push_back(run);
      run = 0;
      state = v;
    }
    ++run;
  }
  runs.push_back(run);
  w.u8(1);
  w.varint(runs.size());
  for (uint64_t r : runs) w.varint(r);
  return w.take();
}

void append_crc(std::vector<uint8_t>& payload) {
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
  for (int i = 0; i < 4; ++i) payload.push_back(static_cast<uint8_t>(crc >> (8 * i)));
}

// ---- mode 0: one fixed width per axis ---------------------------------------

struct GlobalPlan {
  std::array<int, 3> width{};
  std::array<bool, 3> raw{};
  uint64_t bits = 0;
};

GlobalPlan plan_global(const Quantized& qz, ResidualCache& res) {
  GlobalPlan plan;
  for (int a = 0; a < 3; ++a) {
    // The first index goes out raw, so only the deltas set the width.
    uint32_t all = 0;
    for (uint32_t v : res.get(kPrev, a).subspan(std::min<uint32_t>(qz.n, 1))) all |= v;
    const int width = bit_length(all);
    const uint64_t n = qz.n;
    const uint64_t raw_bits = n * static_cast<uint64_t>(qz.q);
    const uint64_t delta_bits = n == 0 ? 5 : 5 + static_cast<uint64_t>(qz.q) + (n - 1) * static_cast<uint64_t>(width);
    plan.raw[a] = raw_bits <= delta_bits;
    plan.width[a] = plan.raw[a] ? qz.q : width;
    plan.bits += 1 + (plan.raw[a] ? raw_bits : delta_bits);
  }
  return plan;
}

std::vector<uint8_t> write_global(const Quantized& qz, ResidualCache& res, const GlobalPlan& plan,
                                  const std::vector<uint8_t>& pad) {
  ByteWriter w;
  write_prefix(w, Mode::kGlobal, qz, pad);
  BitWriter bits;
  for (int a = 0; a < 3; ++a) {
    bits.put(plan.raw[a] ? 1 : 0, 1);
    if (plan.raw[a]) {
      for (int64_t v : qz.idx[a]) bits.put(static_cast<uint64_t>(v), qz.q);
    } else {
      bits.put(static_cast<uint64_t>(plan.width[a]), 5);
      const auto r = res.get(kPrev, a);
      if (qz.n > 0) bits.put(static_cast<uint64_t>(qz.idx[a][0]), qz.q);
      for (uint32_t i = 1; i < qz.n; ++i) bits.put(r[i], plan.width[a]);
    }
  }
  w.bytes(bits.finish());
  auto out = w.take();
  append_crc(out);
  return out;
}

// ---- mode 1: per-block predictor, width and exceptions -----------------------

struct BlockChoice {
  int pred = 0;
  int width = 0;
  int exc_width = 0;
  int n_exc = 0;
  uint64_t cost = std::numeric_limits<uint64_t>::max();
};

// Block header: predictor (2), width (5), exception count (log2 + 1 bits),
// exception width (5) when the count is nonzero.
uint64_t block_header_bits(int log2_block) { return 2 + 5 + static_cast<uint64_t>(log2_block + 1); }

struct BlockLevel {
  int log2_block;
  int num_predictors;
  int exception_span;  // -1: none, otherwise max (maxlen - width)
};

constexpr int kLastBlockLevel = 6;  // levels above this add the entropy variants

// Levels 1..6 shrink the blocks, then add predictors and exceptions.
constexpr BlockLevel kBlockLevels[kLastBlockLevel] = {
    {13, 1, -1}, {11, 1, -1}, {9, kNumPredictors, -1},
    {8, kNumPredictors, 1}, {8, kNumPredictors, 3}, {8, kNumPredictors, kMaxWidth},
};

BlockLevel block_level(int c) { return kBlockLevels[std::clamp(c, 1, kLastBlockLevel) - 1]; }

// Bit-length histograms per (block, axis, predictor); every block-mode cost
// is an exact function of these.
class BlockAnalysis {
 public:
  BlockAnalysis(const Quantized& qz, ResidualCache& res, int num_predictors, int log2_block)
      : n_(qz.n),
        log2_block_(log2_block),
        block_size_(1u << log2_block),
        num_blocks_((qz.n + block_size_ - 1) / block_size_),
        num_predictors_(num_predictors) {
    stats_.resize(static_cast<size_t>(num_blocks_) * 3 * kNumPredictors);
    for (int p = 0; p < num_predictors_; ++p) {
      for (int a = 0; a < 3; ++a) {
        const auto& r = res.get(p, a);
        for (uint32_t b = 0; b < num_blocks_; ++b) {
          Stat& st = at(b, a, p);
          const uint32_t end = std::min<uint32_t>(n_, (b + 1) * block_size_);
          for (uint32_t i = b * block_size_; i < end; ++i) ++st.hist[bit_length(r[i])];
          for (int l = kMaxWidth; l >= 0; --l) {
            if (st.hist[l] != 0) {
              st.max_len = l;
              break;
            }
          }
          for (int l = 0; l <= kMaxWidth; ++l) st.len_sum += uint64_t{st.hist[l]} * static_cast<uint64_t>(l);
        }
      }
    }
  }

  // Coarser blocks from a finer analysis by merging histograms.
  BlockAnalysis(const BlockAnalysis& finer, int log2_block)
      : n_(finer.n_),
        log2_block_(log2_block),
        block_size_(1u << log2_block),
        num_blocks_((n_ + block_size_ - 1) / block_size_),
        num_predictors_(finer.num_predictors_) {
    const int shift = log2_block - finer.log2_block_;
    stats_.resize(static_cast<size_t>(num_blocks_) * 3 * kNumPredictors);
    for (uint32_t fb = 0; fb < finer.num_blocks_; ++fb) {
      const uint32_t b = fb >> shift;
      for (int a = 0; a < 3; ++a) {
        for (int p = 0; p < num_predictors_; ++p) {
          const Stat& src = finer.at(fb, a, p);
          Stat& dst = at(b, a, p);
          for (int l = 0; l <= kMaxWidth; ++l) dst.hist[l] += src.hist[l];
          dst.max_len = std::max(dst.max_len, src.max_len);
          dst.len_sum += src.len_sum;
        }
      }
    }
  }

  uint32_t num_blocks() const { return num_blocks_; }
  int log2_block() const { return log2_block_; }
  uint32_t block_begin(uint32_t b) const { return b * block_size_; }
  uint32_t block_len(uint32_t b) const {
    return std::min<uint32_t>(n_, (b + 1) * block_size_) - b * block_size_;
  }

  BlockChoice choose(const BlockLevel& lv, uint32_t b, int axis) const {
    BlockChoice best;
    const uint64_t len = block_len(b);
    for (int p = 0; p < lv.num_predictors; ++p) {
      const Stat& st = at(b, axis, p);
      const int lowest = lv.exception_span < 0 ? st.max_len : std::max(0, st.max_len - lv.exception_span);
      uint64_t above = 0;  // values with bit length > w
      for (int w = st.max_len; w >= lowest; --w) {
        if (w < st.max_len) above += st.hist[w + 1];
        const int ew = st.max_len - w;
        uint64_t cost = block_header_bits(log2_block_) + len * static_cast<uint64_t>(w);
        if (above > 0) cost += 5 + above * static_cast<uint64_t>(log2_block_ + ew);
        if (cost < best.cost) best = BlockChoice{p, w, above > 0 ? ew : 0, static_cast<int>(above), cost};
      }
    }
    return best;
  }

  uint64_t cost_bits(const BlockLevel& lv) const {
    uint64_t total = 0;
    for (uint32_t b = 0; b < num_blocks_; ++b) {
      for (int a = 0; a < 3; ++a) total += choose(lv, b, a).cost;
    }
    return total;
  }

  // Predictor with the smallest summed bit length; used by the entropy modes.
  int cheapest_predictor(uint32_t b, int axis) const {
    int best = 0;
    for (int p = 1; p < num_predictors_; ++p) {
      if (at(b, axis, p).len_sum < at(b, axis, best).len_sum) best = p;
    }
    return best;
  }

 private:
  struct Stat {
    uint32_t hist[kMaxWidth + 1] = {};
    int max_len = 0;
    uint64_t len_sum = 0;
  };
  Stat& at(uint32_t b, int a, int p) { return stats_[(static_cast<size_t>(b) * 3 + a) * kNumPredictors + p]; }
  const Stat& at(uint32_t b, int a, int p) const {
    return stats_[(static_cast<size_t>(b) * 3 + a) * kNumPredictors + p];
  }

  uint32_t n_;
  int log2_block_;
  uint32_t block_size_;
  uint32_t num_blocks_;
  int num_predictors_;
  std::vector<Stat> stats_;
};

std::vector<uint8_t> write_block(const Quantized& qz, ResidualCache& res, const BlockAnalysis& an,
                                 const BlockLevel& lv, const std::vector<uint8_t>& pad) {
  ByteWriter w;
  write_prefix(w, Mode::kBlock, qz, pad);
  w.u8(static_cast<uint8_t>(an.log2_block()));
  const int log2_block = an.log2_block();
  BitWriter bits;
  for (uint32_t b = 0; b < an.num_blocks(); ++b) {
    const uint32_t begin = an.block_begin(b);
    const uint32_t end = begin + an.block_len(b);
    for (int a = 0; a < 3; ++a) {
      const BlockChoice ch = an.choose(lv, b, a);
      const auto& r = res.get(ch.pred, a);
      bits.put(static_cast<uint64_t>(ch.pred), 2);
      bits.put(static_cast<uint64_t>(ch.width), 5);
      bits.put(static_cast<uint64_t>(ch.n_exc), log2_block + 1);
      if (ch.n_exc > 0) bits.put(static_cast<uint64_t>(ch.exc_width), 5);
      for (uint32_t i = begin; i < end; ++i) bits.put(r[i], ch.width);
      if (ch.n_exc > 0) {
        for (uint32_t i = begin; i < end; ++i) {
          const uint32_t high = r[i] >> ch.width;
          if (high != 0) {
            bits.put(i - begin, log2_block);
            bits.put(high, ch.exc_width);
          }
        }
      }
    }
  }
  w.bytes(bits.finish());
  auto out = w.take();
  append_crc(out);
  return out;
}

// ---- mode 2: range-coded bit-length classes ---------------------------------
//
// variant 1: class context = previous class on the same axis
// variant 2: + class of the previously coded axis (bucketed)
// variant 3: + adaptive top mantissa bit

constexpr int kClasses = kMaxWidth + 1;
constexpr int kTopClass = kMaxWidth - 1;
constexpr int kCrossBuckets = 12;
// Per context: [0] same-as-previous flag, [1] direction, then unary step
// flags upward at 2.. and downward at 9..; steps past the 7th share a flag.
constexpr int kTreeSize = 16;
constexpr int kStepNodes = 7;
constexpr int kUpNodes = 2;
constexpr int kDownNodes = kUpNodes + kStepNodes;

void encode_class(detail::RangeEncoder& rc, uint16_t* nodes, int len, int prev) {
  const bool same = len == prev;
  rc.encode_bit(nodes[0], same ? 1u : 0u);
  if (same) return;
  bool up = len > prev;
  if (prev > 0 && prev < kTopClass) rc.encode_bit(nodes[1], up ? 1u : 0u);
  const int d = up ? len - prev - 1 : prev - len - 1;
  const int max_d = up ? kTopClass - prev - 1 : prev - 1;
  uint16_t* steps = nodes + (up ? kUpNodes : kDownNodes);
  for (int k = 0; k < max_d; ++k) {
    const uint32_t more = d > k ? 1u : 0u;
    rc.encode_bit(steps[std::min(k, kStepNodes - 1)], more);
    if (!more) break;
  }
}

int decode_class(detail::RangeDecoder& rc, uint16_t* nodes, int prev) {
  if (rc.decode_bit(nodes[0])) return prev;
  bool up = prev == 0;
  if (prev > 0 && prev < kTopClass) up = rc.decode_bit(nodes[1]) != 0;
  const int max_d = up ? kTopClass - prev - 1 : prev - 1;
  uint16_t* steps = nodes + (up ? kUpNodes : kDownNodes);
  int d = 0;
  while (d < max_d && rc.decode_bit(steps[std::min(d, kStepNodes - 1)])) ++d;
  return up ? prev + 1 + d : prev - 1 - d;
}

template <int kVariant>
struct EntropyContexts {
  static constexpr size_t kCount =
      kVariant == 1 ? 3 * kClasses : 3 * kClasses * kCrossBuckets;

  EntropyContexts() : probs(kCount * kTreeSize, detail::kProbInit) {
    for (auto& p : top_bit) p = detail::kProbInit;
  }

  uint16_t* tree(int axis, int prev_same, int prev_cross) {
    size_t ctx = static_cast<size_t>(axis * kClasses + prev_same);
    if constexpr (kVariant >= 2) ctx = ctx * kCrossBuckets + static_cast<size_t>(std::min(prev_cross, kCrossBuckets - 1));
    return probs.data() + ctx * kTreeSize;
  }

  std::vector<uint16_t> probs;
  uint16_t top_bit[3 * kClasses];
};

template <int kVariant>
std::vector<uint8_t> write_entropy(const Quantized& qz, ResidualCache& res,
                                   const std::vector<std::array<int, 3>>& block_preds,
                                   const std::vector<uint8_t>& pad) {
  ByteWriter w;
  write_prefix(w, Mode::kEntropy, qz, pad);
  w.u8(static_cast<uint8_t>(kVariant));

  BitWriter pred_bits;
  for (const auto& bp : block_preds) {
    for (int a = 0; a < 3; ++a) pred_bits.put(static_cast<uint64_t>(bp[a]), 2);
  }

  EntropyContexts<kVariant> ctx;
  detail::RangeEncoder rc;
  BitWriter mantissa;
  const uint32_t* cols[3] = {};
  int prev_class[3] = {0, 0, 0};
  int cross = 0;
  for (uint32_t i = 0; i < qz.n; ++i) {
    if (i % kBlockSize == 0) {
      for (int a = 0; a < 3; ++a) cols[a] = res.get(block_preds[i / kBlockSize][a], a).data();
    }
    for (int a = 0; a < 3; ++a) {
      const uint32_t v = cols[a][i];
      const int len = bit_length(v);
      encode_class(rc, ctx.tree(a, prev_class[a], cross), len, prev_class[a]);
      if (len >= 2) {
        int raw_bits = len - 1;
        if constexpr (kVariant == 3) {
          rc.encode_bit(ctx.top_bit[a * kClasses + len], (v >> (len - 2)) & 1u);
          --raw_bits;
        }
        if (raw_bits > 0) mantissa.put(v, raw_bits);
      }
      prev_class[a] = len;
      cross = len;
    }
  }
  const auto rc_bytes = rc.finish();
  w.bytes(pred_bits.finish());
  w.u32(static_cast<uint32_t>(rc_bytes.size()));
  w.bytes(rc_bytes);
  w.bytes(mantissa.finish());
  auto out = w.take();
  append_crc(out);
  return out;
}

// ---- decoding ---------------------------------------------------------------

void reconstruct(Quantized& qz, int axis, uint32_t i, int pred, uint32_t zz) {
  int64_t* a = qz.idx[axis].data();
  const int64_t v = predict(pred, a, i, qz.stride) + unzigzag(zz);
  if (v < 0 || v >= (int64_t{1} << qz.q)) throw DecodeError("decoded cell index out of range");
  a[i] = v;
}

void decode_global(ByteReader& br, Quantized& qz) {
  BitReader bits(br.bytes(br.remaining()));
  for (int a = 0; a < 3; ++a) {
    const bool raw = bits.get(1) != 0;
    if (raw) {
      for (uint32_t i = 0; i < qz.n; ++i) {
        const uint32_t v = bits.get(qz.q);
        qz.idx[a][i] = v;
      }
    } else {
      const int width = static_cast<int>(bits.get(5));
      if (width > kMaxWidth) throw DecodeError("invalid residual width");
      if (qz.n > 0) qz.idx[a][0] = bits.get(qz.q);
      for (uint32_t i = 1; i < qz.n; ++i) reconstruct(qz, a, i, kPrev, bits.get(width));
    }
  }
}

void decode_block(ByteReader& br, Quantized& qz) {
  const int log2_block = br.u8();
  if (log2_block < kMinBlockLog2 || log2_block > kMaxBlockLog2) throw DecodeError("invalid block size");
  const uint32_t block_size = 1u << log2_block;
  BitReader bits(br.bytes(br.remaining()));
  std::vector<uint32_t> vals(block_size);
  for (uint32_t begin = 0; begin < qz.n; begin += block_size) {
    const uint32_t end = std::min<uint32_t>(qz.n, begin + block_size);
    const uint32_t len = end - begin;
    for (int a = 0; a < 3; ++a) {
      const int pred = static_cast<int>(bits.get(2));
      const int width = static_cast<int>(bits.get(5));
      const uint32_t n_exc = bits.get(log2_block + 1);
      if (width > kMaxWidth || n_exc > len) throw DecodeError("invalid block header");
      int exc_width = 0;
      if (n_exc > 0) {
        exc_width = static_cast<int>(bits.get(5));
        if (width + exc_width > kMaxWidth || exc_width == 0) throw DecodeError("invalid block header");
      }
      for (uint32_t k = 0; k < len; ++k) vals[k] = bits.get(width);
      for (uint32_t e = 0; e < n_exc; ++e) {
        const uint32_t at = bits.get(log2_block);
        if (at >= len) throw DecodeError("invalid exception index");
        vals[at] |= bits.get(exc_width) << width;
      }
      for (uint32_t k = 0; k < len; ++k) reconstruct(qz, a, begin + k, pred, vals[k]);
    }
  }
}

template <int kVariant>
void decode_entropy_body(detail::RangeDecoder& rc, BitReader& mantissa,
                         const std::vector<std::array<int, 3>>& preds, Quantized& qz) {
  EntropyContexts<kVariant> ctx;
  int prev_class[3] = {0, 0, 0};
  int cross = 0;
  for (uint32_t i = 0; i < qz.n; ++i) {
    const auto& bp = preds[i / kBlockSize];
    for (int a = 0; a < 3; ++a) {
      const int len = decode_class(rc, ctx.tree(a, prev_class[a], cross), prev_class[a]);
      if (len > qz.q + 2) throw DecodeError("invalid residual class");
      uint32_t v = 0;
      if (len == 1) {
        v = 1;
      } else if (len >= 2) {
        int raw_bits = len - 1;
        uint32_t top = 0;
        if constexpr (kVariant == 3) {
          top = rc.decode_bit(ctx.top_bit[a * kClasses + len]);
          --raw_bits;
        }
        const uint32_t low = raw_bits > 0 ? mantissa.get(raw_bits) : 0;
        v = (1u << (len - 1)) | (top << (len - 2)) | low;
      }
      reconstruct(qz, a, i, bp[a], v);
      prev_class[a] = len;
      cross = len;
    }
  }
}

void decode_entropy(ByteReader& br, Quantized& qz) {
  const int variant = br.u8();
  if (variant < 1 || variant > 3) throw DecodeError("unknown entropy variant");
  const uint32_t n_blocks = (qz.n + kBlockSize - 1) / kBlockSize;
  const size_t pred_bytes = (static_cast<size_t>(n_blocks) * 6 + 7) / 8;
  BitReader pred_bits(br.bytes(pred_bytes));
  std::vector<std::array<int, 3>> preds(n_blocks);
  for (auto& bp : preds) {
    for (int a = 0; a < 3; ++a) bp[a] = static_cast<int>(pred_bits.get(2));
  }
  const uint32_t rc_len = br.u32();
  detail::RangeDecoder rc(br.bytes(rc_len));
  BitReader mantissa(br.bytes(br.remaining()));
  switch (variant) {
    case 1:
      decode_entropy_body<1>(rc, mantissa, preds, qz);
      break;
    case 2:
      decode_entropy_body<2>(rc, mantissa, preds, qz);
      break;
    default:
      decode_entropy_body<3>(rc, mantissa, preds, qz);
      break;
  }
}

Quantized quantize(const PointCloudScan& scan, const BoundingBox& box, int q, uint32_t stride) {
  Quantized qz;
  qz.q = q;
  qz.n = static_cast<uint32_t>(scan.points.size());
  qz.stride = stride;
  const double cells = std::ldexp(1.0, q);
  const int64_t max_index = (int64_t{1} << q) - 1;
  for (int a = 0; a < 3; ++a) {
    auto& col = qz.idx[a];
    col.resize(qz.n);
    const double lo = box.min[a];
    const double inv_ext = 1.0 / box.extent(a);
    double Point3::*coord = a == 0 ? &Point3::x : (a == 1 ? &Point3::y : &Point3::z);
    for (uint32_t i = 0; i < qz.n; ++i) {
      // t does not depend on q and the scale by 2^q is exact, so the q+1
      // index is exactly 2 * (q index) + one refinement bit. Points are
      // inside the box, so truncation is floor.
      const double t = std::max(0.0, (scan.points[i].*coord - lo) * inv_ext);
      col[i] = std::min(static_cast<int64_t>(t * cells), max_index);
    }
  }
  return qz;
}

// Shares quantization, residuals and candidate payloads across compression
// levels of one (scan, q). payload(c) is the smallest candidate among the
// modes enabled at level c, so sizes are nonincreasing in c.
class ScanEncoder {
 public:
  ScanEncoder(const PointCloudScan& scan, int q, const CodecOptions& options, int max_level)
      : box_(options.tight_box ? BoundingBox::tight(scan.points) : options.box) {
    if (scan.points.empty()) throw ConfigError("cannot encode an empty scan");
    if (!scan.padded.empty() && scan.padded.size() != scan.points.size()) {
      throw ConfigError("padding mask size does not match the scan");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(box_.extent(a) > 0.0)) throw ConfigError("bounding box has zero extent");
    }
    const double lo[3] = {box_.min[0], box_.min[1], box_.min[2]};
    const double hi[3] = {box_.max[0], box_.max[1], box_.max[2]};
    for (size_t i = 0; i < scan.points.size(); ++i) {
      const Point3& p = scan.points[i];
      // NaN fails every comparison, so this also rejects non-finite values.
      const bool inside = p.x >= lo[0] && p.x <= hi[0] && p.y >= lo[1] && p.y <= hi[1] &&
                          p.z >= lo[2] && p.z <= hi[2];
      if (!inside) {
        throw OutOfRangeError("point " + std::to_string(i) + " lies outside the quantization box");
      }
    }
    qz_ = quantize(scan, box_, q, options.row_stride);
    res_.emplace(qz_);
    pad_ = padding_section(scan);
    global_ = plan_global(qz_, *res_);
    for (int c = 1; c <= max_level; ++c) {
      num_predictors_ = std::max(num_predictors_, level(c).num_predictors);
    }
    if (max_level > kLastBlockLevel) num_predictors_ = kNumPredictors;
  }

  const BoundingBox& box() const { return box_; }

  // Smallest candidate over every mode enabled at levels <= c.
  std::vector<uint8_t> payload(int c) {
    enum class Pick { kGlobal, kBlock, kEntropy } pick = Pick::kGlobal;
    size_t best = frame_bytes(global_.bits);
    int best_variant = 0;
    BlockLevel lv{};
    for (int k = 1; k <= std::min(c, kLastBlockLevel); ++k) {
      const BlockLevel cand = level(k);
      const size_t block = frame_bytes(analysis(cand.log2_block).cost_bits(cand)) + 1;
      if (block < best) {
        best = block;
        pick = Pick::kBlock;
        lv = cand;
      }
    }
    for (int v = 1; v <= c - kLastBlockLevel; ++v) {
      const auto& e = entropy(v);
      if (e.size() < best) {
        best = e.size();
        pick = Pick::kEntropy;
        best_variant = v;
      }
    }
    switch (pick) {
      case Pick::kBlock:
        return write_block(qz_, *res_, analysis(lv.log2_block), lv, pad_);
      case Pick::kEntropy:
        return entropy(best_variant);
      default:
        return write_global(qz_, *res_, global_, pad_);
    }
  }

 private:
  // Global and block payloads share the framing; only the bit count varies.
  size_t frame_bytes(uint64_t bits) const {
    return 2 + varint_len(qz_.n) + varint_len(qz_.stride) + pad_.size() + (bits + 7) / 8 + 4;
  }

  static size_t varint_len(uint64_t v) {
    size_t len = 1;
    while (v >= 0x80) {
      v >>= 7;
      ++len;
    }
    return len;
  }

  const std::vector<uint8_t>& entropy(int variant) {
    auto& slot = entropy_[variant - 1];
    if (!slot) {
      if (preds_.empty()) {
        const BlockAnalysis& an = analysis(std::countr_zero(static_cast<unsigned>(kBlockSize)));
        preds_.resize(an.num_blocks());
        for (uint32_t b = 0; b < an.num_blocks(); ++b) {
          for (int a = 0; a < 3; ++a) preds_[b][a] = an.cheapest_predictor(b, a);
        }
      }
      switch (variant) {
        case 1:
          slot = write_entropy<1>(qz_, *res_, preds_, pad_);
          break;
        case 2:
          slot = write_entropy<2>(qz_, *res_, preds_, pad_);
          break;
        default:
          slot = write_entropy<3>(qz_, *res_, preds_, pad_);
          break;
      }
    }
    return *slot;
  }

  BoundingBox box_;
  Quantized qz_;
  std::optional<ResidualCache> res_;
  std::vector<uint8_t> pad_;
  GlobalPlan global_;
  BlockLevel level(int c) const { return block_level(c); }

  const BlockAnalysis& analysis(int log2_block) {
    auto& slot = analyses_[static_cast<size_t>(log2_block)];
    if (!slot) {
      if (log2_block == kBaseBlockLog2) {
        slot.emplace(qz_, *res_, num_predictors_, log2_block);
      } else {
        slot.emplace(analysis(kBaseBlockLog2), log2_block);
      }
    }
    return *slot;
  }

  int num_predictors_ = 1;
  std::array<std::optional<BlockAnalysis>, kMaxBlockLog2 + 1> analyses_;
  std::vector<std::array<int, 3>> preds_;
  std::optional<std::vector<uint8_t>> entropy_[3];
};

EncodedUnit make_unit(const PointCloudScan& scan, const CompressionConfig& config,
                      const BoundingBox& box, std::vector<uint8_t> payload) {
  EncodedUnit unit;
  unit.scan_id = scan.scan_id;
  unit.payload = std::move(payload);
  unit.payload_bits = 8 * static_cast<uint64_t>(unit.payload.size());
  unit.config_used = config;
  unit.bbox = box;
  return unit;
}

void check_config(const CompressionConfig& config) {
  if (!config.valid()) {
    throw ConfigError("invalid compression config q=" + std::to_string(config.q) +
                      " c=" + std::to_string(config.c));
  }
}

}  // namespace

EncodedUnit encode(const PointCloudScan& scan, const CompressionConfig& config,
                   const CodecOptions& options) {
  check_config(config);
  ScanEncoder enc(scan, config.q, options, config.c);
  return make_unit(scan, config, enc.box(), enc.payload(config.c));
}

std::vector<EncodedUnit> encode_levels(const PointCloudScan& scan, int q,
                                       const CodecOptions& options) {
  check_config({q, kMaxCompressionLevel});
  ScanEncoder enc(scan, q, options, kMaxCompressionLevel);
  std::vector<EncodedUnit> units;
  units.reserve(kMaxCompressionLevel + 1);
  for (int c = kMinCompressionLevel; c <= kMaxCompressionLevel; ++c) {
    units.push_back(make_unit(scan, {q, c}, enc.box(), enc.payload(c)));
  }
  return units;
}

PointCloudScan decode(const EncodedUnit& unit) {
  if (!unit.config_used.valid()) throw DecodeError("unit carries an invalid config");
  const auto& payload = unit.payload;
  if (payload.size() < 4 + 2) throw DecodeError("payload truncated");
  const size_t body_len = payload.size() - 4;
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) stored_crc |= uint32_t{payload[body_len + i]} << (8 * i);
  const auto actual_crc =
      static_cast<uint32_t>(crc32(0L, payload.data(), static_cast<uInt>(body_len)));
  if (stored_crc != actual_crc) throw DecodeError("payload checksum mismatch");

  ByteReader br(std::span<const uint8_t>(payload.data(), body_len));
  if (br.u8() != kFormatVersion) throw DecodeError("unsupported payload version");
  const auto mode = static_cast<Mode>(br.u8());
  const uint64_t n = br.varint();
  const uint64_t stride = br.varint();
  if (n == 0 || n > (uint64_t{1} << 26) || stride > n) throw DecodeError("invalid point count");

  PointCloudScan scan;
  scan.scan_id = unit.scan_id;
  if (br.u8() != 0) {
    const uint64_t n_runs = br.varint();
    if (n_runs > n + 1) throw DecodeError("invalid padding runs");
    scan.padded.reserve(n);
    uint8_t state = 0;
    for (uint64_t r = 0; r < n_runs; ++r) {
      const uint64_t len = br.varint();
      if (scan.padded.size() + len > n) throw DecodeError("invalid padding runs");
      scan.padded.insert(scan.padded.end(), len, state);
      state ^= 1;
    }
    if (scan.padded.size() != n) throw DecodeError("invalid padding runs");
  }

  Quantized qz;
  qz.q = unit.config_used.q;
  qz.n = static_cast<uint32_t>(n);
  qz.stride = static_cast<uint32_t>(stride);
  for (auto& col : qz.idx) col.assign(qz.n, 0);
  switch (mode) {
    case Mode::kGlobal:
      decode_global(br, qz);
      break;
    case Mode::kBlock:
      decode_block(br, qz);
      break;
    case Mode::kEntropy:
      decode_entropy(br, qz);
      break;
    default:
      throw DecodeError("unknown payload mode");
  }

  const double cells = std::ldexp(1.0, qz.q);
  scan.points.resize(qz.n);
  for (int a = 0; a < 3; ++a) {
    const double lo = unit.bbox.min[a];
    const double cell = unit.bbox.extent(a) / cells;
    for (uint32_t i = 0; i < qz.n; ++i) {
      scan.points[i][a] = lo + (static_cast<double>(qz.idx[a][i]) + 0.5) * cell;
    }
  }
  return scan;
}

ResidualStats residual(const PointCloudScan& original, const PointCloudScan& decoded) {
  if (original.size() != decoded.size()) {
    throw ConfigError("residual requires equal cardinality (" + std::to_string(original.size()) +
                      " vs " + std::to_string(decoded.size()) + ")");
  }
  ResidualStats st;
  st.per_point_l2.resize(original.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (size_t i = 0; i < original.size(); ++i) {
    const double dx = decoded.points[i].x - original.points[i].x;
    const double dy = decoded.points[i].y - original.points[i].y;
    const double dz = decoded.points[i].z - original.points[i].z;
    const double sq = dx * dx + dy * dy + dz * dz;
    const double d = std::sqrt(sq);
    st.per_point_l2[i] = d;
    if (original.is_padded(i) || decoded.is_padded(i)) continue;
    ++st.counted;
    sum += d;
    sum_sq += sq;
    st.max_ptp = std::max(st.max_ptp, d);
  }
  st.mean_ptp = st.counted ? sum / static_cast<double>(st.counted) : 0.0;
  st.l2_norm = std::sqrt(sum_sq);
  return st;
}

std::vector<uint8_t> serialize_unit(const EncodedUnit& unit) {
  ByteWriter w;
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>("PCE1"), 4));
  w.u32(unit.scan_id);
  w.u8(static_cast<uint8_t>(unit.config_used.q));
  w.u8(static_cast<uint8_t>(unit.config_used.c));
  for (float v : unit.bbox.min) w.f32(v);
  for (float v : unit.bbox.max) w.f32(v);
  w.u32(static_cast<uint32_t>(unit.payload.size()));
  w.bytes(unit.payload);
  return w.take();
}

EncodedUnit parse_unit(std::span<const uint8_t> bytes) {
  ByteReader br(bytes);
  const auto magic = br.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), "PCE1")) throw DecodeError("bad unit magic");
  EncodedUnit unit;
  unit.scan_id = br.u32();
  unit.config_used.q = br.u8();
  unit.config_used.c = br.u8();
  if (!unit.config_used.valid()) throw DecodeError("unit header carries an invalid config");
  for (auto& v : unit.bbox.min) v = br.f32();
  for (auto& v : unit.bbox.max) v = br.f32();
  const uint32_t len = br.u32();
  if (br.remaining() != len) throw DecodeError("unit payload length mismatch");
  const auto body = br.bytes(len);
  unit.payload.assign(body.begin(), body.end());
  unit.payload_bits = 8 * static_cast<uint64_t>(len);
  return unit;
}

}  // namespace pcstream
