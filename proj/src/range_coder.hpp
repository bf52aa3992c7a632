#pragma once

// Adaptive binary range coder (LZMA-style carry propagation) plus a
// bit-tree symbol model on top of it.

#include <cstdint>
#include <span>
#include <vector>

#include "pcstream/error.hpp"

namespace pcstream::detail {

inline constexpr int kProbBits = 11;
inline constexpr uint16_t kProbInit = 1u << (kProbBits - 1);
inline constexpr int kMoveBits = 5;
inline constexpr uint32_t kTopValue = 1u << 24;
inline constexpr int kProbMargin = 31;

// Shift toward 0 or 2^kProbBits, clamped a margin away from both ends.
inline uint16_t update(uint16_t prob, uint32_t bit) {
  const int target = bit ? kProbMargin : (1 << kProbBits) - kProbMargin;
  return static_cast<uint16_t>(prob + ((target - int{prob}) >> kMoveBits));
}

class RangeEncoder {
 public:
  void encode_bit(uint16_t& prob, uint32_t bit) {
    const uint32_t bound = (range_ >> kProbBits) * prob;
    const uint32_t mask = 0u - bit;
    low_ += bound & mask;
    range_ = bound ^ ((bound ^ (range_ - bound)) & mask);
    prob = update(prob, bit);
    while (range_ < kTopValue) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const uint8_t carry = static_cast<uint8_t>(low_ >> 32);
      uint8_t temp = cache_;
      do {
        if (!first_) out_.push_back(static_cast<uint8_t>(temp + carry));
        first_ = false;
        temp = 0xFF;
      } while (--cache_size_ != 0);
      cache_ = static_cast<uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  bool first_ = true;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> data) : data_(data) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  uint32_t decode_bit(uint16_t& prob) {
    const uint32_t bound = (range_ >> kProbBits) * prob;
    const uint32_t bit = code_ >= bound ? 1u : 0u;
    const uint32_t mask = 0u - bit;
    code_ -= bound & mask;
    range_ = bound ^ ((bound ^ (range_ - bound)) & mask);
    prob = update(prob, bit);
    while (range_ < kTopValue) {
      range_ <<= 8;
      code_ = (code_ << 8) | next_byte();
    }
    return bit;
  }

 private:
  uint32_t next_byte() {
    // The encoder flushes 4 trailing bytes; reading past them means corruption.
    if (pos_ >= data_.size()) {
      if (++overrun_ > 4) throw DecodeError("range-coded stream truncated");
      return 0;
    }
    return data_[pos_++];
  }

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  int overrun_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

// Adaptive model for symbols in [0, 2^kBits).
template <int kBits>
struct BitTreeModel {
  uint16_t probs[1u << kBits];

  BitTreeModel() {
    for (auto& p : probs) p = kProbInit;
  }

  void encode(RangeEncoder& rc, uint32_t symbol) {
    uint32_t m = 1;
    for (int i = kBits - 1; i >= 0; --i) {
      const uint32_t bit = (symbol >> i) & 1u;
      rc.encode_bit(probs[m], bit);
      m = (m << 1) | bit;
    }
  }

  uint32_t decode(RangeDecoder& rc) {
    uint32_t m = 1;
    for (int i = 0; i < kBits; ++i) m = (m << 1) | rc.decode_bit(probs[m]);
    return m - (1u << kBits);
  }
};

}  // namespace pcstream::detail
