#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

#include "pcstream/error.hpp"

namespace pcstream::detail {

// LSB-first bit packer.
class BitWriter {
 public:
  BitWriter() { words_.reserve(1 << 10); }

  // bits <= 32
  void put(uint64_t value, int bits) {
    if (bits == 0) return;
    acc_ |= (value & ((uint64_t{1} << bits) - 1)) << fill_;
    fill_ += bits;
    bit_count_ += static_cast<uint64_t>(bits);
    if (fill_ >= 32) {
      words_.push_back(static_cast<uint32_t>(acc_));
      acc_ >>= 32;
      fill_ -= 32;
    }
  }

  uint64_t bit_count() const { return bit_count_; }

  std::vector<uint8_t> finish() {
    // Words are stored in host order; every supported target is little-endian.
    std::vector<uint8_t> bytes(words_.size() * 4 + static_cast<size_t>((fill_ + 7) / 8));
    if (!words_.empty()) std::memcpy(bytes.data(), words_.data(), words_.size() * 4);
    for (size_t i = words_.size() * 4; i < bytes.size(); ++i) {
      bytes[i] = static_cast<uint8_t>(acc_);
      acc_ >>= 8;
    }
    words_.clear();
    fill_ = 0;
    acc_ = 0;
    return bytes;
  }

 private:
  std::vector<uint32_t> words_;
  uint64_t acc_ = 0;
  int fill_ = 0;
  uint64_t bit_count_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const uint8_t> data) : data_(data) {}

  uint32_t get(int bits) {
    if (bits == 0) return 0;
    while (fill_ < bits) {
      if (pos_ >= data_.size()) throw DecodeError("bitstream truncated");
      acc_ |= uint64_t{data_[pos_++]} << fill_;
      fill_ += 8;
    }
    const uint32_t v = static_cast<uint32_t>(acc_ & ((uint64_t{1} << bits) - 1));
    acc_ >>= bits;
    fill_ -= bits;
    return v;
  }

 private:
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  uint64_t acc_ = 0;
  int fill_ = 0;
};

// Byte-level helpers for headers.
class ByteWriter {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void varint(uint64_t v) {
    while (v >= 0x80) {
      out_.push_back(static_cast<uint8_t>(v | 0x80));
      v >>= 7;
    }
    out_.push_back(static_cast<uint8_t>(v));
  }
  void bytes(std::span<const uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<uint8_t>& buffer() { return out_; }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  // The wire formats are little-endian; so is every target we build for.
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8() { return take<uint8_t>(); }
  uint16_t u16() { return take<uint16_t>(); }
  uint32_t u32() { return take<uint32_t>(); }
  uint64_t u64() { return take<uint64_t>(); }
  float f32() { return take<float>(); }
  uint64_t varint() {
    uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const uint8_t b = u8();
      v |= uint64_t{b & 0x7fu} << shift;
      if ((b & 0x80) == 0) return v;
    }
    throw DecodeError("varint overflow");
  }
  std::span<const uint8_t> bytes(size_t n) {
    if (remaining() < n) throw DecodeError("truncated data");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return data_.size() - pos_; }
  size_t position() const { return pos_; }

 private:
  template <typename T>
  T take() {
    if (remaining() < sizeof(T)) throw DecodeError("truncated data");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace pcstream::detail
