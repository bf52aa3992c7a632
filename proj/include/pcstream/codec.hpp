#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace pcstream {

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend bool operator==(const Point3&, const Point3&) = default;
};

// Axis-aligned box. Stored as f32 on the wire, so constructors used for
// quantization are always f32-representable.
struct BoundingBox {
  std::array<float, 3> min{-50.0f, -50.0f, -50.0f};
  std::array<float, 3> max{50.0f, 50.0f, 50.0f};

  double extent(int axis) const { return double(max[axis]) - double(min[axis]); }
  double max_extent() const;
  double diagonal() const;
  bool contains(const Point3& p) const;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

  // Smallest f32 box enclosing all points.
  static BoundingBox tight(std::span<const Point3> points);
};

// One LiDAR sweep. `padded` is either empty (no padding) or has one flag per
// point; padded points are duplicates inserted to keep the cardinality fixed.
struct PointCloudScan {
  std::vector<Point3> points;
  uint32_t scan_id = 0;
  double timestamp = 0.0;
  std::vector<uint8_t> padded;

  size_t size() const { return points.size(); }
  bool is_padded(size_t i) const { return !padded.empty() && padded[i] != 0; }
  size_t valid_count() const;
};

// Fill missing returns (`valid[i] == false`) by duplicating the last valid
// point in scan order (the first valid point for a leading gap), marking them padded.
void fill_missing_returns(PointCloudScan& scan, std::span<const uint8_t> valid);

// Append copies of the last point until the scan has `n` points.
void pad_to(PointCloudScan& scan, size_t n);

inline constexpr int kMinQuantBits = 8;
inline constexpr int kMaxQuantBits = 24;
inline constexpr int kMinCompressionLevel = 0;
inline constexpr int kMaxCompressionLevel = 9;

struct CompressionConfig {
  int q = 16;  // quantization bits per axis
  int c = 0;   // compression effort

  bool valid() const {
    return q >= kMinQuantBits && q <= kMaxQuantBits && c >= kMinCompressionLevel &&
           c <= kMaxCompressionLevel;
  }
  friend auto operator<=>(const CompressionConfig&, const CompressionConfig&) = default;
};

struct CodecOptions {
  BoundingBox box{};        // fixed quantization box (default +-50 m)
  bool tight_box = false;   // use a per-scan tight box instead of `box`
  uint32_t row_stride = 1024;  // points per ring; enables the previous-ring predictors
};

struct EncodedUnit {
  uint32_t scan_id = 0;
  std::vector<uint8_t> payload;
  uint64_t payload_bits = 0;
  CompressionConfig config_used;
  BoundingBox bbox;
};

struct ResidualStats {
  std::vector<double> per_point_l2;
  double mean_ptp = 0.0;
  double max_ptp = 0.0;
  double l2_norm = 0.0;
  size_t counted = 0;  // points that entered the statistics (non-padded)
};

enum class ResidualMetric { kMeanPtp, kMaxPtp, kL2Norm };

double metric_value(const ResidualStats& stats, ResidualMetric metric);

// Throws ConfigError for an invalid config and OutOfRangeError when a
// coordinate is outside the quantization box (or non-finite).
EncodedUnit encode(const PointCloudScan& scan, const CompressionConfig& config,
                   const CodecOptions& options = {});

// Throws DecodeError on any corruption; never returns a partial scan.
PointCloudScan decode(const EncodedUnit& unit);

// Units for c = 0..9 at one q; identical to calling encode() per level but
// shares quantization and candidate payloads.
std::vector<EncodedUnit> encode_levels(const PointCloudScan& scan, int q,
                                       const CodecOptions& options = {});

// Throws ConfigError when the cardinalities differ. Points padded in either
// scan keep their distance in per_point_l2 but are left out of mean/max/norm.
ResidualStats residual(const PointCloudScan& original, const PointCloudScan& decoded);

// EncodedUnit wire layout, little-endian:
//   "PCE1" | u32 scan_id | u8 q | u8 c | f32 bbox[6] (min xyz, max xyz)
//   | u32 payload_len | payload
inline constexpr size_t kUnitHeaderBytes = 4 + 4 + 1 + 1 + 24 + 4;
std::vector<uint8_t> serialize_unit(const EncodedUnit& unit);
EncodedUnit parse_unit(std::span<const uint8_t> bytes);

}  // namespace pcstream
