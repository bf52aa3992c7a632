#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <vector>

#include "pcstream/codec.hpp"

namespace pcstream {

// Binary scan file, little-endian:
//   "PCS1" | u32 N | f32 bbox[6] (min xyz, max xyz) | N x (f32 x, f32 y, f32 z)
// The padding mask is not part of the format.
inline constexpr size_t kScanHeaderBytes = 4 + 4 + 24;

std::vector<uint8_t> serialize_scan(const PointCloudScan& scan, const BoundingBox& box);
PointCloudScan parse_scan(std::span<const uint8_t> bytes, BoundingBox* box = nullptr);

void write_scan_file(const std::string& path, const PointCloudScan& scan, const BoundingBox& box);
PointCloudScan read_scan_file(const std::string& path, BoundingBox* box = nullptr);

// ASCII point list: one "x y z" per line (commas allowed), '#' starts a
// comment. A line reading "nan" / "-" (or with any non-finite coordinate) is a
// missing return. Missing returns, and any shortfall below `n`, are padded.
PointCloudScan read_ascii_points(std::istream& in, size_t n = 0);
PointCloudScan read_ascii_file(const std::string& path, size_t n = 0);

}  // namespace pcstream
