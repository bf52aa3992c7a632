#include "pcstream/scan_io.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bitstream.hpp"
#include "pcstream/error.hpp"

namespace pcstream {

std::vector<uint8_t> serialize_scan(const PointCloudScan& scan, const BoundingBox& box) {
  detail::ByteWriter w;
  w.buffer().reserve(kScanHeaderBytes + scan.size() * 12);
  w.bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>("PCS1"), 4));
  w.u32(static_cast<uint32_t>(scan.size()));
  for (float v : box.min) w.f32(v);
  for (float v : box.max) w.f32(v);
  for (const auto& p : scan.points) {
    w.f32(static_cast<float>(p.x));
    w.f32(static_cast<float>(p.y));
    w.f32(static_cast<float>(p.z));
  }
  return w.take();
}

PointCloudScan parse_scan(std::span<const uint8_t> bytes, BoundingBox* box) {
  detail::ByteReader br(bytes);
  const auto magic = br.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), "PCS1")) throw DecodeError("bad scan file magic");
  const uint32_t n = br.u32();
  BoundingBox b;
  for (auto& v : b.min) v = br.f32();
  for (auto& v : b.max) v = br.f32();
  if (br.remaining() != static_cast<size_t>(n) * 12) throw DecodeError("scan file size mismatch");
  PointCloudScan scan;
  scan.points.resize(n);
  for (auto& p : scan.points) {
    p.x = br.f32();
    p.y = br.f32();
    p.z = br.f32();
  }
  if (box) *box = b;
  return scan;
}

namespace {

std::vector<uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void write_scan_file(const std::string& path, const PointCloudScan& scan, const BoundingBox& box) {
  const auto bytes = serialize_scan(scan, box);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to " + path);
}

PointCloudScan read_scan_file(const std::string& path, BoundingBox* box) {
  return parse_scan(slurp(path), box);
}

PointCloudScan read_ascii_points(std::istream& in, size_t n) {
  PointCloudScan scan;
  std::vector<uint8_t> valid;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    for (char& ch : line) {
      if (ch == ',' || ch == ';' || ch == '\t') ch = ' ';
    }
    std::istringstream fields(line);
    std::string tok[3];
    int count = 0;
    std::string extra;
    while (count < 3 && fields >> tok[count]) ++count;
    if (count == 0) continue;
    if (count == 1 && (tok[0] == "nan" || tok[0] == "NaN" || tok[0] == "-")) {
      scan.points.push_back({});
      valid.push_back(0);
      continue;
    }
    if (count != 3 || (fields >> extra)) {
      throw DecodeError("line " + std::to_string(line_no) + ": expected three coordinates");
    }
    Point3 p;
    bool finite = true;
    for (int a = 0; a < 3; ++a) {
      try {
        size_t used = 0;
        p[a] = std::stod(tok[a], &used);
        if (used != tok[a].size()) throw std::invalid_argument(tok[a]);
      } catch (const std::exception&) {
        throw DecodeError("line " + std::to_string(line_no) + ": bad coordinate '" + tok[a] + "'");
      }
      finite = finite && std::isfinite(p[a]);
    }
    scan.points.push_back(p);
    valid.push_back(finite ? 1 : 0);
  }
  if (n != 0 && scan.points.size() > n) {
    throw ConfigError("point list has " + std::to_string(scan.points.size()) + " points, more than " +
                      std::to_string(n));
  }
  fill_missing_returns(scan, valid);
  if (n != 0) pad_to(scan, n);
  return scan;
}

PointCloudScan read_ascii_file(const std::string& path, size_t n) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return read_ascii_points(in, n);
}

}  // namespace pcstream
