#include "pcstream/residual_opt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "pcstream/error.hpp"

namespace pcstream {

const ResidualRow* ResidualTable::find(const CompressionConfig& config) const {
  for (const auto& r : rows) {
    if (r.config == config) return &r;
  }
  return nullptr;
}

ResidualTable calibrate(std::span<const PointCloudScan> corpus, const ConfigGrid& grid,
                        const CalibrationOptions& options) {
  if (corpus.empty()) throw ConfigError("calibration corpus is empty");
  if (grid.entries.empty()) throw ConfigError("calibration grid is empty");
  if (!(options.scan_hz > 0.0)) throw ConfigError("scan_hz must be positive");
  const size_t n = corpus.front().size();
  for (const auto& s : corpus) {
    if (s.size() != n) throw ConfigError("calibration scans must share one cardinality");
  }

  // q -> (c -> row slot)
  std::map<int, std::vector<std::pair<int, size_t>>> by_q;
  ResidualTable table;
  table.corpus_id = options.corpus_id;
  table.scans = corpus.size();
  table.n_points = static_cast<int64_t>(n);
  table.scan_hz = options.scan_hz;
  table.rows.resize(grid.entries.size());
  for (size_t i = 0; i < grid.entries.size(); ++i) {
    const auto& e = grid.entries[i];
    if (!e.valid()) throw ConfigError("grid contains an invalid config");
    table.rows[i].config = e;
    by_q[e.q].emplace_back(e.c, i);
  }

  std::vector<double> bits(table.rows.size(), 0.0);
  for (size_t k = 0; k < corpus.size(); ++k) {
    const auto& scan = corpus[k];
    for (const auto& [q, cols] : by_q) {
      const auto units = encode_levels(scan, q, options.codec);
      // Identical payloads decode identically; measure each distinct one once.
      const std::vector<uint8_t>* last_payload = nullptr;
      ResidualStats st;
      for (int c = kMinCompressionLevel; c <= kMaxCompressionLevel; ++c) {
        const auto& unit = units[static_cast<size_t>(c)];
        const bool wanted = std::any_of(cols.begin(), cols.end(), [&](const auto& p) { return p.first == c; });
        if (!wanted) continue;
        if (!last_payload || *last_payload != unit.payload) {
          st = residual(scan, decode(unit));
          last_payload = &unit.payload;
        }
        for (const auto& [cc, slot] : cols) {
          if (cc != c) continue;
          auto& row = table.rows[slot];
          bits[slot] += static_cast<double>(unit.payload_bits);
          row.mean_ptp += st.mean_ptp;
          row.l2_norm += st.l2_norm;
          row.max_ptp = std::max(row.max_ptp, st.max_ptp);
          row.worst_mean_ptp = std::max(row.worst_mean_ptp, st.mean_ptp);
          row.worst_max_ptp = std::max(row.worst_max_ptp, st.max_ptp);
          row.worst_l2_norm = std::max(row.worst_l2_norm, st.l2_norm);
          if (options.per_scan) {
            options.per_scan->push_back({k, unit.config_used, unit.payload_bits, st.mean_ptp, st.max_ptp, st.l2_norm});
          }
        }
      }
    }
  }
  const double scans = static_cast<double>(corpus.size());
  for (size_t i = 0; i < table.rows.size(); ++i) {
    auto& row = table.rows[i];
    row.mean_ptp /= scans;
    row.l2_norm /= scans;
    row.measured_bps = bits[i] / scans * options.scan_hz;
  }
  return table;
}

double row_metric(const ResidualRow& row, ResidualMetric metric, Feasibility mode) {
  const bool worst = mode == Feasibility::kPerScanWorst;
  switch (metric) {
    case ResidualMetric::kMaxPtp:
      return worst ? row.worst_max_ptp : row.max_ptp;
    case ResidualMetric::kL2Norm:
      return worst ? row.worst_l2_norm : row.l2_norm;
    default:
      return worst ? row.worst_mean_ptp : row.mean_ptp;
  }
}

RateBounds min_rate(const ResidualTable& table, double epsilon, ResidualMetric metric, double r_max,
                    Feasibility mode) {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (table.rows.empty()) throw ConfigError("residual table is empty");
  RateBounds b;
  b.epsilon = epsilon;
  b.metric = metric;
  b.mode = mode;
  b.r_max = r_max;
  b.floor_config.allowed.reset();
  b.floor_config.min_q = kMaxQuantBits + 1;
  b.r_min = std::numeric_limits<double>::infinity();
  double best_metric = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& row : table.rows) {
    const double m = row_metric(row, metric, mode);
    best_metric = std::min(best_metric, m);
    if (!(m <= epsilon)) continue;
    any = true;
    b.floor_config.allowed.set(static_cast<size_t>(grid_index(row.config)));
    b.floor_config.min_q = std::min(b.floor_config.min_q, row.config.q);
    if (row.measured_bps < b.r_min) {
      b.r_min = row.measured_bps;
      b.r_min_config = row.config;
    }
  }
  if (!any) {
    std::ostringstream os;
    os << "no configuration meets " << to_string(metric) << " <= " << epsilon
       << " m; smallest achievable is " << best_metric << " m";
    throw InfeasibleError(os.str(), best_metric);
  }
  if (!(b.r_min > 0.0)) throw ConfigError("calibration table has a nonpositive rate");
  if (b.r_min > r_max) {
    throw ConfigError("r_min " + std::to_string(b.r_min) + " bps exceeds r_max " + std::to_string(r_max));
  }
  return b;
}

ResidualMetric parse_metric(const std::string& name) {
  if (name == "mean_ptp") return ResidualMetric::kMeanPtp;
  if (name == "max_ptp") return ResidualMetric::kMaxPtp;
  if (name == "l2_norm") return ResidualMetric::kL2Norm;
  throw ConfigError("unknown metric '" + name + "' (expected mean_ptp, max_ptp or l2_norm)");
}

std::string to_string(ResidualMetric metric) {
  switch (metric) {
    case ResidualMetric::kMaxPtp:
      return "max_ptp";
    case ResidualMetric::kL2Norm:
      return "l2_norm";
    default:
      return "mean_ptp";
  }
}

namespace {
constexpr const char* kTableHeader =
    "q,c,mean_ptp,max_ptp,measured_bps,l2_norm,worst_mean_ptp,worst_max_ptp,worst_l2_norm";
}

void write_table_csv(const std::string& path, const ResidualTable& table) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << std::setprecision(17);
  out << "# corpus " << table.corpus_id << " scans " << table.scans << " n_points " << table.n_points
      << " scan_hz " << table.scan_hz << "\n";
  out << kTableHeader << "\n";
  for (const auto& r : table.rows) {
    out << r.config.q << "," << r.config.c << "," << r.mean_ptp << "," << r.max_ptp << ","
        << r.measured_bps << "," << r.l2_norm << "," << r.worst_mean_ptp << "," << r.worst_max_ptp
        << "," << r.worst_l2_norm << "\n";
  }
  if (!out) throw ConfigError("short write to " + path);
}

ResidualTable read_table_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  ResidualTable t;
  std::string line;
  size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string key;
      while (meta >> key) {
        if (key == "corpus") meta >> t.corpus_id;
        else if (key == "scans") meta >> t.scans;
        else if (key == "n_points") meta >> t.n_points;
        else if (key == "scan_hz") meta >> t.scan_hz;
      }
      continue;
    }
    if (!header) {
      // The five leading columns are required; the rest are optional.
      if (line.rfind("q,c,mean_ptp,max_ptp,measured_bps", 0) != 0) {
        throw DecodeError(path + ": unexpected header '" + line + "'");
      }
      header = true;
      continue;
    }
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fs(line);
    ResidualRow r;
    if (!(fs >> r.config.q >> r.config.c >> r.mean_ptp >> r.max_ptp >> r.measured_bps)) {
      throw DecodeError(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    if (!r.config.valid()) throw DecodeError(path + ":" + std::to_string(line_no) + ": invalid q/c");
    r.worst_mean_ptp = r.mean_ptp;
    r.worst_max_ptp = r.max_ptp;
    if (fs >> r.l2_norm) {
      fs >> r.worst_mean_ptp >> r.worst_max_ptp >> r.worst_l2_norm;
    }
    t.rows.push_back(r);
  }
  if (!header) throw DecodeError(path + ": missing header");
  return t;
}

}  // namespace pcstream
