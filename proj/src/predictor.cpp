#include "pcstream/predictor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "pcstream/error.hpp"

namespace pcstream {

const std::array<const char*, kNumFeatures> kFeatureNames = {"q",   "c",   "n",   "q^2", "c^2",
                                                             "n^2", "q*c", "q*n", "c*n"};

Features featurize(int q, int c, int64_t n) {
  const double fq = q;
  const double fc = c;
  const double fn = static_cast<double>(n);
  return {fq, fc, fn, fq * fq, fc * fc, fn * fn, fq * fc, fq * fn, fc * fn};
}

Features FeatureScaling::apply(const Features& raw) const {
  Features out;
  for (int j = 0; j < kNumFeatures; ++j) out[j] = (raw[j] - mean[j]) / scale[j];
  return out;
}

Features RateModel::raw_alpha() const {
  Features out;
  for (int j = 0; j < kNumFeatures; ++j) out[j] = alpha[j] / scaling.scale[j];
  return out;
}

double RateModel::raw_beta() const {
  double b = beta;
  for (int j = 0; j < kNumFeatures; ++j) b -= alpha[j] * scaling.mean[j] / scaling.scale[j];
  return b;
}

namespace {

// Candidates are admitted in this order, so when q*n is collinear with q (n
// constant) it is q*n that gets dropped.
constexpr std::array<int, kNumFeatures> kAdmitOrder = {0, 1, 3, 4, 6, 2, 5, 7, 8};
constexpr bool involves_n(int j) { return j == 2 || j == 5 || j == 7 || j == 8; }

constexpr double kDependenceTol = 1e-8;

std::string join_names(const std::vector<int>& idx) {
  std::string s;
  for (int j : idx) {
    if (!s.empty()) s += ", ";
    s += kFeatureNames[j];
  }
  return s;
}

}  // namespace

RateModel fit(std::span<const RateSample> samples, double scan_hz) {
  if (!(scan_hz > 0.0)) throw ConfigError("scan_hz must be positive");
  const auto m = static_cast<Eigen::Index>(samples.size());
  if (m == 0) throw FitError("no training samples");
  for (const auto& s : samples) {
    if (!CompressionConfig{s.q, s.c}.valid() || !(s.measured_bps > 0.0) ||
        !std::isfinite(s.measured_bps)) {
      throw ConfigError("invalid training sample q=" + std::to_string(s.q) +
                        " c=" + std::to_string(s.c));
    }
  }

  Eigen::MatrixXd raw(m, kNumFeatures);
  Eigen::VectorXd y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& s = samples[static_cast<size_t>(i)];
    const Features f = featurize(s.q, s.c, s.n_points);
    for (int j = 0; j < kNumFeatures; ++j) raw(i, j) = f[j];
    y(i) = s.measured_bps;
  }

  RateModel model;
  model.scan_hz = scan_hz;
  Eigen::MatrixXd z(m, kNumFeatures);
  for (int j = 0; j < kNumFeatures; ++j) {
    const double mean = raw.col(j).mean();
    const double sd = std::sqrt((raw.col(j).array() - mean).square().mean());
    model.scaling.mean[j] = mean;
    model.scaling.scale[j] = sd > 0.0 ? sd : 1.0;
    z.col(j) = (raw.col(j).array() - mean) / model.scaling.scale[j];
  }

  // Greedy rank test: a feature is degenerate when its standardized column
  // lies in the span of the intercept and the features admitted before it.
  std::vector<int> active;
  std::vector<int> degenerate;
  Eigen::MatrixXd basis = Eigen::MatrixXd::Ones(m, 1);
  for (int j : kAdmitOrder) {
    const Eigen::VectorXd col = z.col(j);
    const double norm = col.norm();
    bool independent = false;
    if (norm > 0.0) {
      const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(col);
      independent = (col - basis * coef).norm() > kDependenceTol * norm;
    }
    if (independent) {
      active.push_back(j);
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = col;
    } else {
      degenerate.push_back(j);
    }
  }
  std::vector<int> fatal;
  for (int j : degenerate) {
    if (!involves_n(j)) fatal.push_back(j);
  }
  if (!fatal.empty()) {
    throw FitError("rank-deficient design matrix; degenerate features: " + join_names(fatal));
  }

  std::set<int> qs;
  std::set<int> cs;
  for (const auto& s : samples) {
    qs.insert(s.q);
    cs.insert(s.c);
  }
  if (samples.size() < 30 || qs.size() < 5 || cs.size() < 3) {
    throw FitError("need >= 30 samples over >= 5 distinct q and >= 3 distinct c (got " +
                   std::to_string(samples.size()) + " samples, " + std::to_string(qs.size()) +
                   " q, " + std::to_string(cs.size()) + " c)");
  }

  // basis = [1 | active columns]
  const Eigen::VectorXd sol = basis.colPivHouseholderQr().solve(y);
  model.beta = sol(0);
  model.alpha.fill(0.0);
  for (size_t k = 0; k < active.size(); ++k) model.alpha[active[k]] = sol(static_cast<Eigen::Index>(k + 1));
  for (int j : degenerate) {
    model.diagnostics.inactive.set(static_cast<size_t>(j));
    // Pin inactive features to identity scaling so they read as exactly 0.
    model.scaling.mean[j] = 0.0;
    model.scaling.scale[j] = 1.0;
  }

  const Eigen::VectorXd resid = y - basis * sol;
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  auto& d = model.diagnostics;
  d.samples = samples.size();
  d.rmse = std::sqrt(ss_res / static_cast<double>(m));
  d.relative_rmse = d.rmse / y.mean();
  d.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return model;
}

double predict(const RateModel& model, int q, int c, int64_t n) {
  const Features f = model.scaling.apply(featurize(q, c, n));
  double r = model.beta;
  for (int j = 0; j < kNumFeatures; ++j) {
    if (model.alpha[j] != 0.0) r += model.alpha[j] * f[j];
  }
  return std::max(1.0, r);
}

double relative_rmse(const RateModel& model, std::span<const RateSample> samples) {
  if (samples.empty()) return 0.0;
  double ss = 0.0;
  double sum = 0.0;
  for (const auto& s : samples) {
    const double e = predict(model, s.q, s.c, s.n_points) - s.measured_bps;
    ss += e * e;
    sum += s.measured_bps;
  }
  const double n = static_cast<double>(samples.size());
  return std::sqrt(ss / n) / (sum / n);
}

// ---- grid ---------------------------------------------------------------------

int grid_index(const CompressionConfig& config) {
  return (config.q - kMinQuantBits) * kNumC + (config.c - kMinCompressionLevel);
}

CompressionConfig grid_config(int index) {
  return {kMinQuantBits + index / kNumC, kMinCompressionLevel + index % kNumC};
}

bool ConfigFloor::allows(const CompressionConfig& config) const {
  return config.valid() && config.q >= min_q && allowed.test(static_cast<size_t>(grid_index(config)));
}

ConfigGrid ConfigGrid::full() {
  ConfigGrid g;
  g.entries.reserve(kGridSize);
  for (int i = 0; i < kGridSize; ++i) g.entries.push_back(grid_config(i));
  return g;
}

ConfigGrid ConfigGrid::predicted(const RateModel& model, int64_t n) {
  ConfigGrid g = full();
  g.predicted_bps.reserve(g.entries.size());
  for (const auto& e : g.entries) g.predicted_bps.push_back(predict(model, e.q, e.c, n));
  return g;
}

CompressionConfig select_config(const ConfigGrid& grid, double r_trg, const ConfigFloor& floor) {
  if (!(r_trg > 0.0) || !std::isfinite(r_trg)) throw ConfigError("target bitrate must be positive");
  if (grid.predicted_bps.size() != grid.entries.size()) {
    throw ConfigError("config grid has no predictions");
  }
  bool found = false;
  CompressionConfig best;
  double best_err = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < grid.entries.size(); ++i) {
    const auto& e = grid.entries[i];
    if (!floor.allows(e)) continue;
    const double err = std::abs(grid.predicted_bps[i] - r_trg);
    const bool better = !found || err < best_err ||
                        (err == best_err && (e.q > best.q || (e.q == best.q && e.c < best.c)));
    if (better) {
      found = true;
      best = e;
      best_err = err;
    }
  }
  if (!found) throw ConfigError("no grid entry satisfies the configuration floor");
  return best;
}

CompressionConfig select_config(const RateModel& model, double r_trg, int64_t n,
                                const ConfigFloor& floor) {
  return select_config(ConfigGrid::predicted(model, n), r_trg, floor);
}

// ---- artifacts ----------------------------------------------------------------

namespace {

constexpr const char* kModelMagic = "pcstream-rate-model";
constexpr int kModelVersion = 1;

std::ostream& full_precision(std::ostream& os) { return os << std::setprecision(17); }

template <typename T>
T read_field(std::istream& in, const std::string& key) {
  std::string k;
  T v{};
  if (!(in >> k) || k != key || !(in >> v)) throw DecodeError("model file: expected '" + key + "'");
  return v;
}

}  // namespace

std::string serialize_model(const RateModel& model) {
  std::ostringstream os;
  full_precision(os);
  os << kModelMagic << " v" << kModelVersion << "\n";
  os << "scan_hz " << model.scan_hz << "\n";
  os << "beta " << model.beta << "\n";
  os << "# feature name alpha mean scale active\n";
  for (int j = 0; j < kNumFeatures; ++j) {
    os << "feature " << kFeatureNames[j] << " " << model.alpha[j] << " " << model.scaling.mean[j]
       << " " << model.scaling.scale[j] << " " << (model.diagnostics.inactive.test(j) ? 0 : 1) << "\n";
  }
  const auto& d = model.diagnostics;
  os << "samples " << d.samples << "\n";
  os << "r2 " << d.r2 << "\n";
  os << "rmse " << d.rmse << "\n";
  os << "relative_rmse " << d.relative_rmse << "\n";
  return os.str();
}

RateModel parse_model(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  std::string version;
  if (!(in >> magic >> version) || magic != kModelMagic) throw DecodeError("not a rate model file");
  if (version != "v" + std::to_string(kModelVersion)) {
    throw DecodeError("unsupported rate model version " + version);
  }
  RateModel m;
  m.scan_hz = read_field<double>(in, "scan_hz");
  m.beta = read_field<double>(in, "beta");
  // skip the column comment
  std::string line;
  std::getline(in, line);
  while (in.peek() == '#' || in.peek() == '\n') std::getline(in, line);
  for (int j = 0; j < kNumFeatures; ++j) {
    std::string key;
    std::string name;
    int active = 1;
    if (!(in >> key >> name) || key != "feature" || name != kFeatureNames[j] ||
        !(in >> m.alpha[j] >> m.scaling.mean[j] >> m.scaling.scale[j] >> active)) {
      throw DecodeError(std::string("model file: bad feature line for ") + kFeatureNames[j]);
    }
    if (!(m.scaling.scale[j] > 0.0)) throw DecodeError("model file: nonpositive feature scale");
    m.diagnostics.inactive.set(static_cast<size_t>(j), active == 0);
  }
  m.diagnostics.samples = read_field<size_t>(in, "samples");
  m.diagnostics.r2 = read_field<double>(in, "r2");
  m.diagnostics.rmse = read_field<double>(in, "rmse");
  m.diagnostics.relative_rmse = read_field<double>(in, "relative_rmse");
  if (!(m.scan_hz > 0.0)) throw DecodeError("model file: scan_hz must be positive");
  return m;
}

void save_model(const std::string& path, const RateModel& model) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << serialize_model(model);
}

RateModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

void write_samples_csv(const std::string& path, std::span<const RateSample> samples) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  full_precision(out);
  out << "q,c,n_points,measured_bps\n";
  for (const auto& s : samples) out << s.q << "," << s.c << "," << s.n_points << "," << s.measured_bps << "\n";
}

std::vector<RateSample> read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("q,c,n_points,measured_bps", 0) != 0) {
    throw DecodeError(path + ": missing q,c,n_points,measured_bps header");
  }
  std::vector<RateSample> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fs(line);
    RateSample s;
    if (!(fs >> s.q >> s.c >> s.n_points >> s.measured_bps)) {
      throw DecodeError(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    out.push_back(s);
  }
  return out;
}

// ---- training corpus ----------------------------------------------------------

std::vector<RateSample> sample_rates(const TrainingCorpusConfig& config) {
  const double hz = config.source.scan_hz;
  if (!(config.duration > 0.0) || !(config.window > 0.0)) throw ConfigError("invalid corpus duration");
  const auto per_window = static_cast<int>(std::llround(config.window * hz));
  if (per_window < 1) throw ConfigError("window shorter than one scan");
  const auto windows = static_cast<int>(std::floor(config.duration / config.window + 1e-9));
  SyntheticScanSource source(config.source);
  std::mt19937_64 rng(config.config_seed);
  std::vector<RateSample> out;
  out.reserve(static_cast<size_t>(windows));
  for (int w = 0; w < windows; ++w) {
    const CompressionConfig cfg = grid_config(static_cast<int>(rng() % kGridSize));
    double bits = 0.0;
    int64_t n = 0;
    for (int k = 0; k < per_window; ++k) {
      const int64_t idx = int64_t{w} * per_window + k;
      const auto scan = source.generate(static_cast<double>(idx) / hz, static_cast<uint32_t>(idx));
      bits += static_cast<double>(encode(scan, cfg, config.codec).payload_bits);
      n = static_cast<int64_t>(scan.size());
    }
    out.push_back({cfg.q, cfg.c, n, bits / per_window * hz});
  }
  return out;
}

}  // namespace pcstream
