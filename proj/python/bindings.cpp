#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pcstream/error.hpp"
#include "pcstream/pipeline.hpp"

namespace py = pybind11;
using namespace pcstream;

namespace {

PointCloudScan scan_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw ConfigError("points must have shape (N, 3)");
  PointCloudScan s;
  s.points.resize(static_cast<size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) s.points[static_cast<size_t>(i)] = {r(i, 0), r(i, 1), r(i, 2)};
  return s;
}

py::array_t<double> array_from_scan(const PointCloudScan& s) {
  py::array_t<double> a({static_cast<py::ssize_t>(s.points.size()), py::ssize_t{3}});
  auto w = a.mutable_unchecked<2>();
  for (size_t i = 0; i < s.points.size(); ++i) {
    const auto k = static_cast<py::ssize_t>(i);
    w(k, 0) = s.points[i].x;
    w(k, 1) = s.points[i].y;
    w(k, 2) = s.points[i].z;
  }
  return a;
}

py::dict summary_dict(const RunSummary& s) {
  py::module_ json = py::module_::import("json");
  return json.attr("loads")(summary_json(s));
}

RateControlInputs inputs_from(const std::string& model_path, const std::string& table_path, double epsilon,
                              const std::string& metric, double r_max) {
  return {load_model(model_path), min_rate(read_table_csv(table_path), epsilon, parse_metric(metric), r_max)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Rate-adaptive LiDAR point cloud streaming";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DecodeError>(m, "DecodeError", base.ptr());
  py::register_exception<OutOfRangeError>(m, "OutOfRangeError", base.ptr());
  py::register_exception<FitError>(m, "FitError", base.ptr());
  py::register_exception<InfeasibleError>(m, "InfeasibleError", base.ptr());
  py::register_exception<ProtocolError>(m, "ProtocolError", base.ptr());
  py::register_exception<InvariantViolation>(m, "InvariantViolation", base.ptr());

  py::class_<EncodedUnit>(m, "EncodedUnit")
      .def_readonly("scan_id", &EncodedUnit::scan_id)
      .def_readonly("payload_bits", &EncodedUnit::payload_bits)
      .def_property_readonly("q", [](const EncodedUnit& u) { return u.config_used.q; })
      .def_property_readonly("c", [](const EncodedUnit& u) { return u.config_used.c; })
      .def("to_bytes", [](const EncodedUnit& u) {
        const auto b = serialize_unit(u);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      })
      .def_static("from_bytes", [](py::bytes b) {
        const std::string s = b;
        return parse_unit(std::span(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
      });

  m.def(
      "encode",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> points, int q, int c, uint32_t row_stride) {
        CodecOptions o;
        o.row_stride = row_stride;
        return encode(scan_from_array(points), {q, c}, o);
      },
      py::arg("points"), py::arg("q"), py::arg("c"), py::arg("row_stride") = 1024);
  m.def("decode", [](const EncodedUnit& u) { return array_from_scan(decode(u)); });
  m.def("residual", [](py::array_t<double, py::array::c_style | py::array::forcecast> original,
                       py::array_t<double, py::array::c_style | py::array::forcecast> decoded) {
    const auto st = residual(scan_from_array(original), scan_from_array(decoded));
    py::dict d;
    d["mean_ptp"] = st.mean_ptp;
    d["max_ptp"] = st.max_ptp;
    d["l2_norm"] = st.l2_norm;
    d["counted"] = st.counted;
    return d;
  });

  m.def(
      "synthetic_scan",
      [](uint64_t seed, double t, const std::string& environment, int rings, int columns) {
        ScanSourceConfig cfg;
        cfg.seed = seed;
        cfg.environment = parse_environment(environment);
        cfg.sensor.rings = rings;
        cfg.sensor.columns = columns;
        return array_from_scan(SyntheticScanSource(cfg).generate(t));
      },
      py::arg("seed") = 1, py::arg("t") = 0.0, py::arg("environment") = "urban", py::arg("rings") = 32,
      py::arg("columns") = 1024);

  m.def(
      "target_bitrate",
      [](double w_ref, double srtt, double r_min, double r_max) {
        ControlParams p;
        p.r_min = r_min;
        p.r_max = r_max;
        CongestionState s = make_congestion_state(p);
        s.w_ref = w_ref;
        s.srtt = srtt;
        return target_bitrate(s, p);
      },
      py::arg("w_ref"), py::arg("srtt"), py::arg("r_min") = 3e6, py::arg("r_max") = 10e6);

  m.def(
      "calibrate",
      [](const std::string& table_path, const std::string& model_path, size_t scans, uint64_t seed,
         const std::string& environment, double train_duration) {
        CalibrationSpec spec;
        spec.scans = scans;
        spec.source.seed = seed;
        spec.source.environment = parse_environment(environment);
        spec.train_duration = train_duration;
        Calibration c;
        {
          py::gil_scoped_release release;
          c = run_calibration(spec);
        }
        write_table_csv(table_path, c.table);
        save_model(model_path, c.model);
        py::dict d;
        d["scans"] = c.table.scans;
        d["configs"] = c.table.rows.size();
        d["samples"] = c.model.diagnostics.samples;
        d["relative_rmse"] = c.model.diagnostics.relative_rmse;
        return d;
      },
      py::arg("table"), py::arg("model"), py::arg("scans") = 60, py::arg("seed") = 1000,
      py::arg("environment") = "urban", py::arg("train_duration") = 600.0);

  m.def(
      "min_rate",
      [](const std::string& table_path, double epsilon, const std::string& metric, double r_max) {
        const auto b = min_rate(read_table_csv(table_path), epsilon, parse_metric(metric), r_max);
        py::dict d;
        d["r_min"] = b.r_min;
        d["r_max"] = b.r_max;
        d["q_floor"] = b.floor_config.min_q;
        d["r_min_config"] = py::make_tuple(b.r_min_config.q, b.r_min_config.c);
        d["feasible_configs"] = b.floor_config.allowed.count();
        return d;
      },
      py::arg("table"), py::arg("epsilon") = 0.05, py::arg("metric") = "mean_ptp", py::arg("r_max") = 10e6);

  m.def(
      "predict",
      [](const std::string& model_path, int q, int c, int64_t n) { return predict(load_model(model_path), q, c, n); },
      py::arg("model"), py::arg("q"), py::arg("c"), py::arg("n") = 32768);

  m.def(
      "select_config",
      [](const std::string& model_path, double r_trg, int64_t n, int min_q) {
        ConfigFloor f;
        f.min_q = min_q;
        const auto cfg = select_config(load_model(model_path), r_trg, n, f);
        return py::make_tuple(cfg.q, cfg.c);
      },
      py::arg("model"), py::arg("r_trg"), py::arg("n") = 32768, py::arg("min_q") = kMinQuantBits);

  m.def(
      "run",
      [](const std::string& scenario, const std::string& model, const std::string& table, double epsilon,
         const std::string& metric, double duration, const std::string& mode) {
        ScenarioConfig sc = load_scenario(scenario);
        if (duration > 0.0) sc.duration = duration;
        sc.mode = parse_mode(mode);
        RunResult r;
        if (sc.mode == RunMode::kAdaptive) {
          if (model.empty() || table.empty()) throw ConfigError("adaptive runs need model and table");
          const RateControlInputs in = inputs_from(model, table, epsilon, metric, sc.control.r_max);
          py::gil_scoped_release release;
          r = run_scenario(sc, &in);
        } else {
          py::gil_scoped_release release;
          r = run_scenario(sc, nullptr);
        }
        py::dict d;
        d["summary"] = summary_dict(r.summary);
        d["metrics_csv"] = metrics_csv(r.rows);
        return d;
      },
      py::arg("scenario"), py::arg("model") = "", py::arg("table") = "", py::arg("epsilon") = 0.05,
      py::arg("metric") = "mean_ptp", py::arg("duration") = 0.0, py::arg("mode") = "adaptive");
}
