// Python bindings. Arrays cross the boundary as NumPy vectors; structured
// inputs and outputs (specs, configs, reports) cross as JSON text and are
// turned into dicts by the pure-Python layer in tvsurv/__init__.py.

#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tvsurv/cohort.hpp"
#include "tvsurv/cox.hpp"
#include "tvsurv/error.hpp"
#include "tvsurv/km.hpp"
#include "tvsurv/metrics.hpp"
#include "tvsurv/pipeline.hpp"
#include "tvsurv/simgen.hpp"

namespace py = pybind11;
using namespace tvsurv;

namespace {

using Doubles = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Flags = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Doubles& a) {
  if (a.ndim() != 1) throw Error(ErrorCode::InvalidArgument, "expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

std::vector<std::uint8_t> to_flags(const Flags& a) {
  if (a.ndim() != 1) throw Error(ErrorCode::InvalidArgument, "expected a 1-d array");
  std::vector<std::uint8_t> out(a.data(), a.data() + a.size());
  for (auto& v : out) v = v ? 1 : 0;
  return out;
}

double or_nan(bool defined, double v) { return defined ? v : std::numeric_limits<double>::quiet_NaN(); }

py::dict curve_dict(const SurvivalCurve& c) {
  py::dict d;
  d["times"] = c.times;
  d["survival"] = c.values;
  d["variance"] = c.variance;
  d["truncated"] = c.truncated;
  return d;
}

std::vector<CountingProcessRow> rows_from_arrays(const std::vector<std::string>& ids, const std::vector<double>& start,
                                                 const std::vector<double>& stop,
                                                 const std::vector<std::uint8_t>& event, const RowMatrix& x) {
  const std::size_t n = ids.size();
  if (start.size() != n || stop.size() != n || event.size() != n || static_cast<std::size_t>(x.rows()) != n) {
    throw Error(ErrorCode::InvalidArgument, "episode arrays differ in length");
  }
  std::vector<CountingProcessRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].patient_id = ids[i];
    rows[i].start_days = static_cast<std::int64_t>(std::llround(start[i]));
    rows[i].stop_days = static_cast<std::int64_t>(std::llround(stop[i]));
    rows[i].event = event[i] != 0;
    rows[i].covariates.assign(x.row(static_cast<Eigen::Index>(i)).data(),
                              x.row(static_cast<Eigen::Index>(i)).data() + x.cols());
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Survival models with time-varying covariates";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::handle(error.ptr())(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  m.def(
      "kaplan_meier",
      [](const Doubles& entry, const Doubles& exit, const Flags& event) {
        return curve_dict(fit_km(to_vec(entry), to_vec(exit), to_flags(event)));
      },
      py::arg("entry"), py::arg("exit"), py::arg("event"));

  m.def(
      "nelson_aalen",
      [](const Doubles& entry, const Doubles& exit, const Flags& event) {
        const HazardCurve h = fit_nelson_aalen(to_vec(entry), to_vec(exit), to_flags(event));
        py::dict d;
        d["times"] = h.times;
        d["cumulative_hazard"] = h.cumulative;
        return d;
      },
      py::arg("entry"), py::arg("exit"), py::arg("event"));

  m.def(
      "harrell_c",
      [](const Doubles& risk, const Doubles& time, const Flags& event) {
        const Concordance c = harrell_c(to_vec(risk), to_vec(time), to_flags(event));
        return or_nan(c.defined, c.value);
      },
      py::arg("risk"), py::arg("time"), py::arg("event"));

  m.def(
      "auroc",
      [](const Doubles& scores, const Flags& positive) {
        const Discrimination d = auroc(to_vec(scores), to_flags(positive));
        return or_nan(d.defined, d.value);
      },
      py::arg("scores"), py::arg("positive"));

  m.def(
      "auroc_1y",
      [](const Doubles& risk, const Doubles& time, const Flags& event, double horizon) {
        const Discrimination d = auroc_1y(to_vec(risk), to_vec(time), to_flags(event), horizon);
        return or_nan(d.defined, d.value);
      },
      py::arg("risk"), py::arg("time"), py::arg("event"), py::arg("horizon") = kOneYear);

  m.def(
      "brier",
      [](const Doubles& survival_at_t, const Doubles& time, const Flags& event, double t) {
        const auto tv = to_vec(time);
        const auto ev = to_flags(event);
        return brier_at(to_vec(survival_at_t), tv, ev, fit_censoring_km(tv, ev), t).value;
      },
      py::arg("survival_at_t"), py::arg("time"), py::arg("event"), py::arg("t"));

  m.def(
      "fit_cox",
      [](const std::vector<std::string>& patient_ids, const Doubles& start, const Doubles& stop, const Flags& event,
         const RowMatrix& x, std::vector<std::string> feature_names, double lam, double l1_ratio) {
        if (feature_names.empty()) {
          for (Eigen::Index j = 0; j < x.cols(); ++j) feature_names.push_back("x" + std::to_string(j));
        }
        const auto rows = rows_from_arrays(patient_ids, to_vec(start), to_vec(stop), to_flags(event), x);
        const EpisodeTable table = EpisodeTable::from_rows(rows, feature_names);
        PenaltySpec penalty;
        penalty.lambda = lam;
        penalty.l1_ratio = l1_ratio;
        const CoxFit fit = fit_cox_td(table, penalty, {});
        py::dict d;
        d["beta"] = fit.beta;
        d["feature_names"] = fit.feature_names;
        d["converged"] = fit.diagnostics.converged;
        d["iterations"] = fit.diagnostics.iterations;
        d["log_likelihood"] = fit.diagnostics.log_likelihood;
        d["null_log_likelihood"] = fit.diagnostics.null_log_likelihood;
        d["baseline_times"] = fit.baseline.times;
        d["baseline_cumulative_hazard"] = fit.baseline.cumulative;
        return d;
      },
      py::arg("patient_ids"), py::arg("start"), py::arg("stop"), py::arg("event"), py::arg("x"),
      py::arg("feature_names") = std::vector<std::string>{}, py::arg("lam") = 0.0, py::arg("l1_ratio") = 1.0);

  m.def(
      "_simulate",
      [](const std::string& spec_json) {
        const SimResult r = generate(SimSpec::from_json(nlohmann::json::parse(spec_json)));
        std::ostringstream csv;
        write_long_csv(csv, r.cohort);
        return py::make_tuple(csv.str(), truth_to_json(r.truth).dump());
      },
      py::arg("spec_json"));

  m.def(
      "_run_experiment",
      [](const std::string& config_json) {
        const ExperimentConfig c = ExperimentConfig::from_json(nlohmann::json::parse(config_json));
        std::ostringstream out;
        {
          py::gil_scoped_release release;
          const PreparedData data = prepare(c);
          write_eval_csv(out, run_evaluate(run_fit(c, data), data).reports);
        }
        return out.str();
      },
      py::arg("config_json"));
}
