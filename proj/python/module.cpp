#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>

#include "hdboot/deconv.hpp"
#include "hdboot/error.hpp"
#include "hdboot/mestim.hpp"
#include "hdboot/resample.hpp"
#include "hdboot/simharness.hpp"
#include "hdboot/theory.hpp"

namespace py = pybind11;
using namespace hdboot;

namespace {

Dataset make_dataset(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  Dataset ds;
  ds.X = X;
  ds.y = y;
  return ds;
}

Loss to_loss(const py::object& obj) {
  if (py::isinstance<Loss>(obj)) return obj.cast<Loss>();
  return Loss::parse(obj.cast<std::string>());
}

py::dict outcome_dict(const BootstrapOutcome& o) {
  py::dict d;
  d["replicates"] = o.replicates;
  d["point"] = o.point;
  d["ci"] = py::make_tuple(o.ci_lo, o.ci_hi);
  d["boot_variance"] = o.boot_variance;
  d["failed_replicates"] = o.failed_replicates;
  d["redraws"] = o.redraws;
  d["fallback"] = o.fallback;
  d["warnings"] = o.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Resampling inference for high-dimensional M-estimation";

  static py::exception<Error> exc(m, "HdbootError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object err = py::reinterpret_borrow<py::object>(exc.ptr())(e.what());
      err.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(exc.ptr(), err.ptr());
    }
  });

  py::class_<Loss>(m, "Loss")
      .def_static("squared", &Loss::squared)
      .def_static("huber", &Loss::huber, py::arg("k") = Loss::kDefaultHuberK)
      .def_static("absolute", &Loss::absolute)
      .def_static("smoothed_absolute", &Loss::smoothed_absolute, py::arg("eta"))
      .def_static("parse", [](const std::string& s) { return Loss::parse(s); })
      .def_property_readonly("name", &Loss::name)
      .def_property_readonly("param", &Loss::param)
      .def("rho", &Loss::rho)
      .def("psi", &Loss::psi)
      .def("psi_prime", &Loss::psi_prime)
      .def("prox", &Loss::prox, py::arg("x"), py::arg("c"))
      .def("__eq__", [](const Loss& a, const Loss& b) { return a == b; })
      .def("__repr__", [](const Loss& l) { return "Loss('" + l.name() + "')"; });

  m.def(
      "fit",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const py::object& loss) {
        const Loss l = to_loss(loss);
        FitResult f;
        {
          py::gil_scoped_release release;
          f = fit(make_dataset(X, y), l);
        }
        py::dict d;
        d["beta_hat"] = f.beta_hat;
        d["residuals"] = f.residuals;
        d["converged"] = f.converged;
        d["iterations"] = f.iterations;
        d["objective"] = f.objective;
        d["gradient_norm"] = f.gradient_norm;
        return d;
      },
      py::arg("X"), py::arg("y"), py::arg("loss") = "l2");

  m.def(
      "bootstrap",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const py::object& loss, const std::string& scheme,
         int B, std::uint64_t seed, const std::string& weights, double level,
         std::optional<Eigen::VectorXd> contrast, int threads) {
        const Loss l = to_loss(loss);
        ResamplingPlan plan;
        plan.scheme = parse_scheme(scheme);
        plan.B = B;
        plan.weights = WeightLaw::parse(weights);
        plan.ci_level = level;
        if (contrast) plan.v = *contrast;
        BootstrapOutcome o;
        {
          py::gil_scoped_release release;
          o = run_bootstrap(make_dataset(X, y), l, plan, seed, threads);
        }
        return outcome_dict(o);
      },
      py::arg("X"), py::arg("y"), py::arg("loss") = "l2", py::arg("scheme") = "pairs", py::arg("B") = 1000,
      py::arg("seed") = 1, py::arg("weights") = "poisson1", py::arg("level") = 0.95,
      py::arg("contrast") = py::none(), py::arg("threads") = 1);

  m.def(
      "jackknife",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const py::object& loss,
         const std::string& correction, double level, std::optional<Eigen::VectorXd> contrast) {
        const Loss l = to_loss(loss);
        const Dataset ds = make_dataset(X, y);
        const JackCorrection corr = parse_correction(correction);
        JackknifeOutcome j;
        std::optional<double> gh;
        {
          py::gil_scoped_release release;
          if (corr == JackCorrection::Gamma) gh = gamma_hat(ds, l);
          j = jackknife(ds, l, contrast ? *contrast : Eigen::VectorXd::Unit(ds.p(), 0), gh, corr, level);
        }
        py::dict d;
        d["point"] = j.point;
        d["var_jack"] = j.var_jack;
        d["corrected_ls"] = j.corrected_ls;
        d["corrected_gamma"] = j.corrected_gamma;
        d["ci"] = py::make_tuple(j.ci.lo, j.ci.hi);
        return d;
      },
      py::arg("X"), py::arg("y"), py::arg("loss") = "l2", py::arg("correction") = "none",
      py::arg("level") = 0.95, py::arg("contrast") = py::none());

  m.def("solve_c", [](const std::string& weights, double kappa) { return solve_c(WeightLaw::parse(weights), kappa); },
        py::arg("weights"), py::arg("kappa"));
  m.def(
      "boot_var_prediction",
      [](const std::string& weights, double kappa, double sigma) {
        const BootVarPrediction b = boot_var_prediction(WeightLaw::parse(weights), kappa, sigma);
        py::dict d;
        d["c"] = b.c;
        d["expected_boot_var_scaled"] = b.expected_boot_var_scaled;
        d["overestimation_factor"] = b.overestimation_factor;
        return d;
      },
      py::arg("weights"), py::arg("kappa"), py::arg("sigma") = 1.0);
  m.def("calibrate_alpha", &calibrate_alpha, py::arg("kappa"));
  m.def("jackknife_factor", &jackknife_factor, py::arg("kappa"));
  m.def(
      "gamma_hat",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const py::object& loss) {
        return gamma_hat(make_dataset(X, y), to_loss(loss));
      },
      py::arg("X"), py::arg("y"), py::arg("loss") = "l2");

  m.def(
      "solve_risk_system",
      [](const py::object& loss, const std::string& errors, double kappa, std::size_t mc_size, std::uint64_t seed) {
        const Loss l = to_loss(loss);
        const ErrorLaw law = parse_error_law(errors);
        RiskOptions opts;
        opts.mc_size = mc_size;
        opts.seed = seed;
        opts.error_variance = error_variance(law);
        RiskSystemSolution s;
        {
          py::gil_scoped_release release;
          s = solve_risk_system(l, error_sampler(law), kappa, opts);
        }
        py::dict d;
        d["c"] = s.c;
        d["r"] = s.r;
        d["residual_c"] = s.residual_c;
        d["residual_r"] = s.residual_r;
        d["iterations"] = s.iterations;
        return d;
      },
      py::arg("loss"), py::arg("errors") = "normal", py::arg("kappa"), py::arg("mc_size") = 1'000'000,
      py::arg("seed") = 20240101);

  m.def(
      "deconvolve_cdf",
      [](const Eigen::VectorXd& values, double noise_sd, std::optional<double> bandwidth) {
        const DeconvolvedCdf c = deconvolve_cdf(values, noise_sd, bandwidth);
        return py::make_tuple(c.grid, c.values, c.bandwidth);
      },
      py::arg("values"), py::arg("noise_sd"), py::arg("bandwidth") = py::none());

  m.def(
      "gen_design",
      [](const std::string& design, Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
        return gen_design(DesignSpec::parse(design), n, p, seed);
      },
      py::arg("design"), py::arg("n"), py::arg("p"), py::arg("seed"));
  m.def(
      "gen_errors",
      [](const std::string& law, Eigen::Index n, std::uint64_t seed) {
        return gen_errors(parse_error_law(law), n, seed);
      },
      py::arg("law"), py::arg("n"), py::arg("seed"));

  m.def(
      "run_experiment",
      [](const std::string& yaml_text) {
        const ExperimentConfig config = ExperimentConfig::from_yaml(yaml_text);
        SimReport rep;
        {
          py::gil_scoped_release release;
          rep = run_experiment(config);
        }
        py::list rows;
        for (const ReportRow& r : rep.rows) {
          py::dict d;
          d["kappa"] = r.kappa;
          d["scheme"] = r.scheme;
          d["loss"] = r.loss;
          d["metric"] = r.metric;
          d["value"] = r.value;
          d["se"] = r.se;
          d["n_sims"] = r.n_sims;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), "Runs a sweep described by a schema-1 configuration and returns its report rows.");
}
