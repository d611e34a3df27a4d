// Command-line front end for the hdboot library.

#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdboot/deconv.hpp"
#include "hdboot/error.hpp"
#include "hdboot/io.hpp"
#include "hdboot/mestim.hpp"
#include "hdboot/resample.hpp"
#include "hdboot/simharness.hpp"
#include "hdboot/theory.hpp"

using namespace hdboot;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kDataHelp =
    "Headerless CSV, one observation per line, predictors first and the response in the last column";

struct Globals {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output = "csv";
};

// Shortest text that reads back to the same double.
std::string full_precision(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x == 0.0 ? 0.0 : x);
  return std::string(buf, res.ptr);
}

void csv_value(std::ostream& os, const std::string& key, const ojson& v) {
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) csv_value(os, key + "[" + std::to_string(i) + "]", v[i]);
  } else if (v.is_object()) {
    for (const auto& [k, x] : v.items()) csv_value(os, key + "." + k, x);
  } else if (v.is_number_float()) {
    os << key << ',' << full_precision(v.get<double>()) << '\n';
  } else if (v.is_string()) {
    os << key << ',' << v.get<std::string>() << '\n';
  } else {
    os << key << ',' << v.dump() << '\n';
  }
}

void emit(const Globals& g, const ojson& record) {
  if (g.output == "json") {
    std::cout << record.dump(2) << '\n';
    return;
  }
  std::cout << "field,value\n";
  for (const auto& [k, v] : record.items()) csv_value(std::cout, k, v);
}

ojson to_json(const Eigen::VectorXd& v) {
  ojson a = ojson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Loss make_loss(const std::string& name, std::optional<double> k, std::optional<double> eta) {
  if (name == "huber" && k) return Loss::huber(*k);
  if (name == "smoothed_l1" && eta) return Loss::smoothed_absolute(*eta);
  if (k && name != "huber") throw Error(ErrorCode::InvalidArgument, "--k only applies to huber");
  if (eta && name != "smoothed_l1") throw Error(ErrorCode::InvalidArgument, "--eta only applies to smoothed_l1");
  return Loss::parse(name);
}

Eigen::VectorXd parse_contrast(const std::string& text, Eigen::Index p) {
  if (text.empty()) return Eigen::VectorXd::Unit(p, 0);
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      vals.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "--contrast: '" + item + "' is not a number");
    }
  }
  if (static_cast<Eigen::Index>(vals.size()) != p) {
    throw Error(ErrorCode::InvalidArgument, "--contrast needs " + std::to_string(p) + " entries");
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), p);
}

struct LossFlags {
  std::string name = "l2";
  std::optional<double> k;
  std::optional<double> eta;

  void add(CLI::App* app) {
    app->add_option("--loss", name, "l2, huber, l1 or smoothed_l1 (also huber:K, smoothed_l1:ETA)");
    app->add_option("--k", k, "Huber transition point")->check(CLI::PositiveNumber);
    app->add_option("--eta", eta, "Curvature of smoothed_l1")->check(CLI::PositiveNumber);
  }
  Loss loss() const { return make_loss(name, k, eta); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"High-dimensional bootstrap and resampling diagnostics for M-estimators"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  app.add_option("--output", g.output, "Output format")->check(CLI::IsMember({"csv", "json"}));

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit an M-estimator and print the coefficients");
  std::string data;
  LossFlags lf;
  fit_cmd->add_option("--data", data, kDataHelp)->required();
  lf.add(fit_cmd);

  // boot
  auto* boot_cmd = app.add_subcommand("boot", "Bootstrap interval for a contrast of the coefficients");
  std::string scheme = "pairs", weights = "poisson1", draw_style = "fresh", contrast;
  int B = 1000;
  double level = 0.95;
  std::optional<double> bandwidth;
  bool replicates = false;
  boot_cmd->add_option("--data", data, kDataHelp)->required();
  lf.add(boot_cmd);
  boot_cmd->add_option("--scheme", scheme,
                       "residual, residual_hat, residual_mckean, predicted, deconv, gaussian, pairs, weighted");
  boot_cmd->add_option("--B", B, "Bootstrap replicates")->check(CLI::Range(2, 10000000));
  boot_cmd->add_option("--weights", weights, "Weight law of the weighted scheme: const1, poisson1, poisson_mix:A");
  boot_cmd->add_option("--level", level, "Interval level")->check(CLI::Range(0.0, 1.0));
  boot_cmd->add_option("--contrast", contrast, "Comma-separated contrast vector (default e_1)");
  boot_cmd->add_option("--draw-style", draw_style, "Deconvolution draws")->check(CLI::IsMember({"fresh", "frozen"}));
  boot_cmd->add_option("--bandwidth", bandwidth, "Deconvolution bandwidth")->check(CLI::PositiveNumber);
  boot_cmd->add_flag("--replicates", replicates, "Also print every replicate");

  // jack
  auto* jack_cmd = app.add_subcommand("jack", "Jackknife variance of a contrast");
  std::string correct = "none";
  jack_cmd->add_option("--data", data, kDataHelp)->required();
  lf.add(jack_cmd);
  jack_cmd->add_option("--correct", correct, "Variance correction for the interval")
      ->check(CLI::IsMember({"none", "ls", "gamma"}));
  jack_cmd->add_option("--level", level, "Interval level")->check(CLI::Range(0.0, 1.0));
  jack_cmd->add_option("--contrast", contrast, "Comma-separated contrast vector (default e_1)");

  // theory-risk
  auto* risk_cmd = app.add_subcommand("theory-risk", "Solve the asymptotic risk system");
  std::string errors = "normal";
  double kappa = 0.3;
  std::size_t mc_size = 1'000'000;
  lf.add(risk_cmd);
  risk_cmd->add_option("--errors", errors, "Error law")->check(CLI::IsMember({"normal", "laplace"}));
  risk_cmd->add_option("--kappa", kappa, "p/n")->required();
  risk_cmd->add_option("--mc-size", mc_size, "Monte-Carlo sample size");

  // theory-bootvar
  auto* bootvar_cmd = app.add_subcommand("theory-bootvar", "Predicted weighted-bootstrap variance");
  double sigma = 1.0;
  bootvar_cmd->add_option("--weights", weights, "const1, poisson1 or poisson_mix:A")->required();
  bootvar_cmd->add_option("--kappa", kappa, "p/n")->required();
  bootvar_cmd->add_option("--sigma", sigma, "Error standard deviation")->check(CLI::PositiveNumber);

  // calibrate-weights
  auto* calib_cmd = app.add_subcommand("calibrate-weights", "Poisson-mixture weight with unbiased variance");
  calib_cmd->add_option("--kappa", kappa, "p/n")->required();

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Run a configured simulation sweep");
  std::string config_path, output_dir;
  bool progress = false;
  sim_cmd->add_option("--config", config_path, "Experiment configuration file (schema: 1)")
      ->required()
      ->check(CLI::ExistingFile);
  sim_cmd->add_option("--output-dir", output_dir, "Overrides output_dir of the configuration");
  sim_cmd->add_flag("--progress", progress, "Report progress on stderr");

  // report
  auto* report_cmd = app.add_subcommand("report", "Render report.csv as SVG charts");
  std::string input;
  report_cmd->add_option("--input", input, "report.csv written by simulate")->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--output-dir", output_dir, "Directory for plot_<metric>.svg")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (fit_cmd->parsed()) {
      const Dataset ds = read_dataset_csv(data);
      const Loss loss = lf.loss();
      const FitResult f = fit(ds, loss);
      ojson r;
      r["loss"] = loss.name();
      r["n"] = ds.n();
      r["p"] = ds.p();
      r["beta_hat"] = to_json(f.beta_hat);
      r["converged"] = f.converged;
      r["iterations"] = f.iterations;
      r["objective"] = f.objective;
      r["gradient_norm"] = f.gradient_norm;
      r["sigma_hat_ls"] = sigma_hat_ls(ds);
      emit(g, r);
    } else if (boot_cmd->parsed()) {
      const Dataset ds = read_dataset_csv(data);
      const Loss loss = lf.loss();
      ResamplingPlan plan;
      plan.scheme = parse_scheme(scheme);
      if (plan.scheme == Scheme::Jackknife) {
        throw Error(ErrorCode::InvalidArgument, "use the jack subcommand for the jackknife");
      }
      plan.B = B;
      plan.ci_level = level;
      plan.weights = WeightLaw::parse(weights);
      plan.v = parse_contrast(contrast, ds.p());
      plan.draw_style = draw_style == "frozen" ? DrawStyle::FrozenDraw : DrawStyle::FreshDraws;
      plan.bandwidth = bandwidth;
      const BootstrapOutcome o = run_bootstrap(ds, loss, plan, g.seed, g.threads);
      ojson r;
      r["scheme"] = plan.label();
      r["loss"] = loss.name();
      r["B"] = B;
      r["point"] = o.point;
      r["ci_lo"] = o.ci_lo;
      r["ci_hi"] = o.ci_hi;
      r["boot_variance"] = o.boot_variance;
      r["failed_replicates"] = o.failed_replicates;
      r["redraws"] = o.redraws;
      r["fallback"] = o.fallback;
      r["warnings"] = o.warnings;
      if (replicates) r["replicates"] = to_json(o.replicates);
      emit(g, r);
    } else if (jack_cmd->parsed()) {
      const Dataset ds = read_dataset_csv(data);
      const Loss loss = lf.loss();
      const JackCorrection corr = parse_correction(correct);
      std::optional<double> gh;
      if (corr == JackCorrection::Gamma) gh = gamma_hat(ds, loss);
      const JackknifeOutcome j = jackknife(ds, loss, parse_contrast(contrast, ds.p()), gh, corr, level, g.threads);
      ojson r;
      r["loss"] = loss.name();
      r["correction"] = to_string(corr);
      r["point"] = j.point;
      r["var_jack"] = j.var_jack;
      r["corrected_ls"] = j.corrected_ls;
      if (j.corrected_gamma) r["corrected_gamma"] = *j.corrected_gamma;
      if (gh) r["gamma_hat"] = *gh;
      r["ci_lo"] = j.ci.lo;
      r["ci_hi"] = j.ci.hi;
      emit(g, r);
    } else if (risk_cmd->parsed()) {
      const Loss loss = lf.loss();
      const ErrorLaw law = parse_error_law(errors);
      RiskOptions opts;
      opts.mc_size = mc_size;
      opts.seed = g.seed;
      opts.error_variance = error_variance(law);
      const RiskSystemSolution s = solve_risk_system(loss, error_sampler(law), kappa, opts);
      ojson r;
      r["loss"] = loss.name();
      r["errors"] = errors;
      r["kappa"] = s.kappa;
      r["c"] = s.c;
      r["r"] = s.r;
      r["r_squared"] = s.r * s.r;
      r["residual_c"] = s.residual_c;
      r["residual_r"] = s.residual_r;
      r["iterations"] = s.iterations;
      emit(g, r);
    } else if (bootvar_cmd->parsed()) {
      const BootVarPrediction b = boot_var_prediction(WeightLaw::parse(weights), kappa, sigma);
      ojson r;
      r["weights"] = b.weight_law.name();
      r["kappa"] = b.kappa;
      r["c"] = b.c;
      r["expected_boot_var_scaled"] = b.expected_boot_var_scaled;
      r["overestimation_factor"] = b.overestimation_factor;
      emit(g, r);
    } else if (calib_cmd->parsed()) {
      const double alpha = calibrate_alpha(kappa);
      const BootVarPrediction b = boot_var_prediction(WeightLaw::poisson_mixture(alpha), kappa);
      ojson r;
      r["kappa"] = kappa;
      r["alpha"] = alpha;
      r["overestimation_factor"] = b.overestimation_factor;
      emit(g, r);
    } else if (sim_cmd->parsed()) {
      ExperimentConfig config = ExperimentConfig::load(config_path);
      if (!output_dir.empty()) config.output_dir = output_dir;
      if (app.count("--seed")) config.master_seed = g.seed;
      if (app.count("--threads")) config.threads = g.threads;
      ProgressFn report_progress;
      if (progress) {
        report_progress = [](std::size_t done, std::size_t total) {
          std::cerr << "\r" << done << "/" << total << std::flush;
          if (done == total) std::cerr << '\n';
        };
      }
      const SimReport rep = run_experiment(config, report_progress);
      if (g.output == "json") {
        ojson rows = ojson::array();
        for (const ReportRow& row : rep.rows) {
          rows.push_back({{"kappa", row.kappa}, {"scheme", row.scheme}, {"loss", row.loss},
                          {"metric", row.metric}, {"value", row.value}, {"se", row.se},
                          {"n_sims", row.n_sims}});
        }
        std::cout << rows.dump(2) << '\n';
      } else {
        write_report_csv(rep.rows, std::cout);
      }
    } else if (report_cmd->parsed()) {
      std::ifstream in(input);
      const auto rows = read_report_csv(in);
      const auto files = write_report_plots(rows, output_dir);
      ojson r;
      r["rows"] = rows.size();
      r["plots"] = files;
      emit(g, r);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_usage_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
