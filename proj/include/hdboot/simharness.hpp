#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hdboot/io.hpp"
#include "hdboot/loss.hpp"
#include "hdboot/mestim.hpp"
#include "hdboot/resample.hpp"
#include "hdboot/rng.hpp"

namespace hdboot {

enum class DesignKind { GaussianIID, DoubleExpIID, Elliptical };
enum class LambdaLaw { ExpSqrt2, StdNormal, Unif };  // Unif is Unif(0.5, 1.5)
enum class ErrorLaw { StdNormal, StdLaplace };        // StdLaplace has variance 2

struct DesignSpec {
  DesignKind kind = DesignKind::GaussianIID;
  LambdaLaw lambda = LambdaLaw::ExpSqrt2;

  // "gaussian", "double_exp", "elliptical:exp", "elliptical:normal", "elliptical:unif"
  static DesignSpec parse(const std::string& text);
  std::string name() const;
};

ErrorLaw parse_error_law(const std::string& text);  // "normal", "laplace"
std::string to_string(ErrorLaw law);
double error_variance(ErrorLaw law);

Eigen::MatrixXd gen_design(const DesignSpec& design, Eigen::Index n, Eigen::Index p, std::uint64_t seed);
Eigen::VectorXd gen_errors(ErrorLaw law, Eigen::Index n, std::uint64_t seed);
// One error draw per call, for the risk-system solver.
std::function<double(CounterRng&)> error_sampler(ErrorLaw law);

enum class ExperimentKind { Coverage, VarianceRatio, CiWidth, Sweep, RelativeRisk };

std::string to_string(ExperimentKind kind);
ExperimentKind parse_experiment(const std::string& text);

// A resampling plan in a sweep. `calibrated` weighted plans use
// PoissonMixture(calibrate_alpha(kappa)) in every cell.
struct SchemeSpec {
  ResamplingPlan plan;
  bool calibrated = false;

  std::string label() const;
};

struct ExperimentConfig {
  int schema = 1;
  ExperimentKind experiment = ExperimentKind::Sweep;
  int n = 200;
  std::vector<double> kappa_grid{0.01, 0.1, 0.3, 0.5};
  DesignSpec design;
  ErrorLaw errors = ErrorLaw::StdNormal;
  Loss loss = Loss::squared();
  std::vector<SchemeSpec> schemes;
  int n_sims = 300;
  int B = 500;
  double level = 0.95;
  std::uint64_t master_seed = 1;
  int threads = 1;
  std::string output_dir;  // empty: nothing written
  bool dump_datasets = false;
  bool plots = true;
  bool resume = false;
  // Relative-risk experiments.
  int first_pass_sims = 200;

  static ExperimentConfig from_yaml(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  // Throws InvalidArgument on an unusable configuration.
  void validate() const;
  // round(n * kappa)
  int p_for(double kappa) const;
};

// Outcome of one scheme on one simulated dataset.
struct SchemeRecord {
  std::string scheme;
  bool ok = false;
  std::string error;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;  // 0 is inside the interval
  double boot_var = 0.0;  // bootstrap variance or the raw jackknife variance
  int redraws = 0;
  int failed_replicates = 0;
  bool fallback = false;
};

// Everything recorded for one simulated dataset.
struct SimRecord {
  double kappa = 0.0;
  int p = 0;
  int sim = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double point = 0.0;          // first coordinate of beta_hat
  double beta_sq_mean = 0.0;   // mean_j beta_hat_j^2
  double beta_norm = 0.0;      // ||beta_hat||_2
  double normal_width = 0.0;   // normal-theory least-squares interval width
  std::optional<double> gamma_hat;
  std::vector<double> beta_hat;  // filled when datasets are dumped
  std::vector<SchemeRecord> schemes;
  // Relative-risk arms: ||beta_hat|| under G, G_conv and G_norm errors.
  std::vector<double> arm_norms;
};

struct SimReport {
  ExperimentConfig config;
  std::vector<ReportRow> rows;
  std::vector<SimRecord> records;  // sorted by (p, sim)

  // Throws InvalidArgument when the row is absent.
  const ReportRow& row(double kappa, const std::string& scheme, const std::string& metric) const;
};

using ProgressFn = std::function<void(std::size_t done, std::size_t total)>;

// Runs every configured scheme on every (kappa, sim) dataset and summarizes
// the metrics selected by config.experiment.
SimReport run_sweep(const ExperimentConfig& config, const ProgressFn& progress = {});
SimReport run_coverage(ExperimentConfig config, const ProgressFn& progress = {});
SimReport run_variance_ratio(ExperimentConfig config, const ProgressFn& progress = {});
SimReport run_ci_width(ExperimentConfig config, const ProgressFn& progress = {});
SimReport run_relative_risk(ExperimentConfig config, const ProgressFn& progress = {});
// Dispatches on config.experiment.
SimReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

// Single simulation of a sweep; exposed for replay checks.
SimRecord simulate_one(const ExperimentConfig& config, double kappa, int sim);
// Dataset of simulation `sim` at this kappa, as used by simulate_one.
Dataset simulated_dataset(const ExperimentConfig& config, double kappa, int sim);

// Summary rows for the requested experiment from finished records.
std::vector<ReportRow> summarize(const ExperimentConfig& config, const std::vector<SimRecord>& records);

std::string to_json_line(const SimRecord& record);
SimRecord from_json_line(const std::string& line);

}  // namespace hdboot
