#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hdboot/loss.hpp"
#include "hdboot/mestim.hpp"
#include "hdboot/rng.hpp"
#include "hdboot/stats.hpp"

namespace hdboot {

enum class WeightKind { ConstantOne, PoissonOne, PoissonMixture, EmpiricalTable };

// Law of the iid observation weights of a weighted bootstrap. All laws have
// mean one. PoissonMixture(alpha) is 1 - alpha + alpha * Poisson(1).
class WeightLaw {
 public:
  // Poisson expectations are truncated at this many terms.
  static constexpr int kSeriesTerms = 100;

  WeightLaw() = default;

  static WeightLaw constant_one() { return WeightLaw(WeightKind::ConstantOne, 0.0); }
  static WeightLaw poisson_one() { return WeightLaw(WeightKind::PoissonOne, 1.0); }
  static WeightLaw poisson_mixture(double alpha);
  // Values must be nonnegative, probabilities must sum to one and the mean must be one.
  static WeightLaw empirical(std::vector<double> values, std::vector<double> probs);

  // "const1", "poisson1", "poisson_mix:0.92"
  static WeightLaw parse(const std::string& text);

  WeightKind kind() const { return kind_; }
  double alpha() const { return alpha_; }

  double draw(CounterRng& rng) const;

  // Support points and probabilities; Poisson laws are truncated.
  std::vector<std::pair<double, double>> support() const;
  // E[f(W)] over support().
  double expectation(const std::function<double(double)>& f) const;
  // Probability of a zero weight.
  double zero_mass() const;

  std::string name() const;

 private:
  WeightLaw(WeightKind kind, double alpha) : kind_(kind), alpha_(alpha) {}

  WeightKind kind_ = WeightKind::ConstantOne;
  double alpha_ = 0.0;
  std::vector<double> values_;
  std::vector<double> probs_;
};

enum class Scheme {
  ResidualRaw,
  ResidualHatCorrected,
  ResidualMcKean,
  PredictedStandardized,
  DeconvolutionResidual,
  GaussianResidual,
  PairsMultinomial,
  WeightedIID,
  Jackknife,
};

enum class JackCorrection { None, LeastSquares, Gamma };

// How a deconvolution bootstrap draws its errors.
enum class DrawStyle { FreshDraws, FrozenDraw };

std::string to_string(Scheme scheme);
Scheme parse_scheme(const std::string& text);
std::string to_string(JackCorrection c);
JackCorrection parse_correction(const std::string& text);
bool is_residual_family(Scheme scheme);

struct ResamplingPlan {
  Scheme scheme = Scheme::ResidualRaw;
  WeightLaw weights;
  int B = 1000;
  Eigen::VectorXd v;  // empty means e_1
  double ci_level = 0.95;
  // Deconvolution options.
  DrawStyle draw_style = DrawStyle::FreshDraws;
  std::optional<double> bandwidth;
  bool elliptical_noise = false;
  // Jackknife option.
  JackCorrection correction = JackCorrection::None;

  // Contrast vector for a p-column design; throws InvalidArgument if invalid.
  Eigen::VectorXd contrast(Eigen::Index p) const;
  void validate(Eigen::Index p) const;
  // Short label such as "pairs" or "weighted[poisson_mix:0.9203]".
  std::string label() const;
};

struct BootstrapOutcome {
  Eigen::VectorXd replicates;  // successful replicates in index order
  double point = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double boot_variance = 0.0;
  int failed_replicates = 0;
  int redraws = 0;
  bool fallback = false;  // deconvolution fell back to bootstrapping predicted errors
  std::vector<std::string> warnings;
};

struct JackknifeOutcome {
  double point = 0.0;
  double var_jack = 0.0;
  double corrected_ls = 0.0;
  std::optional<double> corrected_gamma;
  Interval ci;  // normal theory around the point with the selected variance
};

// Centered error pool for the residual schemes that resample from a pool.
Eigen::VectorXd residual_pool(const Dataset& ds, const Loss& loss, Scheme scheme,
                              const FitResult& fitted, const FitOptions& opts = {},
                              int threads = 1);

// Davison-Hinkley form of the robust residual correction constant d.
double mckean_d(const Eigen::VectorXd& residuals, const Loss& loss, double scale);

BootstrapOutcome residual_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                                    std::uint64_t seed, int threads = 1,
                                    const FitOptions& opts = {});
BootstrapOutcome pairs_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                                 std::uint64_t seed, int threads = 1, const FitOptions& opts = {});
BootstrapOutcome weighted_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                                    std::uint64_t seed, int threads = 1,
                                    const FitOptions& opts = {});
// Dispatches on plan.scheme (all bootstrap schemes, not Jackknife).
BootstrapOutcome run_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                               std::uint64_t seed, int threads = 1, const FitOptions& opts = {});

JackknifeOutcome jackknife(const Dataset& ds, const Loss& loss, const Eigen::VectorXd& v,
                           std::optional<double> gamma_hat = std::nullopt,
                           JackCorrection correction = JackCorrection::None, double level = 0.95,
                           int threads = 1, const FitOptions& opts = {});

// Order statistics at ceil((B+1) a/2) and ceil((B+1)(1 - a/2)), clamped to [1, B].
Interval percentile_ci(std::vector<double> replicates, double level);
Interval normal_ci(double point, double variance, double level);

namespace detail {

// Runs B replicate tasks; `body(b)` returns nullopt on failure. Throws
// ExcessiveFailures when more than 5% of replicates fail.
BootstrapOutcome collect_replicates(int B, int threads, double point, double level,
                                    const std::function<std::optional<double>(int)>& body);

}  // namespace detail

}  // namespace hdboot
