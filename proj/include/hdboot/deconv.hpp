#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hdboot/mestim.hpp"
#include "hdboot/resample.hpp"
#include "hdboot/rng.hpp"

namespace hdboot {

// Estimated error cdf on a grid. The grid is nondecreasing; repeated abscissae
// represent jumps.
struct DeconvolvedCdf {
  std::vector<double> grid;
  std::vector<double> values;
  double bandwidth = 0.0;
  double noise_sd = 0.0;
};

struct GhatSample {
  Eigen::VectorXd draws;
  bool degenerate = false;  // all raw draws equal; draws are zero
};

// Standard deviation of the Gaussian noise in the predicted errors,
// sqrt(var(e~) - sigma_hat^2). Empty when the difference is not positive, in
// which case the predicted errors should be bootstrapped directly.
std::optional<double> estimate_noise_sd(const PredictedErrors& pe);

// Fourier deconvolution cdf estimate of the law of `values` with additive
// N(0, noise_sd^2) noise removed, using a kernel with characteristic function
// (1 - t^2)^3 on [-1, 1]. The bandwidth defaults to noise_sd / sqrt(log n).
// `per_obs_sd` switches to observation-specific noise levels. The raw estimate
// is passed through monotonize_cdf.
DeconvolvedCdf deconvolve_cdf(const Eigen::VectorXd& values, double noise_sd,
                              std::optional<double> bandwidth = std::nullopt,
                              const Eigen::VectorXd* per_obs_sd = nullptr);
DeconvolvedCdf deconvolve_cdf(const PredictedErrors& pe, double noise_sd,
                              std::optional<double> bandwidth = std::nullopt);

// Turns raw cdf values into a proper cdf: tails beyond the 0.001 / 0.999
// levels are flattened, negative increments dropped, and the cumulative sum
// rescaled to run from 0 to 1. Repeated until nothing changes, so applying it
// twice gives the same result as once.
DeconvolvedCdf monotonize_cdf(std::vector<double> grid, std::vector<double> values);

// Inverse-cdf draws with linear interpolation, then centered and scaled to
// sample variance sigma_target^2.
GhatSample sample_ghat(const DeconvolvedCdf& cdf, int m, double sigma_target, CounterRng& rng);
GhatSample sample_ghat(const DeconvolvedCdf& cdf, int m, double sigma_target, std::uint64_t seed);

// Raw inverse-cdf draws without standardization.
Eigen::VectorXd inverse_cdf_draws(const DeconvolvedCdf& cdf, int m, CounterRng& rng);

BootstrapOutcome deconvolution_bootstrap(const Dataset& ds, const Loss& loss,
                                         const ResamplingPlan& plan, std::uint64_t seed,
                                         int threads = 1, const FitOptions& opts = {});

// lambda_i^2 estimates ||X_i||^2 / mean_j ||X_j||^2 for elliptical designs.
Eigen::VectorXd estimate_lambda_sq(const Dataset& ds);

void write_cdf_csv(const DeconvolvedCdf& cdf, std::ostream& os);
DeconvolvedCdf read_cdf_csv(std::istream& is);

}  // namespace hdboot
