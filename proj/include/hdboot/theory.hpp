#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include <Eigen/Dense>

#include "hdboot/loss.hpp"
#include "hdboot/mestim.hpp"
#include "hdboot/resample.hpp"
#include "hdboot/rng.hpp"
#include "hdboot/stats.hpp"

namespace hdboot {

struct RiskSystemSolution {
  double c = 0.0;
  double r = 0.0;
  double kappa = 0.0;
  // Relative residuals of the derivative equation and the risk equation.
  double residual_c = 0.0;
  double residual_r = 0.0;
  int iterations = 0;
};

struct BootVarPrediction {
  double kappa = 0.0;
  WeightLaw weight_law;
  double c = 0.0;
  // sigma^2 [kappa / (1 - kappa - E[1/(1+cW)^2]) - 1/(1 - kappa)]
  double expected_boot_var_scaled = 0.0;
  // expected_boot_var_scaled / (sigma^2 kappa / (1 - kappa))
  double overestimation_factor = 0.0;
};

struct RiskOptions {
  std::size_t mc_size = 1'000'000;
  std::uint64_t seed = 20240101;
  double damping = 0.5;
  int max_outer = 200;
  double tol = 1e-9;         // stop when both residuals fall below this
  double accept_tol = 1e-4;  // NonConvergence unless both residuals are below this
  // Known error variance used to moment-match the Monte-Carlo sample; 0 keeps
  // the sample's own variance.
  double error_variance = 0.0;
};

// c solving E[1/(1 + cW)] = 1 - kappa by bisection on [0, 1e6].
double solve_c(const WeightLaw& law, double kappa);

BootVarPrediction boot_var_prediction(const WeightLaw& law, double kappa, double sigma_eps = 1.0);

// alpha such that PoissonMixture(alpha) has overestimation factor within 1%
// of one; bisection on [0, 1] started at 0.95.
double calibrate_alpha(double kappa);

// 1 / (1 - kappa)
double jackknife_factor(double kappa);

// (tr(S^-2)/p) / (tr(S^-1)/p)^2 with S = (1/n) sum psi'(e_i) X_i X_i'.
double gamma_hat(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals, const Loss& loss);
double gamma_hat(const Dataset& ds, const Loss& loss, const FitOptions& opts = {});

// Solves E[prox(c rho)'(z)] = 1 - kappa and kappa r^2 = E[(z - prox(c rho)(z))^2]
// with z = eps + r Z, by damped fixed-point iteration on r and bisection on c.
RiskSystemSolution solve_risk_system(const Loss& loss,
                                     const std::function<double(CounterRng&)>& error_sampler,
                                     double kappa, const RiskOptions& opts = {});

// v' beta_hat +- z r_hat sqrt((1 - p/n) v' Sigma_hat^{-1} v) / sqrt(p), Sigma_hat = X'X/n.
Interval asymptotic_ci(const Dataset& ds, const Loss& loss, const Eigen::VectorXd& v, double r_hat,
                       double level = 0.95, const FitOptions& opts = {});

// (1 - p/n) v' (X'X/n)^{-1} v
double sigma_contrast_estimator(const Dataset& ds, const Eigen::VectorXd& v);

}  // namespace hdboot
