#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hdboot/loss.hpp"

namespace hdboot {

// Linear model data: rows of X are observations.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  // Simulation bookkeeping only; never used by the estimators.
  std::optional<Eigen::VectorXd> true_beta;
  std::optional<double> noise_sd;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  // Throws InvalidArgument unless n > p >= 1, shapes agree and entries are finite.
  void validate() const;
};

struct FitOptions {
  int max_iter = 500;
  double beta_tol = 1e-10;       // relative coefficient change
  double objective_tol = 1e-12;  // relative objective decrease
  double rank_tol = 1e-10;       // smallest/largest pivot of the R factor
  bool record_objective = false;
};

struct FitResult {
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd residuals;  // y - X beta_hat over the rows used in the fit
  Loss loss;
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;  // sup-norm of sum_i w_i psi(e_i) x_i
  double objective = 0.0;      // sum_i w_i rho(e_i)
  std::vector<double> objective_trace;  // filled when FitOptions::record_objective
};

struct PredictedErrors {
  Eigen::VectorXd values;        // y_i - x_i' beta_(i)
  Eigen::VectorXd standardized;  // values * sigma_hat_ls / sqrt(variance)
  double sigma_hat_ls = 0.0;    // square root of sigma_hat_ls(ds)
  double variance = 0.0;         // sample variance of values
};

// Cached column-pivoted QR of a fixed full-rank design.
class LeastSquaresFactor {
 public:
  explicit LeastSquaresFactor(const Eigen::MatrixXd& X, double rank_tol = 1e-10);

  Eigen::Index n() const { return qr_.rows(); }
  Eigen::Index p() const { return qr_.cols(); }

  Eigen::VectorXd solve(const Eigen::VectorXd& y) const;
  Eigen::VectorXd hat_diagonal() const;
  // (X'X)^{-1} v
  Eigen::VectorXd gram_inverse_times(const Eigen::VectorXd& v) const;
  // X (X'X)^{-1} v, so that v' beta_hat(y) = contrast_weights(v)' y.
  Eigen::VectorXd contrast_weights(const Eigen::VectorXd& v) const;
  // (X'X)^{-1} X', column i is (X'X)^{-1} x_i.
  Eigen::MatrixXd pseudo_inverse() const;

 private:
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

// Minimizer of sum_i rho(y_i - x_i' b). Least squares is solved by QR; other
// losses by IRLS warm-started from least squares.
FitResult fit(const Dataset& ds, const Loss& loss, const FitOptions& opts = {});

// Minimizer of sum_i w_i rho(y_i - x_i' b) with w_i >= 0; zero-weight rows
// drop out. `warm_start` replaces the least-squares starting point.
FitResult fit_weighted(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& weights, const Loss& loss,
                       const FitOptions& opts = {},
                       const Eigen::VectorXd* warm_start = nullptr);

// Same as fit() but starting IRLS from `warm_start`.
FitResult fit_from(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Loss& loss,
                   const Eigen::VectorXd& warm_start, const FitOptions& opts = {});

Eigen::VectorXd hat_diagonal(const Dataset& ds);

// beta_(i) for every i. Least squares uses the rank-one downdate; robust losses
// refit with row i removed, warm-started from the full-data fit. Residuals of
// each result cover the n-1 retained rows.
std::vector<FitResult> loo_fits(const Dataset& ds, const Loss& loss,
                                const FitOptions& opts = {}, int threads = 1);

PredictedErrors predicted_errors(const Dataset& ds, const Loss& loss,
                                 const FitOptions& opts = {}, int threads = 1);

// Noise variance estimate: sum of squared least-squares residuals over n - p,
// whatever the study loss.
double sigma_hat_ls(const Dataset& ds);

}  // namespace hdboot
