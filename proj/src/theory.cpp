#include "hdboot/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "hdboot/error.hpp"

namespace hdboot {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kCUpper = 1e6;
constexpr double kFactorTol = 0.01;

void check_kappa(double kappa) {
  if (!(kappa > 0.0 && kappa < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "kappa must lie in (0, 1)");
  }
}

// Root of a decreasing function on [lo, hi] with f(lo) > 0 > f(hi), by the
// Illinois variant of regula falsi with a bisection safeguard.
template <typename F>
double decreasing_root(F&& f, double lo, double hi, double flo, double fhi, double rel_tol) {
  int side = 0;
  for (int it = 0; it < 200; ++it) {
    if (hi - lo <= rel_tol * std::max(std::abs(lo), std::abs(hi)) + 1e-300) break;
    double x = (lo * fhi - hi * flo) / (fhi - flo);
    if (!(x > lo && x < hi) || it % 8 == 7) x = 0.5 * (lo + hi);
    const double fx = f(x);
    if (fx == 0.0) return x;
    if (fx > 0.0) {
      lo = x;
      flo = fx;
      if (side == -1) fhi *= 0.5;
      side = -1;
    } else {
      hi = x;
      fhi = fx;
      if (side == 1) flo *= 0.5;
      side = 1;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double solve_c(const WeightLaw& law, double kappa) {
  check_kappa(kappa);
  const auto support = law.support();
  auto expect = [&](double c) {
    double total = 0.0;
    for (const auto& [w, prob] : support) total += prob / (1.0 + c * w);
    return total;
  };
  const double target = 1.0 - kappa;
  if (!(expect(kCUpper) < target)) {
    throw Error(ErrorCode::NoBracket,
                "E[1/(1+cW)] stays above 1 - kappa on [0, 1e6]; the weights put too much mass at 0");
  }
  double lo = 0.0;
  double hi = kCUpper;
  // Plain bisection to machine precision.
  for (int it = 0; it < 2000; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (expect(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double c = 0.5 * (lo + hi);
  if (!(std::abs(expect(c) - target) < 1e-6)) {
    throw Error(ErrorCode::NoBracket, "bisection for c did not reach the tolerance");
  }
  return c;
}

BootVarPrediction boot_var_prediction(const WeightLaw& law, double kappa, double sigma_eps) {
  BootVarPrediction out;
  out.kappa = kappa;
  out.weight_law = law;
  out.c = solve_c(law, kappa);
  const double c = out.c;
  const double second = law.expectation([c](double w) {
    const double x = 1.0 / (1.0 + c * w);
    return x * x;
  });
  const double denom = 1.0 - kappa - second;
  const double s2 = sigma_eps * sigma_eps;
  if (law.kind() == WeightKind::ConstantOne) {
    out.expected_boot_var_scaled = 0.0;
  } else {
    if (!(denom > 0.0)) {
      throw Error(ErrorCode::NoSolution, "bootstrap variance is unbounded for this weight law");
    }
    out.expected_boot_var_scaled = s2 * (kappa / denom - 1.0 / (1.0 - kappa));
  }
  const double base = s2 * kappa / (1.0 - kappa);
  out.overestimation_factor = base > 0.0 ? out.expected_boot_var_scaled / base : 0.0;
  return out;
}

double calibrate_alpha(double kappa) {
  check_kappa(kappa);
  auto factor = [kappa](double alpha) {
    try {
      return boot_var_prediction(WeightLaw::poisson_mixture(alpha), kappa).overestimation_factor;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NoBracket || e.code() == ErrorCode::NoSolution) {
        return std::numeric_limits<double>::infinity();
      }
      throw;
    }
  };
  if (factor(1.0) < 1.0 - kFactorTol) {
    throw Error(ErrorCode::NoSolution, "no alpha in [0, 1] reaches an overestimation factor of 1");
  }
  double lo = 0.0;
  double hi = 1.0;
  double alpha = 0.95;
  for (int it = 0; it < 100; ++it) {
    const double f = factor(alpha);
    if (std::abs(f - 1.0) <= kFactorTol) return alpha;
    if (f > 1.0) {
      hi = alpha;
    } else {
      lo = alpha;
    }
    alpha = 0.5 * (lo + hi);
  }
  throw Error(ErrorCode::NoSolution, "weight calibration did not converge");
}

double jackknife_factor(double kappa) {
  if (!(kappa >= 0.0 && kappa < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "kappa must lie in [0, 1)");
  }
  return 1.0 / (1.0 - kappa);
}

double gamma_hat(const MatrixXd& X, const VectorXd& residuals, const Loss& loss) {
  const Index n = X.rows();
  const Index p = X.cols();
  if (residuals.size() != n) throw Error(ErrorCode::InvalidArgument, "residuals have the wrong length");
  if (loss.kind() == LossKind::AbsoluteError) {
    throw Error(ErrorCode::SingularS,
                "psi' is the indicator of a zero residual for L1, so S is not estimable");
  }
  VectorXd d(n);
  for (Index i = 0; i < n; ++i) d[i] = loss.psi_prime(residuals[i]);
  MatrixXd S = MatrixXd::Zero(p, p);
  S.selfadjointView<Eigen::Lower>().rankUpdate((d.cwiseSqrt().asDiagonal() * X).transpose(),
                                                1.0 / static_cast<double>(n));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S.selfadjointView<Eigen::Lower>(),
                                             Eigen::EigenvaluesOnly);
  const VectorXd lambda = es.eigenvalues();
  const double top = lambda.maxCoeff();
  if (!(top > 0.0) || lambda.minCoeff() <= 1e-10 * top) {
    throw Error(ErrorCode::SingularS, "S is numerically singular");
  }
  const double inv1 = lambda.cwiseInverse().mean();
  const double inv2 = lambda.cwiseInverse().cwiseAbs2().mean();
  return inv2 / (inv1 * inv1);
}

double gamma_hat(const Dataset& ds, const Loss& loss, const FitOptions& opts) {
  if (loss.kind() == LossKind::AbsoluteError) return gamma_hat(ds.X, VectorXd::Zero(ds.n()), loss);
  const FitResult r = fit(ds, loss, opts);
  return gamma_hat(ds.X, r.residuals, loss);
}

RiskSystemSolution solve_risk_system(const Loss& loss,
                                     const std::function<double(CounterRng&)>& error_sampler,
                                     double kappa, const RiskOptions& opts) {
  check_kappa(kappa);
  if (opts.mc_size < 100) throw Error(ErrorCode::InvalidArgument, "Monte-Carlo size too small");
  if (!(opts.damping > 0.0 && opts.damping <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "damping must lie in (0, 1]");
  }
  const std::size_t N = opts.mc_size;
  std::vector<double> eps(N), z(N);
  {
    CounterRng er(opts.seed, stream_tag("risk-errors"), 0);
    CounterRng zr(opts.seed, stream_tag("risk-gauss"), 0);
    for (std::size_t i = 0; i < N; ++i) {
      eps[i] = error_sampler(er);
      z[i] = zr.normal();
    }
  }
  // Moment matching: centered errors (rescaled to the known variance if given),
  // Gaussian part centered, orthogonal to the errors and of unit variance.
  Eigen::Map<VectorXd> e(eps.data(), static_cast<Index>(N));
  Eigen::Map<VectorXd> g(z.data(), static_cast<Index>(N));
  e.array() -= e.mean();
  double s2 = e.squaredNorm() / static_cast<double>(N);
  if (opts.error_variance > 0.0 && s2 > 0.0) {
    e *= std::sqrt(opts.error_variance / s2);
    s2 = opts.error_variance;
  }
  g.array() -= g.mean();
  if (s2 > 0.0) g -= (g.dot(e) / e.squaredNorm()) * e;
  g /= std::sqrt(g.squaredNorm() / static_cast<double>(N));

  const double target = 1.0 - kappa;
  std::vector<double> zhat(N);
  auto mean_prox_derivative = [&](double c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) acc += loss.prox_derivative(zhat[i], c);
    return acc / static_cast<double>(N);
  };
  auto solve_inner = [&](double guess) {
    auto f = [&](double c) { return mean_prox_derivative(c) - target; };
    double lo = guess > 0.0 ? guess / 2.0 : 0.0;
    double flo = f(lo);
    while (flo <= 0.0 && lo > 0.0) {
      lo = lo > 1e-12 ? lo / 4.0 : 0.0;
      flo = f(lo);
    }
    if (flo <= 0.0) throw Error(ErrorCode::NoSolution, "derivative equation has no root");
    double hi = guess > 0.0 ? guess * 2.0 : 1.0;
    double fhi = f(hi);
    while (fhi >= 0.0) {
      lo = hi;
      flo = fhi;
      hi *= 4.0;
      if (hi > 1e12) throw Error(ErrorCode::NoSolution, "derivative equation has no root");
      fhi = f(hi);
    }
    return decreasing_root(f, lo, hi, flo, fhi, 1e-14);
  };
  auto update = [&](double r, double& c, double& res_c, double& res_r) {
    for (std::size_t i = 0; i < N; ++i) zhat[i] = eps[i] + r * z[i];
    c = solve_inner(c);
    res_c = std::abs(mean_prox_derivative(c) - target) / target;
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const double d = zhat[i] - loss.prox(zhat[i], c);
      acc += d * d;
    }
    const double rhs = acc / static_cast<double>(N);
    res_r = rhs > 0.0 ? std::abs(kappa * r * r - rhs) / rhs : std::abs(kappa * r * r);
    return std::sqrt(rhs / kappa);
  };

  RiskSystemSolution sol;
  sol.kappa = kappa;
  if (!(s2 > 0.0)) {
    // No noise: the risk is zero; c is reported for unit-scale inputs.
    for (std::size_t i = 0; i < N; ++i) zhat[i] = z[i];
    sol.c = solve_inner(kappa / (1.0 - kappa));
    sol.r = 0.0;
    return sol;
  }
  double r = std::sqrt(s2 * kappa / (1.0 - kappa));
  double c = kappa / (1.0 - kappa);
  double res_c = 0.0, res_r = 0.0;
  std::vector<double> history;
  int it = 0;
  for (; it < opts.max_outer; ++it) {
    const double r_new = update(r, c, res_c, res_r);
    if (res_r < opts.tol && res_c < std::max(opts.tol, 4.0 / static_cast<double>(N))) break;
    r = (1.0 - opts.damping) * r + opts.damping * r_new;
    history.push_back(r);
    // Aitken extrapolation of the linearly converging damped sequence.
    if (history.size() >= 3 && history.size() % 3 == 0) {
      const double r0 = history[history.size() - 3];
      const double r1 = history[history.size() - 2];
      const double r2 = history[history.size() - 1];
      const double denom = (r2 - r1) - (r1 - r0);
      if (denom != 0.0) {
        const double acc = r2 - (r2 - r1) * (r2 - r1) / denom;
        if (std::isfinite(acc) && acc > 0.0 && std::abs(acc - r2) < 0.5 * r2) r = acc;
      }
    }
  }
  sol.c = c;
  sol.r = r;
  sol.residual_c = res_c;
  sol.residual_r = res_r;
  sol.iterations = it + 1;
  if (!(res_c < opts.accept_tol && res_r < opts.accept_tol)) {
    throw Error(ErrorCode::NonConvergence,
                "risk system residuals " + std::to_string(res_c) + ", " + std::to_string(res_r) +
                    " after " + std::to_string(opts.max_outer) + " iterations");
  }
  return sol;
}

Interval asymptotic_ci(const Dataset& ds, const Loss& loss, const VectorXd& v, double r_hat,
                       double level, const FitOptions& opts) {
  ds.validate();
  if (!(r_hat >= 0.0)) throw Error(ErrorCode::InvalidArgument, "risk estimate must be nonnegative");
  if (v.size() != ds.p()) throw Error(ErrorCode::InvalidArgument, "contrast has the wrong length");
  const double point = v.dot(fit(ds, loss, opts).beta_hat);
  const double n = static_cast<double>(ds.n());
  const double p = static_cast<double>(ds.p());
  const LeastSquaresFactor factor(ds.X, opts.rank_tol);
  const double quad = n * v.dot(factor.gram_inverse_times(v));
  const double half = normal_quantile(1.0 - (1.0 - level) / 2.0) * r_hat *
                      std::sqrt((1.0 - p / n) * quad) / std::sqrt(p);
  return {point - half, point + half};
}

double sigma_contrast_estimator(const Dataset& ds, const VectorXd& v) {
  ds.validate();
  if (v.size() != ds.p()) throw Error(ErrorCode::InvalidArgument, "contrast has the wrong length");
  const double n = static_cast<double>(ds.n());
  const double p = static_cast<double>(ds.p());
  const LeastSquaresFactor factor(ds.X);
  return (1.0 - p / n) * n * v.dot(factor.gram_inverse_times(v));
}

}  // namespace hdboot
