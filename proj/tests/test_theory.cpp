#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "hdboot/error.hpp"
#include "hdboot/theory.hpp"
#include "support.hpp"

using namespace hdboot;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

RiskOptions small_mc(std::size_t size) {
  RiskOptions o;
  o.mc_size = size;
  return o;
}

double standard_normal(CounterRng& rng) { return rng.normal(); }

}  // namespace

TEST_CASE("c equation closed form and limits") {
  for (double k : {0.1, 0.3, 0.5}) {
    CHECK(std::abs(solve_c(WeightLaw::constant_one(), k) - k / (1.0 - k)) < 1e-9);
  }
  // c >= kappa / (1 - kappa) by Jensen, so c only approaches kappa from above.
  CHECK(solve_c(WeightLaw::poisson_one(), 1e-3) < 1.01e-3);
  CHECK(solve_c(WeightLaw::poisson_one(), 1e-3) > 1e-3 / (1.0 - 1e-3));
  CHECK_THROWS_AS(solve_c(WeightLaw::poisson_one(), 1.0), Error);
  // E[1/(1+cW)] >= P(W = 0) for every c, so a point mass at zero above 1 - kappa has no root.
  CHECK_THROWS_AS(solve_c(WeightLaw::empirical({0.0, 4.0}, {0.75, 0.25}), 0.3), Error);
}

TEST_CASE("c equation against a Monte-Carlo expectation") {
  const double kappa = 0.3;
  const double c = solve_c(WeightLaw::poisson_one(), kappa);
  std::array<long, 32> counts{};
  CounterRng rng(2024, stream_tag("mc-poisson"), 0);
  const long draws = 10'000'000;
  for (long i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(std::min(rng.poisson1(), 31))];
  auto mc = [&](double cc) {
    double s = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      s += static_cast<double>(counts[k]) / (1.0 + cc * static_cast<double>(k));
    }
    return s / static_cast<double>(draws);
  };
  CHECK(std::abs(mc(c) - (1.0 - kappa)) < 1e-3);
  double lo = 0.0, hi = 10.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mc(mid) > 1.0 - kappa ? lo : hi) = mid;
  }
  CHECK(std::abs(0.5 * (lo + hi) - c) < 1e-3);
}

TEST_CASE("bootstrap variance prediction") {
  CHECK(boot_var_prediction(WeightLaw::constant_one(), 0.3).overestimation_factor == 0.0);
  CHECK(boot_var_prediction(WeightLaw::constant_one(), 0.3).expected_boot_var_scaled == 0.0);
  const BootVarPrediction p3 = boot_var_prediction(WeightLaw::poisson_one(), 0.3);
  const BootVarPrediction p5 = boot_var_prediction(WeightLaw::poisson_one(), 0.5);
  CHECK(p3.overestimation_factor > 1.15);
  CHECK(p3.overestimation_factor < 1.4);
  CHECK(p5.overestimation_factor > 2.7);
  CHECK(p5.overestimation_factor < 3.1);
  CHECK(boot_var_prediction(WeightLaw::poisson_mixture(0.9875), 0.1).overestimation_factor ==
        doctest::Approx(1.0).epsilon(0.01));
  // Scale enters as sigma^2 in the scaled variance only.
  const BootVarPrediction s2 = boot_var_prediction(WeightLaw::poisson_one(), 0.3, 2.0);
  CHECK(s2.expected_boot_var_scaled == doctest::Approx(4.0 * p3.expected_boot_var_scaled));
  CHECK(s2.overestimation_factor == doctest::Approx(p3.overestimation_factor));
}

TEST_CASE("Jensen bound at the solved c") {
  for (double kappa : {0.05, 0.2, 0.4, 0.6, 0.8}) {
    for (const WeightLaw& law : {WeightLaw::poisson_one(), WeightLaw::poisson_mixture(0.5),
                                 WeightLaw::poisson_mixture(0.95)}) {
      // Poisson(1) puts mass 1/e at zero, so it only has a solution below 1 - 1/e.
      if (law.zero_mass() >= 1.0 - kappa) continue;
      const double c = solve_c(law, kappa);
      const double second = law.expectation([c](double w) { return 1.0 / ((1.0 + c * w) * (1.0 + c * w)); });
      CHECK(second >= (1.0 - kappa) * (1.0 - kappa) - 1e-12);
      CHECK(boot_var_prediction(law, kappa).expected_boot_var_scaled >= -1e-12);
    }
  }
}

TEST_CASE("calibrated mixture weights") {
  const std::array<double, 4> kappas{0.1, 0.2, 0.3, 0.5};
  const std::array<double, 4> expected{0.9875, 0.9688, 0.9426, 0.9203};
  double prev = 1.0;
  for (std::size_t i = 0; i < kappas.size(); ++i) {
    const double a = calibrate_alpha(kappas[i]);
    CHECK(std::abs(a - expected[i]) <= 0.005);
    CHECK(a < prev);
    prev = a;
    const double f = boot_var_prediction(WeightLaw::poisson_mixture(a), kappas[i]).overestimation_factor;
    CHECK(f >= 0.99);
    CHECK(f <= 1.01);
  }
}

TEST_CASE("jackknife factor") {
  CHECK(jackknife_factor(0.0) == 1.0);
  CHECK(jackknife_factor(0.5) == 2.0);
  CHECK_THROWS_AS(jackknife_factor(1.0), Error);
}

TEST_CASE("gamma hat identities") {
  // S = identity: orthonormal columns scaled by sqrt(n).
  const MatrixXd G = testing::gaussian_matrix(40, 6, 301);
  const MatrixXd Q = G.householderQr().householderQ() * MatrixXd::Identity(40, 6);
  const MatrixXd X = Q * std::sqrt(40.0);
  CHECK(gamma_hat(X, VectorXd::Zero(40), Loss::squared()) == doctest::Approx(1.0).epsilon(1e-12));

  // Least squares: psi' = 1 so the traces come from (X'X/n)^-1 directly.
  const Dataset ds = testing::gaussian_dataset(90, 30, 303);
  const MatrixXd Sinv = (ds.X.transpose() * ds.X / 90.0).inverse();
  const double t1 = Sinv.trace() / 30.0;
  const double t2 = (Sinv * Sinv).trace() / 30.0;
  CHECK(gamma_hat(ds, Loss::squared()) == doctest::Approx(t2 / (t1 * t1)).epsilon(1e-10));

  CHECK_THROWS_AS(gamma_hat(ds, Loss::absolute()), Error);
  MatrixXd Xs = ds.X;
  Xs.col(2) = Xs.col(1);
  CHECK_THROWS_AS(gamma_hat(Xs, VectorXd::Zero(90), Loss::squared()), Error);
}

TEST_CASE("gamma hat tracks the jackknife factor") {
  double total = 0.0;
  const int sims = 30;
  for (int s = 0; s < sims; ++s) {
    const MatrixXd X = testing::gaussian_matrix(400, 200, 400 + static_cast<std::uint64_t>(s));
    total += gamma_hat(X, VectorXd::Zero(400), Loss::squared());
  }
  CHECK(total / sims == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("risk system matches the least-squares closed form") {
  const RiskSystemSolution sol = solve_risk_system(Loss::squared(), standard_normal, 0.3, small_mc(200000));
  CHECK(sol.r * sol.r == doctest::Approx(3.0 / 7.0).epsilon(1e-3));
  CHECK(sol.c == doctest::Approx(0.3 / 0.7).epsilon(1e-3));
  CHECK(sol.residual_c < 1e-4);
  CHECK(sol.residual_r < 1e-4);

  double prev = 0.0;
  for (int k = 1; k <= 9; ++k) {
    const double r = solve_risk_system(Loss::squared(), standard_normal, 0.1 * k, small_mc(20000)).r;
    CHECK(r > prev);
    prev = r;
  }
}

TEST_CASE("risk system without noise") {
  const RiskSystemSolution sol =
      solve_risk_system(Loss::huber(1.0), [](CounterRng&) { return 0.0; }, 0.4, small_mc(10000));
  CHECK(sol.r == 0.0);
}

TEST_CASE("risk system near kappa one") {
  RiskOptions o = small_mc(200000);
  o.error_variance = 2.0;
  const RiskSystemSolution sol =
      solve_risk_system(Loss::huber(1.0), [](CounterRng& rng) { return rng.laplace(); }, 0.95, o);
  const double scaled = sol.r * sol.r * 0.05 / 2.0;
  CHECK(scaled >= 0.85);
  CHECK(scaled <= 1.15);
}

TEST_CASE("risk system agrees with simulated Huber risk") {
  const double kappa = 0.3;
  const RiskSystemSolution sol =
      solve_risk_system(Loss::huber(1.345), standard_normal, kappa, small_mc(200000));
  const int n = 500, p = 150, sims = 100;
  double total = 0.0;
  for (int s = 0; s < sims; ++s) {
    const Dataset ds = testing::gaussian_dataset(n, p, 1000 + 2 * static_cast<std::uint64_t>(s));
    total += fit(ds, Loss::huber(1.345)).beta_hat.norm();
  }
  CHECK(sol.r == doctest::Approx(total / sims).epsilon(0.1));
}

TEST_CASE("asymptotic interval") {
  // X'X/n = I with p = 100, n = 400
  const MatrixXd G = testing::gaussian_matrix(400, 100, 501);
  const MatrixXd Q = G.householderQr().householderQ() * MatrixXd::Identity(400, 100);
  Dataset ds;
  ds.X = Q * std::sqrt(400.0);
  ds.y = testing::gaussian_vector(400, 502);
  const VectorXd e1 = VectorXd::Unit(100, 0);
  const Interval ci = asymptotic_ci(ds, Loss::squared(), e1, 1.0);
  CHECK(ci.width() / 2.0 == doctest::Approx(1.959964 * std::sqrt(0.75) / 10.0).epsilon(1e-6));
  const Interval zero = asymptotic_ci(ds, Loss::squared(), e1, 0.0);
  CHECK(zero.width() == 0.0);
  CHECK(zero.lo == doctest::Approx(fit(ds, Loss::squared()).beta_hat[0]).epsilon(1e-12));
}

TEST_CASE("asymptotic interval coverage for least squares") {
  const int n = 500, p = 150, sims = 300;
  int covered = 0;
  for (int s = 0; s < sims; ++s) {
    const Dataset ds = testing::gaussian_dataset(n, p, 7000 + 2 * static_cast<std::uint64_t>(s));
    const PredictedErrors pe = predicted_errors(ds, Loss::squared());
    const double r_hat = std::sqrt(std::max(0.0, pe.variance - pe.sigma_hat_ls * pe.sigma_hat_ls));
    if (asymptotic_ci(ds, Loss::squared(), VectorXd::Unit(p, 0), r_hat).contains(0.0)) ++covered;
  }
  CHECK(static_cast<double>(covered) / sims == doctest::Approx(0.95).epsilon(0.0316));
}

TEST_CASE("contrast variance estimator") {
  double total = 0.0;
  const int sims = 200;
  for (int s = 0; s < sims; ++s) {
    const Dataset ds = testing::gaussian_dataset(500, 250, 9000 + 2 * static_cast<std::uint64_t>(s));
    total += sigma_contrast_estimator(ds, VectorXd::Unit(250, 0));
  }
  CHECK(total / sims == doctest::Approx(1.0).epsilon(0.03));

  Dataset wide = testing::gaussian_dataset(5000, 10, 9901);
  wide.X.col(0) *= 2.0;
  CHECK(sigma_contrast_estimator(wide, VectorXd::Unit(10, 0)) == doctest::Approx(0.25).epsilon(0.05));
  const double plain = 5000.0 * (wide.X.transpose() * wide.X).inverse()(0, 0);
  CHECK(sigma_contrast_estimator(wide, VectorXd::Unit(10, 0)) == doctest::Approx(plain * 0.998));

  Dataset bad = testing::gaussian_dataset(20, 3, 9903);
  bad.X.col(2) = bad.X.col(0);
  CHECK_THROWS_AS(sigma_contrast_estimator(bad, VectorXd::Unit(3, 0)), Error);
}
