#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hdboot/error.hpp"
#include "hdboot/resample.hpp"
#include "hdboot/stats.hpp"
#include "support.hpp"

using namespace hdboot;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ResamplingPlan plan_for(Scheme scheme, int B) {
  ResamplingPlan plan;
  plan.scheme = scheme;
  plan.B = B;
  return plan;
}

bool same_outcome(const BootstrapOutcome& a, const BootstrapOutcome& b) {
  if (a.replicates.size() != b.replicates.size()) return false;
  for (Eigen::Index i = 0; i < a.replicates.size(); ++i) {
    if (a.replicates[i] != b.replicates[i]) return false;
  }
  return a.point == b.point && a.ci_lo == b.ci_lo && a.ci_hi == b.ci_hi &&
         a.boot_variance == b.boot_variance && a.redraws == b.redraws;
}

}  // namespace

TEST_CASE("percentile interval uses the (B+1) order statistic rule") {
  std::vector<double> reps(999);
  std::iota(reps.begin(), reps.end(), 1.0);
  std::reverse(reps.begin(), reps.end());
  const Interval ci = percentile_ci(reps, 0.95);
  CHECK(ci.lo == 25.0);
  CHECK(ci.hi == 975.0);

  const Interval flat = percentile_ci(std::vector<double>(50, 3.5), 0.9);
  CHECK(flat.lo == 3.5);
  CHECK(flat.hi == 3.5);

  // B = 10 at 95%: positions ceil(0.275) = 1 and ceil(10.725) = 11 -> clamped to 10
  std::vector<double> small(10);
  std::iota(small.begin(), small.end(), 0.0);
  const Interval s = percentile_ci(small, 0.95);
  CHECK(s.lo == 0.0);
  CHECK(s.hi == 9.0);

  CHECK_THROWS_AS(percentile_ci({1.0}, 0.95), Error);
}

TEST_CASE("normal interval") {
  const Interval ci = normal_ci(0.0, 1.0, 0.95);
  CHECK(ci.lo == doctest::Approx(-1.959964).epsilon(1e-6));
  CHECK(ci.hi == doctest::Approx(1.959964).epsilon(1e-6));
  const Interval z = normal_ci(2.0, 0.0, 0.95);
  CHECK(z.lo == 2.0);
  CHECK(z.hi == 2.0);
  CHECK_THROWS_AS(normal_ci(0.0, -1.0, 0.95), Error);
}

TEST_CASE("weight laws") {
  const WeightLaw one = WeightLaw::constant_one();
  const WeightLaw pois = WeightLaw::poisson_one();
  const WeightLaw mix = WeightLaw::poisson_mixture(0.9);
  for (const WeightLaw& law : {one, pois, mix}) {
    CHECK(law.expectation([](double w) { return w; }) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(pois.expectation([](double w) { return w * w; }) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(pois.zero_mass() == doctest::Approx(std::exp(-1.0)));
  CHECK(mix.zero_mass() == 0.0);

  CounterRng rng(5, stream_tag("weights"), 0);
  double s = 0.0, s2 = 0.0;
  const int m = 200000;
  for (int i = 0; i < m; ++i) {
    const double w = mix.draw(rng);
    s += w;
    s2 += w * w;
  }
  const double var = s2 / m - (s / m) * (s / m);
  CHECK(std::abs(s / m - 1.0) < 4.0 * 0.9 / std::sqrt(m));
  CHECK(var == doctest::Approx(0.81).epsilon(0.02));

  CHECK(WeightLaw::parse("poisson_mix:0.92").alpha() == doctest::Approx(0.92));
  CHECK(WeightLaw::parse("const1").kind() == WeightKind::ConstantOne);
  CHECK(WeightLaw::parse("poisson1").kind() == WeightKind::PoissonOne);
  CHECK_THROWS_AS(WeightLaw::parse("poisson_mix:1.5"), Error);
  CHECK_THROWS_AS(WeightLaw::parse("gamma"), Error);
  CHECK_THROWS_AS(WeightLaw::empirical({0.0, 3.0}, {0.5, 0.5}), Error);
  const WeightLaw table = WeightLaw::empirical({0.0, 2.0}, {0.5, 0.5});
  CHECK(table.zero_mass() == 0.5);
}

TEST_CASE("scheme names round trip") {
  for (Scheme s : {Scheme::ResidualRaw, Scheme::ResidualHatCorrected, Scheme::ResidualMcKean,
                   Scheme::PredictedStandardized, Scheme::DeconvolutionResidual,
                   Scheme::GaussianResidual, Scheme::PairsMultinomial, Scheme::WeightedIID,
                   Scheme::Jackknife}) {
    CHECK(parse_scheme(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_scheme("wild"), Error);
  CHECK(parse_correction("ls") == JackCorrection::LeastSquares);
}

TEST_CASE("residual pools are centered and hat correction inflates") {
  const Dataset ds = testing::gaussian_dataset(120, 40, 11);
  for (const Loss& loss : {Loss::squared(), Loss::huber(1.345)}) {
    const FitResult f = fit(ds, loss);
    const VectorXd raw = residual_pool(ds, loss, Scheme::ResidualRaw, f);
    const VectorXd hat = residual_pool(ds, loss, Scheme::ResidualHatCorrected, f);
    const VectorXd mck = residual_pool(ds, loss, Scheme::ResidualMcKean, f);
    const VectorXd pred = residual_pool(ds, loss, Scheme::PredictedStandardized, f);
    for (const VectorXd* pool : {&raw, &hat, &mck, &pred}) {
      CHECK(std::abs(pool->mean()) < 1e-14);
    }
    CHECK(hat.squaredNorm() >= raw.squaredNorm());
  }
}

TEST_CASE("McKean constant reduces to one for least squares") {
  // psi(x) = x, psi' = 1: d = 2 mean(e^2) - mean(e^2) = mean(e^2)/s^2
  const VectorXd e = testing::gaussian_vector(50, 3);
  const double s = 1.7;
  CHECK(mckean_d(e, Loss::squared(), s) ==
        doctest::Approx(e.squaredNorm() / e.size() / (s * s)).epsilon(1e-12));
}

TEST_CASE("least squares residual bootstrap uses the linear shortcut faithfully") {
  const Dataset ds = testing::gaussian_dataset(60, 10, 21);
  const ResamplingPlan plan = plan_for(Scheme::ResidualRaw, 40);
  const BootstrapOutcome out = residual_bootstrap(ds, Loss::squared(), plan, 99);
  // Replay one replicate by explicit refit.
  const FitResult full = fit(ds, Loss::squared());
  const VectorXd pool = residual_pool(ds, Loss::squared(), Scheme::ResidualRaw, full);
  CounterRng rng(99, stream_tag("residual"), 7);
  VectorXd eps(ds.n());
  for (Eigen::Index i = 0; i < ds.n(); ++i) eps[i] = pool[static_cast<Eigen::Index>(rng.below(ds.n()))];
  Dataset star = ds;
  star.y = ds.X * full.beta_hat + eps;
  CHECK(out.replicates[7] == doctest::Approx(fit(star, Loss::squared()).beta_hat[0]).epsilon(1e-10));
}

TEST_CASE("bootstrap outcomes do not depend on the thread count") {
  const Dataset ds = testing::gaussian_dataset(80, 20, 31);
  for (Scheme s : {Scheme::ResidualRaw, Scheme::PairsMultinomial, Scheme::PredictedStandardized}) {
    ResamplingPlan plan = plan_for(s, 30);
    const BootstrapOutcome a = run_bootstrap(ds, Loss::huber(1.345), plan, 7, 1);
    const BootstrapOutcome b = run_bootstrap(ds, Loss::huber(1.345), plan, 7, 3);
    CHECK(same_outcome(a, b));
  }
  ResamplingPlan w = plan_for(Scheme::WeightedIID, 30);
  w.weights = WeightLaw::poisson_mixture(0.9);
  CHECK(same_outcome(run_bootstrap(ds, Loss::squared(), w, 7, 1),
                     run_bootstrap(ds, Loss::squared(), w, 7, 4)));
}

TEST_CASE("raising B keeps the earlier replicates") {
  const Dataset ds = testing::gaussian_dataset(50, 5, 41);
  const BootstrapOutcome a = run_bootstrap(ds, Loss::squared(), plan_for(Scheme::PairsMultinomial, 20), 3);
  const BootstrapOutcome b = run_bootstrap(ds, Loss::squared(), plan_for(Scheme::PairsMultinomial, 50), 3);
  for (Eigen::Index i = 0; i < 20; ++i) CHECK(a.replicates[i] == b.replicates[i]);
}

TEST_CASE("constant weights reproduce the fit") {
  const Dataset ds = testing::gaussian_dataset(40, 8, 51);
  ResamplingPlan plan = plan_for(Scheme::WeightedIID, 25);
  plan.weights = WeightLaw::constant_one();
  for (const Loss& loss : {Loss::squared(), Loss::huber(1.0)}) {
    const BootstrapOutcome out = weighted_bootstrap(ds, loss, plan, 1);
    const double point = fit(ds, loss).beta_hat[0];
    CHECK(out.point == point);
    for (Eigen::Index b = 0; b < out.replicates.size(); ++b) CHECK(out.replicates[b] == point);
    CHECK(out.boot_variance == 0.0);
  }
}

TEST_CASE("pairs bootstrap on a single repeated row has zero variance") {
  Dataset ds;
  ds.X = MatrixXd::Constant(30, 1, 2.0);
  ds.y = VectorXd::Constant(30, 3.0);
  const BootstrapOutcome out = pairs_bootstrap(ds, Loss::squared(), plan_for(Scheme::PairsMultinomial, 20), 5);
  CHECK(out.point == doctest::Approx(1.5));
  CHECK(out.boot_variance == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(out.warnings.empty());
}

TEST_CASE("weighted L2 replicates match explicit weighted fits") {
  const Dataset ds = testing::gaussian_dataset(60, 12, 61);
  ResamplingPlan plan = plan_for(Scheme::WeightedIID, 5);
  plan.weights = WeightLaw::poisson_one();
  const BootstrapOutcome out = weighted_bootstrap(ds, Loss::squared(), plan, 17);
  CounterRng rng(17, stream_tag("weighted"), 2);
  VectorXd w(ds.n());
  for (Eigen::Index i = 0; i < ds.n(); ++i) w[i] = plan.weights.draw(rng);
  const MatrixXd Xw = w.cwiseSqrt().asDiagonal() * ds.X;
  const VectorXd b = Xw.colPivHouseholderQr().solve(w.cwiseSqrt().cwiseProduct(ds.y));
  CHECK(out.replicates[2] == doctest::Approx(b[0]).epsilon(1e-9));
}

TEST_CASE("pairs warns above the singularity threshold") {
  const Dataset ds = testing::gaussian_dataset(40, 28, 71);
  ResamplingPlan plan = plan_for(Scheme::PairsMultinomial, 3);
  try {
    const BootstrapOutcome out = pairs_bootstrap(ds, Loss::squared(), plan, 1);
    CHECK(!out.warnings.empty());
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooManyRedraws);
  }
}

TEST_CASE("jackknife of the mean") {
  Dataset ds;
  ds.X = MatrixXd::Ones(25, 1);
  ds.y = testing::gaussian_vector(25, 81);
  std::vector<double> y(ds.y.data(), ds.y.data() + ds.y.size());
  const JackknifeOutcome out = jackknife(ds, Loss::squared(), VectorXd::Ones(1));
  CHECK(out.var_jack == doctest::Approx(sample_variance(y) / 25.0).epsilon(1e-12));
  CHECK(out.point == doctest::Approx(mean(y)).epsilon(1e-12));
  CHECK(out.corrected_ls == doctest::Approx(out.var_jack * 24.0 / 25.0));

  // Response in the column space: every leave-one-out fit is identical.
  Dataset exact = testing::gaussian_dataset(30, 4, 83);
  exact.y = exact.X * VectorXd::LinSpaced(4, 1.0, 2.0);
  const JackknifeOutcome z = jackknife(exact, Loss::squared(), VectorXd::Unit(4, 0));
  CHECK(z.var_jack < 1e-24);

  const JackknifeOutcome g = jackknife(ds, Loss::squared(), VectorXd::Ones(1), 2.0, JackCorrection::Gamma);
  REQUIRE(g.corrected_gamma.has_value());
  CHECK(*g.corrected_gamma == doctest::Approx(g.var_jack / 2.0));
  CHECK(g.ci.width() == doctest::Approx(2.0 * 1.959964 * std::sqrt(g.var_jack / 2.0)).epsilon(1e-6));
  CHECK_THROWS_AS(jackknife(ds, Loss::squared(), VectorXd::Ones(1), std::nullopt, JackCorrection::Gamma),
                  Error);
}

TEST_CASE("excessive failures abort") {
  CHECK_THROWS_AS(detail::collect_replicates(100, 1, 0.0, 0.95,
                                             [](int b) -> std::optional<double> {
                                               if (b % 10 == 0) return std::nullopt;
                                               return b;
                                             }),
                  Error);
  const BootstrapOutcome ok = detail::collect_replicates(
      100, 1, 0.0, 0.95, [](int b) -> std::optional<double> {
        if (b % 20 == 0) return std::nullopt;
        return b;
      });
  CHECK(ok.failed_replicates == 5);
}

TEST_CASE("plan validation") {
  ResamplingPlan plan;
  plan.B = 0;
  CHECK_THROWS_AS(plan.validate(3), Error);
  plan.B = 10;
  plan.v = VectorXd::Ones(3);
  CHECK_THROWS_AS(plan.validate(3), Error);
  plan.v = VectorXd::Ones(3) / std::sqrt(3.0);
  CHECK_NOTHROW(plan.validate(3));
  CHECK_THROWS_AS(plan.validate(4), Error);
}
