#include "hdboot/resample.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hdboot/deconv.hpp"
#include "hdboot/error.hpp"
#include "hdboot/parallel.hpp"

namespace hdboot {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr int kMaxRedraws = 100;
constexpr double kMaxFailureRate = 0.05;

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad " + what + " '" + text + "'");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Weighted least squares through the Gram matrix; used for resampled designs
// where the orthogonal factorization would dominate the run time.
VectorXd gram_weighted_ls(const MatrixXd& X, const VectorXd& y, const VectorXd& w,
                          double rank_tol) {
  const MatrixXd Xs = w.cwiseSqrt().asDiagonal() * X;
  MatrixXd gram = MatrixXd::Zero(X.cols(), X.cols());
  gram.selfadjointView<Eigen::Lower>().rankUpdate(Xs.transpose());
  Eigen::LDLT<MatrixXd> ldlt(gram.selfadjointView<Eigen::Lower>());
  const VectorXd d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || !(d.maxCoeff() > 0.0) ||
      d.minCoeff() < rank_tol * rank_tol * d.maxCoeff()) {
    throw Error(ErrorCode::RankDeficient, "resampled design is singular");
  }
  return ldlt.solve(X.transpose() * w.cwiseProduct(y));
}

FitResult refit_weighted(const Dataset& ds, const Loss& loss, const VectorXd& w,
                         const FitOptions& opts, const VectorXd& warm) {
  if (loss.kind() == LossKind::SquaredError) {
    FitResult r;
    r.loss = loss;
    r.beta_hat = gram_weighted_ls(ds.X, ds.y, w, opts.rank_tol);
    r.converged = true;
    r.iterations = 1;
    return r;
  }
  return fit_weighted(ds.X, ds.y, w, loss, opts, &warm);
}

// Shared loop for pairs and weighted schemes.
BootstrapOutcome observation_weight_bootstrap(
    const Dataset& ds, const Loss& loss, const ResamplingPlan& plan, std::uint64_t seed,
    int threads, const FitOptions& opts,
    const std::function<void(CounterRng&, VectorXd&)>& draw_weights) {
  ds.validate();
  plan.validate(ds.p());
  const VectorXd v = plan.contrast(ds.p());
  const FitResult full = fit(ds, loss, opts);
  const double point = v.dot(full.beta_hat);
  const std::uint64_t tag = stream_tag(to_string(plan.scheme));
  std::vector<int> redraws(static_cast<std::size_t>(plan.B), 0);
  auto body = [&](int b) -> std::optional<double> {
    CounterRng rng(seed, tag, static_cast<std::uint64_t>(b));
    VectorXd w(ds.n());
    for (int attempt = 0;; ++attempt) {
      draw_weights(rng, w);
      if ((w.array() == 1.0).all()) return point;
      try {
        const FitResult r = refit_weighted(ds, loss, w, opts, full.beta_hat);
        if (!r.converged) return std::nullopt;
        return v.dot(r.beta_hat);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::RankDeficient) return std::nullopt;
      }
      if (attempt + 1 > kMaxRedraws) {
        throw Error(ErrorCode::TooManyRedraws,
                    "replicate " + std::to_string(b) + " needed more than " +
                        std::to_string(kMaxRedraws) + " redraws");
      }
      ++redraws[static_cast<std::size_t>(b)];
    }
  };
  BootstrapOutcome out = detail::collect_replicates(plan.B, threads, point, plan.ci_level, body);
  out.redraws = std::accumulate(redraws.begin(), redraws.end(), 0);
  return out;
}

}  // namespace

WeightLaw WeightLaw::poisson_mixture(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "mixture parameter must lie in [0, 1]");
  }
  return WeightLaw(WeightKind::PoissonMixture, alpha);
}

WeightLaw WeightLaw::empirical(std::vector<double> values, std::vector<double> probs) {
  if (values.empty() || values.size() != probs.size()) {
    throw Error(ErrorCode::InvalidArgument, "weight table needs matching values and probabilities");
  }
  double total = 0.0;
  double m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] >= 0.0) || !(probs[i] >= 0.0) || !std::isfinite(values[i])) {
      throw Error(ErrorCode::InvalidArgument, "weight table entries must be nonnegative");
    }
    total += probs[i];
    m += values[i] * probs[i];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidArgument, "weight probabilities must sum to one");
  }
  if (std::abs(m - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "weight law must have mean one");
  WeightLaw law(WeightKind::EmpiricalTable, 0.0);
  law.values_ = std::move(values);
  law.probs_ = std::move(probs);
  return law;
}

WeightLaw WeightLaw::parse(const std::string& text) {
  std::string head = lower(text);
  std::string arg;
  if (auto pos = head.find(':'); pos != std::string::npos) {
    arg = head.substr(pos + 1);
    head = head.substr(0, pos);
  }
  if (head == "const1" || head == "constant" || head == "one") return constant_one();
  if (head == "poisson1" || head == "poisson") return poisson_one();
  if (head == "poisson_mix" || head == "poisson-mix" || head == "mixture") {
    if (arg.empty()) throw Error(ErrorCode::InvalidArgument, "poisson_mix needs an alpha");
    return poisson_mixture(parse_number(arg, "alpha"));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown weight law '" + text + "'");
}

double WeightLaw::draw(CounterRng& rng) const {
  switch (kind_) {
    case WeightKind::ConstantOne:
      return 1.0;
    case WeightKind::PoissonOne:
      return rng.poisson1();
    case WeightKind::PoissonMixture:
      return 1.0 - alpha_ + alpha_ * rng.poisson1();
    case WeightKind::EmpiricalTable: {
      double u = rng.uniform();
      for (std::size_t i = 0; i + 1 < values_.size(); ++i) {
        if (u < probs_[i]) return values_[i];
        u -= probs_[i];
      }
      return values_.back();
    }
  }
  return 1.0;
}

std::vector<std::pair<double, double>> WeightLaw::support() const {
  std::vector<std::pair<double, double>> out;
  switch (kind_) {
    case WeightKind::ConstantOne:
      out.emplace_back(1.0, 1.0);
      break;
    case WeightKind::PoissonOne:
    case WeightKind::PoissonMixture: {
      const double a = kind_ == WeightKind::PoissonOne ? 1.0 : alpha_;
      double pk = std::exp(-1.0);
      for (int k = 0; k <= kSeriesTerms; ++k) {
        if (k > 0) pk /= k;
        out.emplace_back(1.0 - a + a * k, pk);
      }
      break;
    }
    case WeightKind::EmpiricalTable:
      for (std::size_t i = 0; i < values_.size(); ++i) out.emplace_back(values_[i], probs_[i]);
      break;
  }
  return out;
}

double WeightLaw::expectation(const std::function<double(double)>& f) const {
  double total = 0.0;
  for (const auto& [w, prob] : support()) total += prob * f(w);
  return total;
}

double WeightLaw::zero_mass() const {
  double total = 0.0;
  for (const auto& [w, prob] : support()) {
    if (w == 0.0) total += prob;
  }
  return total;
}

std::string WeightLaw::name() const {
  std::ostringstream os;
  switch (kind_) {
    case WeightKind::ConstantOne:
      return "const1";
    case WeightKind::PoissonOne:
      return "poisson1";
    case WeightKind::PoissonMixture:
      os << "poisson_mix:" << alpha_;
      return os.str();
    case WeightKind::EmpiricalTable:
      os << "table:" << values_.size();
      return os.str();
  }
  return "unknown";
}

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::ResidualRaw:
      return "residual";
    case Scheme::ResidualHatCorrected:
      return "residual_hat";
    case Scheme::ResidualMcKean:
      return "residual_mckean";
    case Scheme::PredictedStandardized:
      return "predicted";
    case Scheme::DeconvolutionResidual:
      return "deconv";
    case Scheme::GaussianResidual:
      return "gaussian";
    case Scheme::PairsMultinomial:
      return "pairs";
    case Scheme::WeightedIID:
      return "weighted";
    case Scheme::Jackknife:
      return "jackknife";
  }
  return "unknown";
}

Scheme parse_scheme(const std::string& text) {
  const std::string s = lower(text);
  for (Scheme scheme :
       {Scheme::ResidualRaw, Scheme::ResidualHatCorrected, Scheme::ResidualMcKean,
        Scheme::PredictedStandardized, Scheme::DeconvolutionResidual, Scheme::GaussianResidual,
        Scheme::PairsMultinomial, Scheme::WeightedIID, Scheme::Jackknife}) {
    if (s == to_string(scheme)) return scheme;
  }
  if (s == "raw") return Scheme::ResidualRaw;
  if (s == "hat") return Scheme::ResidualHatCorrected;
  if (s == "mckean") return Scheme::ResidualMcKean;
  if (s == "deconvolution") return Scheme::DeconvolutionResidual;
  if (s == "jack") return Scheme::Jackknife;
  throw Error(ErrorCode::InvalidArgument, "unknown scheme '" + text + "'");
}

std::string to_string(JackCorrection c) {
  switch (c) {
    case JackCorrection::None:
      return "none";
    case JackCorrection::LeastSquares:
      return "ls";
    case JackCorrection::Gamma:
      return "gamma";
  }
  return "none";
}

JackCorrection parse_correction(const std::string& text) {
  const std::string s = lower(text);
  if (s == "none") return JackCorrection::None;
  if (s == "ls") return JackCorrection::LeastSquares;
  if (s == "gamma") return JackCorrection::Gamma;
  throw Error(ErrorCode::InvalidArgument, "unknown jackknife correction '" + text + "'");
}

bool is_residual_family(Scheme scheme) {
  switch (scheme) {
    case Scheme::ResidualRaw:
    case Scheme::ResidualHatCorrected:
    case Scheme::ResidualMcKean:
    case Scheme::PredictedStandardized:
    case Scheme::DeconvolutionResidual:
    case Scheme::GaussianResidual:
      return true;
    default:
      return false;
  }
}

VectorXd ResamplingPlan::contrast(Index p) const {
  if (v.size() == 0) return VectorXd::Unit(p, 0);
  if (v.size() != p) throw Error(ErrorCode::InvalidArgument, "contrast has the wrong length");
  if (std::abs(v.norm() - 1.0) > 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "contrast must have unit length");
  }
  return v;
}

void ResamplingPlan::validate(Index p) const {
  if (B < 1) throw Error(ErrorCode::InvalidArgument, "B must be at least 1");
  if (!(ci_level > 0.0 && ci_level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence level must lie in (0, 1)");
  }
  if (bandwidth && !(*bandwidth > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  }
  contrast(p);
}

std::string ResamplingPlan::label() const {
  if (scheme == Scheme::WeightedIID) return "weighted[" + weights.name() + "]";
  if (scheme == Scheme::Jackknife && correction != JackCorrection::None) {
    return "jackknife[" + to_string(correction) + "]";
  }
  if (scheme == Scheme::DeconvolutionResidual && draw_style == DrawStyle::FrozenDraw) {
    return "deconv[frozen]";
  }
  return to_string(scheme);
}

double mckean_d(const VectorXd& residuals, const Loss& loss, double scale) {
  if (!(scale > 0.0)) throw Error(ErrorCode::DegenerateScale, "scale estimate is zero");
  const Index n = residuals.size();
  double m_epsi = 0.0, m_psi_prime = 0.0, m_psi_sq = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double e = residuals[i] / scale;
    const double ps = loss.psi(e);
    m_epsi += e * ps;
    m_psi_prime += loss.psi_prime(e);
    m_psi_sq += ps * ps;
  }
  m_epsi /= n;
  m_psi_prime /= n;
  m_psi_sq /= n;
  if (!(m_psi_prime > 0.0)) {
    throw Error(ErrorCode::DegenerateScale, "mean of psi' is zero at the fitted residuals");
  }
  return 2.0 * m_epsi / m_psi_prime - m_psi_sq / (m_psi_prime * m_psi_prime);
}

VectorXd residual_pool(const Dataset& ds, const Loss& loss, Scheme scheme, const FitResult& fitted,
                       const FitOptions& opts, int threads) {
  const Index n = ds.n();
  VectorXd pool(n);
  switch (scheme) {
    case Scheme::ResidualRaw:
      pool = fitted.residuals;
      break;
    case Scheme::ResidualHatCorrected: {
      const VectorXd h = hat_diagonal(ds);
      for (Index i = 0; i < n; ++i) {
        if (!(h[i] < 1.0)) throw Error(ErrorCode::DegenerateScale, "leverage equal to one");
        pool[i] = fitted.residuals[i] / std::sqrt(1.0 - h[i]);
      }
      break;
    }
    case Scheme::ResidualMcKean: {
      const VectorXd h = hat_diagonal(ds);
      const double s = std::sqrt(sigma_hat_ls(ds));
      const double d = mckean_d(fitted.residuals, loss, s);
      for (Index i = 0; i < n; ++i) {
        const double denom = 1.0 - d * h[i];
        if (!(denom > 0.0)) {
          throw Error(ErrorCode::DegenerateScale, "robust residual correction is not defined (1 - d h <= 0)");
        }
        pool[i] = fitted.residuals[i] / std::sqrt(denom);
      }
      break;
    }
    case Scheme::PredictedStandardized:
      pool = predicted_errors(ds, loss, opts, threads).standardized;
      break;
    default:
      throw Error(ErrorCode::InvalidArgument, "scheme " + to_string(scheme) + " has no residual pool");
  }
  pool.array() -= pool.mean();
  return pool;
}

BootstrapOutcome residual_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                                    std::uint64_t seed, int threads, const FitOptions& opts) {
  ds.validate();
  plan.validate(ds.p());
  if (!is_residual_family(plan.scheme)) {
    throw Error(ErrorCode::InvalidArgument, "not a residual scheme: " + to_string(plan.scheme));
  }
  if (plan.scheme == Scheme::DeconvolutionResidual) {
    return deconvolution_bootstrap(ds, loss, plan, seed, threads, opts);
  }
  const VectorXd v = plan.contrast(ds.p());
  const FitResult full = fit(ds, loss, opts);
  const double point = v.dot(full.beta_hat);
  const Index n = ds.n();
  VectorXd pool;
  double gauss_sd = 0.0;
  if (plan.scheme == Scheme::GaussianResidual) {
    gauss_sd = std::sqrt(sigma_hat_ls(ds));
  } else {
    pool = residual_pool(ds, loss, plan.scheme, full, opts, threads);
  }
  const std::uint64_t tag = stream_tag(to_string(plan.scheme));
  auto draw = [&](int b) {
    CounterRng rng(seed, tag, static_cast<std::uint64_t>(b));
    VectorXd eps(n);
    if (plan.scheme == Scheme::GaussianResidual) {
      for (Index i = 0; i < n; ++i) eps[i] = gauss_sd * rng.normal();
    } else {
      for (Index i = 0; i < n; ++i) eps[i] = pool[static_cast<Index>(rng.below(n))];
    }
    return eps;
  };
  if (loss.kind() == LossKind::SquaredError) {
    // v' beta*(X beta_hat + eps) = v' beta_hat + c' eps
    const VectorXd c = LeastSquaresFactor(ds.X, opts.rank_tol).contrast_weights(v);
    return detail::collect_replicates(plan.B, threads, point, plan.ci_level,
                                      [&](int b) -> std::optional<double> {
                                        return point + c.dot(draw(b));
                                      });
  }
  const VectorXd fitted_values = ds.X * full.beta_hat;
  return detail::collect_replicates(
      plan.B, threads, point, plan.ci_level, [&](int b) -> std::optional<double> {
        try {
          const VectorXd ystar = fitted_values + draw(b);
          const FitResult r = fit_from(ds.X, ystar, loss, full.beta_hat, opts);
          if (!r.converged) return std::nullopt;
          return v.dot(r.beta_hat);
        } catch (const Error&) {
          return std::nullopt;
        }
      });
}

BootstrapOutcome pairs_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                                 std::uint64_t seed, int threads, const FitOptions& opts) {
  if (plan.scheme != Scheme::PairsMultinomial) {
    throw Error(ErrorCode::InvalidArgument, "pairs bootstrap needs the pairs scheme");
  }
  const Index n = ds.n();
  BootstrapOutcome out = observation_weight_bootstrap(
      ds, loss, plan, seed, threads, opts, [n](CounterRng& rng, VectorXd& w) {
        w.setZero();
        for (Index i = 0; i < n; ++i) w[static_cast<Index>(rng.below(n))] += 1.0;
      });
  if (static_cast<double>(ds.p()) / static_cast<double>(n) > 1.0 - std::exp(-1.0)) {
    out.warnings.push_back(
        "p/n exceeds 1 - 1/e: resampled designs are typically singular and need redraws");
  }
  return out;
}

BootstrapOutcome weighted_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                                    std::uint64_t seed, int threads, const FitOptions& opts) {
  if (plan.scheme != Scheme::WeightedIID) {
    throw Error(ErrorCode::InvalidArgument, "weighted bootstrap needs the weighted scheme");
  }
  const WeightLaw& law = plan.weights;
  return observation_weight_bootstrap(ds, loss, plan, seed, threads, opts,
                                      [&law](CounterRng& rng, VectorXd& w) {
                                        for (Index i = 0; i < w.size(); ++i) w[i] = law.draw(rng);
                                      });
}

BootstrapOutcome run_bootstrap(const Dataset& ds, const Loss& loss, const ResamplingPlan& plan,
                               std::uint64_t seed, int threads, const FitOptions& opts) {
  switch (plan.scheme) {
    case Scheme::PairsMultinomial:
      return pairs_bootstrap(ds, loss, plan, seed, threads, opts);
    case Scheme::WeightedIID:
      return weighted_bootstrap(ds, loss, plan, seed, threads, opts);
    case Scheme::Jackknife:
      throw Error(ErrorCode::InvalidArgument, "the jackknife is not a bootstrap scheme");
    default:
      return residual_bootstrap(ds, loss, plan, seed, threads, opts);
  }
}

JackknifeOutcome jackknife(const Dataset& ds, const Loss& loss, const VectorXd& v,
                           std::optional<double> gamma_hat, JackCorrection correction, double level,
                           int threads, const FitOptions& opts) {
  ds.validate();
  if (v.size() != ds.p()) throw Error(ErrorCode::InvalidArgument, "contrast has the wrong length");
  const auto fits = loo_fits(ds, loss, opts, threads);
  const Index n = ds.n();
  std::vector<double> t(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = v.dot(fits[static_cast<std::size_t>(i)].beta_hat);
  const double tbar = mean(t);
  double ss = 0.0;
  for (double x : t) ss += (x - tbar) * (x - tbar);
  JackknifeOutcome out;
  out.point = v.dot(fit(ds, loss, opts).beta_hat);
  out.var_jack = ss * static_cast<double>(n - 1) / static_cast<double>(n);
  out.corrected_ls = (1.0 - static_cast<double>(ds.p()) / static_cast<double>(n)) * out.var_jack;
  if (gamma_hat) {
    if (!(*gamma_hat > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma must be positive");
    out.corrected_gamma = out.var_jack / *gamma_hat;
  }
  double var = out.var_jack;
  if (correction == JackCorrection::LeastSquares) var = out.corrected_ls;
  if (correction == JackCorrection::Gamma) {
    if (!out.corrected_gamma) {
      throw Error(ErrorCode::InvalidArgument, "gamma correction needs a gamma estimate");
    }
    var = *out.corrected_gamma;
  }
  out.ci = normal_ci(out.point, var, level);
  return out;
}

Interval percentile_ci(std::vector<double> replicates, double level) {
  const auto B = static_cast<long>(replicates.size());
  if (B < 2) throw Error(ErrorCode::InsufficientReplicates, "percentile interval needs two replicates");
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence level must lie in (0, 1)");
  }
  const double alpha = 1.0 - level;
  // The small offset keeps exact products such as 1000 * 0.025 on their integer.
  auto position = [B](double x) {
    const long k = static_cast<long>(std::ceil(x - 1e-9));
    return std::clamp(k, 1L, B);
  };
  const long lo = position(static_cast<double>(B + 1) * alpha / 2.0);
  const long hi = position(static_cast<double>(B + 1) * (1.0 - alpha / 2.0));
  std::sort(replicates.begin(), replicates.end());
  return {replicates[static_cast<std::size_t>(lo - 1)], replicates[static_cast<std::size_t>(hi - 1)]};
}

Interval normal_ci(double point, double variance, double level) {
  if (!(variance >= 0.0)) throw Error(ErrorCode::InvalidArgument, "variance must be nonnegative");
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "confidence level must lie in (0, 1)");
  }
  const double half = normal_quantile(1.0 - (1.0 - level) / 2.0) * std::sqrt(variance);
  return {point - half, point + half};
}

namespace detail {

BootstrapOutcome collect_replicates(int B, int threads, double point, double level,
                                    const std::function<std::optional<double>(int)>& body) {
  std::vector<double> values(static_cast<std::size_t>(B), 0.0);
  std::vector<char> ok(static_cast<std::size_t>(B), 0);
  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b) {
    const auto r = body(static_cast<int>(b));
    if (r && std::isfinite(*r)) {
      values[b] = *r;
      ok[b] = 1;
    }
  });
  BootstrapOutcome out;
  out.point = point;
  std::vector<double> good;
  good.reserve(values.size());
  for (std::size_t b = 0; b < values.size(); ++b) {
    if (ok[b]) good.push_back(values[b]);
  }
  out.failed_replicates = B - static_cast<int>(good.size());
  if (out.failed_replicates > kMaxFailureRate * B) {
    throw Error(ErrorCode::ExcessiveFailures, std::to_string(out.failed_replicates) + " of " +
                                                  std::to_string(B) + " replicates failed");
  }
  const Interval ci = percentile_ci(good, level);
  out.ci_lo = ci.lo;
  out.ci_hi = ci.hi;
  out.boot_variance = sample_variance(good);
  out.replicates = Eigen::Map<const VectorXd>(good.data(), static_cast<Index>(good.size()));
  return out;
}

}  // namespace detail

}  // namespace hdboot
