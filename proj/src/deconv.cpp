#include "hdboot/deconv.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include <boost/math/quadrature/gauss.hpp>

#include "hdboot/error.hpp"
#include "hdboot/stats.hpp"

namespace hdboot {

using Eigen::Index;
using Eigen::VectorXd;

namespace {

constexpr double kTailLevel = 0.001;
constexpr std::size_t kMinGrid = 512;
constexpr double kGridSpacing = 0.01;
// exp(-x) underflows to subnormals a little past this.
constexpr double kMaxExponent = 700.0;

// Composite Gauss-Legendre nodes and weights on (0, upper].
void quadrature(double upper, int panels, std::vector<double>& nodes, std::vector<double>& weights) {
  using Rule = boost::math::quadrature::gauss<double, 20>;
  const auto& x = Rule::abscissa();
  const auto& w = Rule::weights();
  nodes.clear();
  weights.clear();
  const double width = upper / panels;
  for (int k = 0; k < panels; ++k) {
    const double mid = (k + 0.5) * width;
    const double half = 0.5 * width;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] == 0.0) {
        nodes.push_back(mid);
        weights.push_back(half * w[j]);
        continue;
      }
      nodes.push_back(mid - half * x[j]);
      weights.push_back(half * w[j]);
      nodes.push_back(mid + half * x[j]);
      weights.push_back(half * w[j]);
    }
  }
}

// One pass of the tail clamp / increment / rescale procedure.
std::vector<double> monotone_pass(const std::vector<double>& g) {
  const std::size_t m = g.size();
  std::vector<double> v = g;
  std::size_t lo = 0;
  bool has_lo = false;
  for (std::size_t i = 0; i < m; ++i) {
    if (v[i] <= kTailLevel) {
      lo = i;
      has_lo = true;
    }
  }
  if (has_lo) {
    for (std::size_t i = 0; i <= lo; ++i) v[i] = 0.0;
  }
  const std::size_t start = has_lo ? lo + 1 : 0;
  for (std::size_t i = start; i < m; ++i) {
    if (v[i] >= 1.0 - kTailLevel) {
      for (std::size_t j = i; j < m; ++j) v[j] = 1.0;
      break;
    }
  }
  std::vector<double> c(m);
  double run = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = v[i] - prev;
    prev = v[i];
    if (d > 0.0) run += d;
    c[i] = run;
  }
  const double cmin = c.front();
  const double cmax = c.back();
  if (!(cmax > cmin)) throw Error(ErrorCode::DegenerateCdf, "cdf has no positive increments");
  for (double& x : c) x = (x - cmin) / (cmax - cmin);
  c.front() = 0.0;
  c.back() = 1.0;
  return c;
}

VectorXd standardize(VectorXd draws, double sigma_target, bool& degenerate) {
  draws.array() -= draws.mean();
  const double ss = draws.squaredNorm();
  if (!(ss > 0.0)) {
    degenerate = true;
    draws.setZero();
    return draws;
  }
  const double sd = std::sqrt(ss / static_cast<double>(draws.size() - 1));
  degenerate = false;
  draws *= sigma_target / sd;
  return draws;
}

}  // namespace

std::optional<double> estimate_noise_sd(const PredictedErrors& pe) {
  const double diff = pe.variance - pe.sigma_hat_ls * pe.sigma_hat_ls;
  if (!(diff > 0.0)) return std::nullopt;
  return std::sqrt(diff);
}

DeconvolvedCdf deconvolve_cdf(const VectorXd& values, double noise_sd,
                              std::optional<double> bandwidth, const VectorXd* per_obs_sd) {
  const Index n = values.size();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "deconvolution needs at least two values");
  if (!(noise_sd > 0.0)) throw Error(ErrorCode::InvalidArgument, "noise sd must be positive");
  if (per_obs_sd != nullptr && per_obs_sd->size() != n) {
    throw Error(ErrorCode::InvalidArgument, "per-observation noise has the wrong length");
  }
  const double h = bandwidth ? *bandwidth : noise_sd / std::sqrt(std::log(static_cast<double>(n)));
  if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth must be positive");
  const double T = 1.0 / h;
  const double sd_max = per_obs_sd != nullptr ? per_obs_sd->maxCoeff() : noise_sd;
  const double exponent = 0.5 * sd_max * sd_max * T * T;
  if (exponent > kMaxExponent) {
    std::ostringstream os;
    os << "Gaussian characteristic function underflows at bandwidth " << h
       << "; use a bandwidth of at least " << sd_max / std::sqrt(2.0 * kMaxExponent);
    throw Error(ErrorCode::NumericalUnderflow, os.str());
  }

  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  const double range = hi - lo;
  std::size_t G = kMinGrid;
  if (range > 0.0) {
    G = std::max(G, static_cast<std::size_t>(std::ceil(range / kGridSpacing)) + 1);
  }
  std::vector<double> grid(G);
  for (std::size_t g = 0; g < G; ++g) {
    grid[g] = G == 1 ? lo : lo + range * static_cast<double>(g) / static_cast<double>(G - 1);
  }

  const double reach = std::max(std::abs(lo), std::abs(hi));
  const int panels = std::max(8, static_cast<int>(std::ceil(T * 2.0 * reach / std::numbers::pi)));
  std::vector<double> t, w;
  quadrature(T, panels, t, w);
  const std::size_t K = t.size();
  // omega_k = w_k phiK(t_k h) / (phiZ(t_k) t_k)
  std::vector<double> A(K, 0.0), Bs(K, 0.0), omega(K);
  for (std::size_t k = 0; k < K; ++k) {
    double ca = 0.0, sb = 0.0;
    for (Index j = 0; j < n; ++j) {
      ca += std::cos(t[k] * values[j]);
      sb += std::sin(t[k] * values[j]);
    }
    A[k] = ca;
    Bs[k] = sb;
    const double s = t[k] * h;
    const double kernel = std::pow(1.0 - s * s, 3);
    double phi_z = 0.0;
    if (per_obs_sd != nullptr) {
      for (Index j = 0; j < n; ++j) {
        const double sj = (*per_obs_sd)[j];
        phi_z += std::exp(-0.5 * sj * sj * t[k] * t[k]);
      }
      phi_z /= static_cast<double>(n);
    } else {
      phi_z = std::exp(-0.5 * noise_sd * noise_sd * t[k] * t[k]);
    }
    omega[k] = w[k] * kernel / (phi_z * t[k]);
  }
  std::vector<double> raw(G);
  const double scale = 1.0 / (std::numbers::pi * static_cast<double>(n));
  for (std::size_t g = 0; g < G; ++g) {
    double acc = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double tx = t[k] * grid[g];
      acc += omega[k] * (Bs[k] * std::cos(tx) - A[k] * std::sin(tx));
    }
    raw[g] = 0.5 - scale * acc;
  }
  DeconvolvedCdf out = monotonize_cdf(std::move(grid), std::move(raw));
  out.bandwidth = h;
  out.noise_sd = noise_sd;
  return out;
}

DeconvolvedCdf deconvolve_cdf(const PredictedErrors& pe, double noise_sd,
                              std::optional<double> bandwidth) {
  return deconvolve_cdf(pe.values, noise_sd, bandwidth, nullptr);
}

DeconvolvedCdf monotonize_cdf(std::vector<double> grid, std::vector<double> values) {
  if (grid.size() != values.size() || grid.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "cdf needs at least two matching grid points");
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i]) || !std::isfinite(values[i])) {
      throw Error(ErrorCode::InvalidArgument, "cdf values must be finite");
    }
    if (i > 0 && grid[i] < grid[i - 1]) {
      throw Error(ErrorCode::InvalidArgument, "cdf grid must be nondecreasing");
    }
  }
  std::vector<double> current = monotone_pass(values);
  for (int pass = 0; pass < 64; ++pass) {
    std::vector<double> next = monotone_pass(current);
    if (next == current) break;
    current = std::move(next);
  }
  DeconvolvedCdf out;
  out.grid = std::move(grid);
  out.values = std::move(current);
  return out;
}

VectorXd inverse_cdf_draws(const DeconvolvedCdf& cdf, int m, CounterRng& rng) {
  const auto& F = cdf.values;
  const auto& x = cdf.grid;
  if (F.size() != x.size() || F.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "cdf needs at least two grid points");
  }
  VectorXd out(m);
  for (int i = 0; i < m; ++i) {
    const double u = rng.uniform();
    // first index with F >= u; u is in (0, 1) and F runs from 0 to 1
    const auto it = std::lower_bound(F.begin(), F.end(), u);
    const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(it - F.begin()), 1,
                                                  F.size() - 1);
    const double f0 = F[k - 1];
    const double f1 = F[k];
    const double frac = f1 > f0 ? (u - f0) / (f1 - f0) : 1.0;
    out[i] = x[k - 1] + std::clamp(frac, 0.0, 1.0) * (x[k] - x[k - 1]);
  }
  return out;
}

GhatSample sample_ghat(const DeconvolvedCdf& cdf, int m, double sigma_target, CounterRng& rng) {
  if (m < 2) throw Error(ErrorCode::InvalidArgument, "need at least two draws");
  if (!(sigma_target > 0.0)) throw Error(ErrorCode::InvalidArgument, "target sd must be positive");
  GhatSample s;
  s.draws = standardize(inverse_cdf_draws(cdf, m, rng), sigma_target, s.degenerate);
  return s;
}

GhatSample sample_ghat(const DeconvolvedCdf& cdf, int m, double sigma_target, std::uint64_t seed) {
  CounterRng rng(seed, stream_tag("ghat"), 0);
  return sample_ghat(cdf, m, sigma_target, rng);
}

BootstrapOutcome deconvolution_bootstrap(const Dataset& ds, const Loss& loss,
                                         const ResamplingPlan& plan, std::uint64_t seed,
                                         int threads, const FitOptions& opts) {
  ds.validate();
  plan.validate(ds.p());
  if (plan.scheme != Scheme::DeconvolutionResidual) {
    throw Error(ErrorCode::InvalidArgument, "deconvolution bootstrap needs the deconv scheme");
  }
  const Index n = ds.n();
  const VectorXd v = plan.contrast(ds.p());
  const FitResult full = fit(ds, loss, opts);
  const double point = v.dot(full.beta_hat);
  const PredictedErrors pe = predicted_errors(ds, loss, opts, threads);
  const std::optional<double> noise = estimate_noise_sd(pe);
  const std::uint64_t tag = stream_tag(to_string(plan.scheme));

  // Error vector generator for replicate b.
  std::function<VectorXd(int)> draw;
  VectorXd pool;
  DeconvolvedCdf cdf;
  if (!noise) {
    pool = pe.values;
    pool.array() -= pool.mean();
    draw = [&](int b) {
      CounterRng rng(seed, tag, static_cast<std::uint64_t>(b));
      VectorXd eps(n);
      for (Index i = 0; i < n; ++i) eps[i] = pool[static_cast<Index>(rng.below(n))];
      return eps;
    };
  } else {
    VectorXd per_obs;
    if (plan.elliptical_noise) per_obs = estimate_lambda_sq(ds).cwiseSqrt() * (*noise);
    cdf = deconvolve_cdf(pe.values, *noise, plan.bandwidth,
                         plan.elliptical_noise ? &per_obs : nullptr);
    const double target = pe.sigma_hat_ls;
    if (!(target > 0.0)) throw Error(ErrorCode::DegenerateScale, "least-squares noise estimate is zero");
    if (plan.draw_style == DrawStyle::FrozenDraw) {
      CounterRng rng(seed, stream_tag("deconv-frozen"), 0);
      pool = sample_ghat(cdf, static_cast<int>(n), target, rng).draws;
      draw = [&](int b) {
        CounterRng r(seed, tag, static_cast<std::uint64_t>(b));
        VectorXd eps(n);
        for (Index i = 0; i < n; ++i) eps[i] = pool[static_cast<Index>(r.below(n))];
        return eps;
      };
    } else {
      draw = [&, target](int b) {
        CounterRng rng(seed, tag, static_cast<std::uint64_t>(b));
        return sample_ghat(cdf, static_cast<int>(n), target, rng).draws;
      };
    }
  }

  BootstrapOutcome out;
  if (loss.kind() == LossKind::SquaredError) {
    const VectorXd c = LeastSquaresFactor(ds.X, opts.rank_tol).contrast_weights(v);
    out = detail::collect_replicates(plan.B, threads, point, plan.ci_level,
                                     [&](int b) -> std::optional<double> {
                                       return point + c.dot(draw(b));
                                     });
  } else {
    const VectorXd fitted_values = ds.X * full.beta_hat;
    out = detail::collect_replicates(
        plan.B, threads, point, plan.ci_level, [&](int b) -> std::optional<double> {
          try {
            const FitResult r = fit_from(ds.X, fitted_values + draw(b), loss, full.beta_hat, opts);
            if (!r.converged) return std::nullopt;
            return v.dot(r.beta_hat);
          } catch (const Error&) {
            return std::nullopt;
          }
        });
  }
  out.fallback = !noise.has_value();
  if (out.fallback) {
    out.warnings.push_back("predicted-error variance does not exceed the noise estimate; "
                           "bootstrapped centered predicted errors instead");
  }
  return out;
}

VectorXd estimate_lambda_sq(const Dataset& ds) {
  const VectorXd norms = ds.X.rowwise().squaredNorm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 0.0)) {
      throw Error(ErrorCode::ZeroRow, "design row " + std::to_string(i) + " is all zero");
    }
  }
  return norms / norms.mean();
}

void write_cdf_csv(const DeconvolvedCdf& cdf, std::ostream& os) {
  os << "grid,value\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < cdf.grid.size(); ++i) os << cdf.grid[i] << ',' << cdf.values[i] << '\n';
}

DeconvolvedCdf read_cdf_csv(std::istream& is) {
  DeconvolvedCdf cdf;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("grid", 0) == 0) continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::Io, "bad cdf line '" + line + "'");
    try {
      cdf.grid.push_back(std::stod(line.substr(0, comma)));
      cdf.values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Io, "bad cdf line '" + line + "'");
    }
  }
  return cdf;
}

}  // namespace hdboot
