#include "hdboot/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "hdboot/error.hpp"

namespace hdboot {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorCode::InvalidArgument, "mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) throw Error(ErrorCode::InvalidArgument, "variance needs two values");
  // Shifted by the first value so that constant samples give exactly zero.
  const double shift = xs.front();
  double s = 0.0;
  for (double x : xs) s += x - shift;
  const double m = s / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - shift - m) * (x - shift - m);
  return ss / static_cast<double>(xs.size() - 1);
}

double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  const double h = (static_cast<double>(xs.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

double normal_quantile(double prob) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, prob);
}

double normal_cdf(double x) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::cdf(standard, x);
}

double proportion_se(double rate, int n) {
  return n > 0 ? std::sqrt(std::max(rate * (1.0 - rate), 0.0) / n) : 0.0;
}

}  // namespace hdboot
