#pragma once

#include <span>
#include <vector>

namespace hdboot {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return lo <= x && x <= hi; }
};

double mean(std::span<const double> xs);
// Sample variance with the n-1 denominator.
double sample_variance(std::span<const double> xs);
double median(std::vector<double> xs);
// Linear-interpolation quantile (type 7), q in [0,1].
double quantile(std::vector<double> xs, double q);

// Standard normal quantile and cdf.
double normal_quantile(double prob);
double normal_cdf(double x);

// Binomial standard error sqrt(r(1-r)/n).
double proportion_se(double rate, int n);

}  // namespace hdboot
