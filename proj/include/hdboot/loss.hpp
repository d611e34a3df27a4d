#pragma once

#include <string>
#include <string_view>

namespace hdboot {

enum class LossKind { SquaredError, Huber, AbsoluteError, SmoothedAbsolute };

// Convex regression loss rho with its derivative psi, the extended second
// derivative psi' and the Moreau proximal map of c*rho.
//
//   SquaredError       rho(x) = x^2 / 2
//   Huber(k)           rho(x) = x^2 / 2 for |x| <= k, k|x| - k^2/2 otherwise
//   AbsoluteError      rho(x) = |x|
//   SmoothedAbsolute   rho(x) = |x| + eta x^2 / 2
//
// psi' follows the indicator conventions used for the jackknife correction:
// Huber psi'(x) = 1{|x| <= k}, AbsoluteError psi'(x) = 1{x == 0}.
class Loss {
 public:
  static constexpr double kDefaultHuberK = 1.345;
  // Residual floor in the IRLS weight 1/max(|r|, delta) for absolute losses.
  static constexpr double kIrlsDelta = 1e-8;

  Loss() = default;

  static Loss squared() { return Loss(LossKind::SquaredError, 0.0); }
  static Loss huber(double k = kDefaultHuberK);
  static Loss absolute() { return Loss(LossKind::AbsoluteError, 0.0); }
  static Loss smoothed_absolute(double eta);

  // Accepts "l2", "huber", "huber:1", "l1", "smoothed_l1:1e-6" and similar.
  static Loss parse(std::string_view text);

  LossKind kind() const { return kind_; }
  // Huber transition point k or SmoothedAbsolute curvature eta; 0 otherwise.
  double param() const { return param_; }

  double rho(double x) const;
  double psi(double x) const;
  double psi_prime(double x) const;

  // psi(r)/r with the absolute-loss floor; always finite and positive.
  double irls_weight(double r) const;

  double prox(double x, double c) const;
  // d/dx prox(c rho)(x), taking the a.e. derivative at kinks.
  double prox_derivative(double x, double c) const;

  std::string name() const;

  friend bool operator==(const Loss&, const Loss&) = default;

 private:
  Loss(LossKind kind, double param) : kind_(kind), param_(param) {}

  LossKind kind_ = LossKind::SquaredError;
  double param_ = 0.0;
};

}  // namespace hdboot
