#include "hdboot/loss.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "hdboot/error.hpp"

namespace hdboot {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

}  // namespace

Loss Loss::huber(double k) {
  if (!(k > 0.0) || !std::isfinite(k)) {
    throw Error(ErrorCode::InvalidArgument, "Huber transition point must be positive");
  }
  return Loss(LossKind::Huber, k);
}

Loss Loss::smoothed_absolute(double eta) {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw Error(ErrorCode::InvalidArgument, "smoothing curvature must be positive");
  }
  return Loss(LossKind::SmoothedAbsolute, eta);
}

Loss Loss::parse(std::string_view text) {
  std::string head(text);
  std::string arg;
  if (auto pos = head.find(':'); pos != std::string::npos) {
    arg = head.substr(pos + 1);
    head = head.substr(0, pos);
  }
  std::transform(head.begin(), head.end(), head.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  auto number = [&](double fallback) {
    if (arg.empty()) return fallback;
    try {
      std::size_t used = 0;
      double v = std::stod(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad loss parameter '" + arg + "'");
    }
  };
  if (head == "l2" || head == "ls" || head == "squared") return squared();
  if (head == "huber") return huber(number(kDefaultHuberK));
  if (head == "l1" || head == "lad" || head == "absolute") return absolute();
  if (head == "smoothed_l1" || head == "smoothed-l1") return smoothed_absolute(number(1e-6));
  throw Error(ErrorCode::InvalidArgument, "unknown loss '" + std::string(text) + "'");
}

double Loss::rho(double x) const {
  const double ax = std::abs(x);
  switch (kind_) {
    case LossKind::SquaredError:
      return 0.5 * x * x;
    case LossKind::Huber:
      return ax <= param_ ? 0.5 * x * x : param_ * ax - 0.5 * param_ * param_;
    case LossKind::AbsoluteError:
      return ax;
    case LossKind::SmoothedAbsolute:
      return ax + 0.5 * param_ * x * x;
  }
  return 0.0;
}

double Loss::psi(double x) const {
  switch (kind_) {
    case LossKind::SquaredError:
      return x;
    case LossKind::Huber:
      return std::clamp(x, -param_, param_);
    case LossKind::AbsoluteError:
      return sign(x);
    case LossKind::SmoothedAbsolute:
      return sign(x) + param_ * x;
  }
  return 0.0;
}

double Loss::psi_prime(double x) const {
  switch (kind_) {
    case LossKind::SquaredError:
      return 1.0;
    case LossKind::Huber:
      return std::abs(x) <= param_ ? 1.0 : 0.0;
    case LossKind::AbsoluteError:
      return x == 0.0 ? 1.0 : 0.0;
    case LossKind::SmoothedAbsolute:
      return param_ + (x == 0.0 ? 1.0 : 0.0);
  }
  return 0.0;
}

double Loss::irls_weight(double r) const {
  const double ar = std::abs(r);
  switch (kind_) {
    case LossKind::SquaredError:
      return 1.0;
    case LossKind::Huber:
      return ar <= param_ ? 1.0 : param_ / ar;
    case LossKind::AbsoluteError:
      return 1.0 / std::max(ar, kIrlsDelta);
    case LossKind::SmoothedAbsolute:
      return 1.0 / std::max(ar, kIrlsDelta) + param_;
  }
  return 1.0;
}

double Loss::prox(double x, double c) const {
  switch (kind_) {
    case LossKind::SquaredError:
      return x / (1.0 + c);
    case LossKind::Huber:
      if (std::abs(x) <= param_ * (1.0 + c)) return x / (1.0 + c);
      return x - c * param_ * sign(x);
    case LossKind::AbsoluteError:
      return soft_threshold(x, c);
    case LossKind::SmoothedAbsolute:
      return soft_threshold(x, c) / (1.0 + c * param_);
  }
  return x;
}

double Loss::prox_derivative(double x, double c) const {
  switch (kind_) {
    case LossKind::SquaredError:
      return 1.0 / (1.0 + c);
    case LossKind::Huber:
      return std::abs(x) <= param_ * (1.0 + c) ? 1.0 / (1.0 + c) : 1.0;
    case LossKind::AbsoluteError:
      return std::abs(x) > c ? 1.0 : 0.0;
    case LossKind::SmoothedAbsolute:
      return std::abs(x) > c ? 1.0 / (1.0 + c * param_) : 0.0;
  }
  return 1.0;
}

std::string Loss::name() const {
  std::ostringstream os;
  switch (kind_) {
    case LossKind::SquaredError:
      return "l2";
    case LossKind::Huber:
      os << "huber:" << param_;
      return os.str();
    case LossKind::AbsoluteError:
      return "l1";
    case LossKind::SmoothedAbsolute:
      os << "smoothed_l1:" << param_;
      return os.str();
  }
  return "unknown";
}

}  // namespace hdboot
