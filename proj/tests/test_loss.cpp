#include <doctest.h>

#include <cmath>
#include <vector>

#include "hdboot/error.hpp"
#include "hdboot/loss.hpp"

using hdboot::Loss;

namespace {

std::vector<Loss> all_losses() {
  return {Loss::squared(), Loss::huber(), Loss::huber(1.0), Loss::absolute(),
          Loss::smoothed_absolute(1e-3)};
}

}  // namespace

TEST_CASE("loss basics") {
  for (const Loss& loss : all_losses()) {
    CAPTURE(loss.name());
    CHECK(loss.rho(0.0) == 0.0);
    for (double x = -5.0; x <= 5.0; x += 0.37) {
      CHECK(loss.rho(x) >= 0.0);
      CHECK(loss.psi(-x) == -loss.psi(x));
      // convexity along a chord
      const double y = x + 1.3;
      CHECK(loss.rho(0.5 * (x + y)) <= 0.5 * (loss.rho(x) + loss.rho(y)) + 1e-12);
    }
  }
}

TEST_CASE("psi prime conventions") {
  const Loss h = Loss::huber(1.345);
  CHECK(h.psi_prime(1.345) == 1.0);
  CHECK(h.psi_prime(1.3451) == 0.0);
  CHECK(h.psi_prime(-0.2) == 1.0);
  const Loss a = Loss::absolute();
  CHECK(a.psi_prime(0.0) == 1.0);
  CHECK(a.psi_prime(1e-300) == 0.0);
  CHECK(Loss::squared().psi_prime(7.0) == 1.0);
}

TEST_CASE("squared prox is exact") {
  const Loss l2 = Loss::squared();
  for (double c : {0.0, 0.1, 1.0, 3.7})
    for (double x : {-2.5, 0.0, 1.0, 8.0}) CHECK(l2.prox(x, c) == x / (1.0 + c));
}

TEST_CASE("Moreau identity on a grid") {
  for (const Loss& loss : all_losses()) {
    CAPTURE(loss.name());
    for (double c : {0.01, 0.2, 1.0, 5.0}) {
      for (double x = -6.0; x <= 6.0; x += 0.05) {
        const double z = loss.prox(x, c);
        const bool kink = (loss.kind() == hdboot::LossKind::AbsoluteError ||
                           loss.kind() == hdboot::LossKind::SmoothedAbsolute) &&
                          z == 0.0;
        if (kink) {
          // x - z must be a subgradient of c*rho at 0
          CHECK(std::abs(x) <= c + 1e-12);
        } else {
          CHECK(std::abs(x - (z + c * loss.psi(z))) <= 1e-10);
        }
      }
    }
  }
}

TEST_CASE("prox derivative matches finite differences away from kinks") {
  for (const Loss& loss : all_losses()) {
    CAPTURE(loss.name());
    for (double c : {0.3, 2.0}) {
      for (double x = -4.1; x <= 4.1; x += 0.23) {
        const double h = 1e-6;
        const double fd = (loss.prox(x + h, c) - loss.prox(x - h, c)) / (2 * h);
        const double an = loss.prox_derivative(x, c);
        if (std::abs(fd - an) > 1e-5) {
          // only allowed at a breakpoint
          const double kink = loss.kind() == hdboot::LossKind::Huber ? loss.param() * (1 + c) : c;
          CHECK(std::abs(std::abs(x) - kink) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("loss parsing") {
  CHECK(Loss::parse("l2") == Loss::squared());
  CHECK(Loss::parse("huber") == Loss::huber(1.345));
  CHECK(Loss::parse("huber:1") == Loss::huber(1.0));
  CHECK(Loss::parse("L1") == Loss::absolute());
  CHECK(Loss::parse("smoothed_l1:0.01") == Loss::smoothed_absolute(0.01));
  CHECK_THROWS_AS(Loss::parse("cauchy"), hdboot::Error);
  CHECK_THROWS_AS(Loss::parse("huber:-1"), hdboot::Error);
  CHECK_THROWS_AS(Loss::parse("huber:abc"), hdboot::Error);
  CHECK(Loss::parse(Loss::huber(1.0).name()) == Loss::huber(1.0));
}
