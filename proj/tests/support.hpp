#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "hdboot/mestim.hpp"
#include "hdboot/rng.hpp"

namespace testing {

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  hdboot::CounterRng rng(seed, hdboot::stream_tag("test-design"), 0);
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, std::uint64_t seed) {
  hdboot::CounterRng rng(seed, hdboot::stream_tag("test-errors"), 0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

inline Eigen::VectorXd laplace_vector(Eigen::Index n, std::uint64_t seed) {
  hdboot::CounterRng rng(seed, hdboot::stream_tag("test-laplace"), 0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.laplace();
  return v;
}

inline hdboot::Dataset gaussian_dataset(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  hdboot::Dataset ds;
  ds.X = gaussian_matrix(n, p, seed);
  ds.y = gaussian_vector(n, seed + 1);
  return ds;
}

}  // namespace testing
