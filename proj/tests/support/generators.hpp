#pragma once

// Seeded random instances for property tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "svct/linalg.hpp"

namespace svct::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double std = 1.0) { return std::normal_distribution<double>(mean, std)(rng_); }
  Index integer(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }

  Vector normal_vector(Index n, double std = 1.0) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal(0.0, std);
    return v;
  }

  Vector uniform_vector(Index n, double lo, double hi) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = uniform(lo, hi);
    return v;
  }

  Matrix normal_matrix(Index rows, Index cols, double std = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j) m(i, j) = normal(0.0, std);
    }
    return m;
  }

  /// Dirichlet(concentration) draw, bounded away from zero.
  Vector simplex(Index n, double concentration = 1.0) {
    std::gamma_distribution<double> gamma(concentration, 1.0);
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = std::max(gamma(rng_), 1e-6);
    return v / v.sum();
  }

  /// Vector with deliberate ties: entries drawn from a small set of levels.
  Vector tied_vector(Index n, int levels) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = static_cast<double>(integer(0, levels - 1));
    return v;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace svct::testing
