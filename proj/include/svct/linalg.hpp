#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "svct/errors.hpp"

namespace svct {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ParameterError(message);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

// Fixed-order pairwise summation; result depends only on the order of `values`.
inline double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double x : values) s += x;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

// Pairwise mean of equally sized vectors, accumulated in a fixed tree order.
inline Vector pairwise_mean(const std::vector<Vector>& rows) {
  require(!rows.empty(), "pairwise_mean: no rows");
  const auto dim = rows.front().size();
  Vector out(dim);
  std::vector<double> column(rows.size());
  for (Index j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) column[i] = rows[i](j);
    out(j) = pairwise_sum(column) / static_cast<double>(rows.size());
  }
  return out;
}

}  // namespace detail

/// Numerically stable softmax. Scalar exp keeps equal logits exactly equal (the packet
/// and tail paths of a vectorized exp can differ in the last bit).
inline Vector softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  Vector e(logits.size());
  for (Index i = 0; i < logits.size(); ++i) e(i) = std::exp(logits(i) - top);
  return e / e.sum();
}

/// Index of the largest entry; ties go to the lowest index.
inline Index argmax(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

inline Vector to_vector(std::span<const double> values) {
  Vector v(static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Index>(i)) = values[i];
  return v;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace svct
