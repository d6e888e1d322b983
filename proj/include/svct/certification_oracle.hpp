#pragma once

// Search-based reference for the top-k budget. Shares nothing with the closed-form
// solver beyond the divergence and overlap definitions; used to cross-check it.

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <vector>

#include "svct/certification.hpp"
#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::certification {

namespace oracle_detail {

// For a candidate top-k set U and a separating level c, the divergence-minimizing q with
// q_U >= c >= q_rest is q_i = max(mu w_i, c) on U and min(mu w_i, c) elsewhere, with mu
// fixed by normalization.
inline Vector region_point(const Vector& w, const std::vector<bool>& in_u, double c) {
  const Index n = w.size();
  const auto mass = [&](double mu) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double v = mu * w(i);
      s += in_u[static_cast<std::size_t>(i)] ? std::max(v, c) : std::min(v, c);
    }
    return s;
  };
  double u_mass = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (in_u[static_cast<std::size_t>(i)]) u_mass += w(i);
  }
  double lo = 0.0;
  double hi = 1.0 / u_mass;
  for (int it = 0; it < 200 && hi - lo > 1e-17 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) < 1.0 ? lo : hi) = mid;
  }
  const double mu = 0.5 * (lo + hi);
  Vector q(n);
  for (Index i = 0; i < n; ++i) {
    const double v = mu * w(i);
    q(i) = in_u[static_cast<std::size_t>(i)] ? std::max(v, c) : std::min(v, c);
  }
  return q / q.sum();
}

inline double region_minimum(const Vector& w, const std::vector<bool>& in_u, Index k, double alpha,
                             double resolution) {
  // Level c = u / k with u in (0, 1): |U| entries at c must fit in unit mass.
  const auto value = [&](double u) { return renyi_divergence(w, region_point(w, in_u, u / static_cast<double>(k)), alpha); };
  double best_u = resolution / 2.0;
  double best = value(best_u);
  for (double u = resolution; u < 1.0; u += resolution) {
    const double v = value(u);
    if (v < best) {
      best = v;
      best_u = u;
    }
  }
  // The region minimum is unimodal in the level; polish around the best grid point.
  double lo = std::max(best_u - resolution, 1e-12);
  double hi = std::min(best_u + resolution, 1.0 - 1e-12);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - ratio * (hi - lo);
  double x2 = lo + ratio * (hi - lo);
  double f1 = value(x1);
  double f2 = value(x2);
  for (int it = 0; it < 60; ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = value(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = value(x2);
    }
  }
  return std::min({best, f1, f2});
}

}  // namespace oracle_detail

/// Minimum of D_alpha(w, q) over q whose top-k overlap with w is below beta, found by
/// enumerating every admissible top-k set of q and searching the separating level on a
/// grid of step `resolution` followed by golden-section refinement.
inline double min_divergence_bruteforce(const SimplexVector& w, Index k, double beta, double alpha,
                                        double resolution = 0.01) {
  if (w.size() > 6) throw ResourceError("min_divergence_bruteforce: dimension above 6 is not supported");
  if (!(resolution >= 1e-2) || resolution >= 1.0) {
    throw ParameterError("min_divergence_bruteforce: resolution must lie in [0.01, 1)");
  }
  if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ParameterError("min_divergence_bruteforce: alpha must be > 1");
  const auto query = TopKQuery::make(k, beta);
  if (k + query.k0 > w.size()) throw ParameterError("min_divergence_bruteforce: k + k0 exceeds dimension");

  const Index n = w.size();
  auto top = top_k_indices(w.probs, k);
  std::vector<bool> in_top(static_cast<std::size_t>(n), false);
  for (Index i : top) in_top[static_cast<std::size_t>(i)] = true;

  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    std::vector<bool> in_u(static_cast<std::size_t>(n));
    Index shared = 0;
    for (Index i = 0; i < n; ++i) {
      in_u[static_cast<std::size_t>(i)] = (mask >> i) & 1u;
      if (in_u[static_cast<std::size_t>(i)] && in_top[static_cast<std::size_t>(i)]) ++shared;
    }
    if (static_cast<double>(shared) / static_cast<double>(k) >= beta) continue;
    best = std::min(best, oracle_detail::region_minimum(w.probs, in_u, k, alpha, resolution));
  }
  return best;
}

}  // namespace svct::certification
