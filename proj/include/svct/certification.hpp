#pragma once

// Stability certificates for smoothed concept vectors.
//
// Two budgets are computed for a smoothed input, both in Renyi-divergence units:
//   * the top-k budget: the smallest D_alpha(w, q) over simplex vectors q whose
//     top-k overlap with w drops below beta;
//   * the prediction budget: the smallest D_alpha(P, Q) over class distributions Q
//     whose argmax differs from that of P.
// Gaussian noise of variance sigma^2 bounds D_alpha between the smoothed outputs
// at X and X' by alpha * ||X - X'||^2 / (2 sigma^2); inverting that inequality turns
// each budget into a certified l2 radius.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::certification {

/// Budgets at or below this value are treated as zero (tied boundary entries).
inline constexpr double kZeroBudget = 1e-12;

inline const std::vector<double>& default_alpha_grid() {
  static const std::vector<double> grid{1.5, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0};
  return grid;
}

/// Minimum number of top-k changes that breaks a beta overlap: floor((1 - beta) k) + 1.
inline Index k0_of(double beta, Index k) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ParameterError("k0_of: beta must lie in (0, 1]");
  if (k < 1) throw ParameterError("k0_of: k must be positive");
  // The small slack keeps e.g. (1 - 0.8) * 5 from flooring to 0 through rounding.
  return static_cast<Index>(std::floor((1.0 - beta) * static_cast<double>(k) + 1e-9)) + 1;
}

struct TopKQuery {
  Index k = 5;
  double beta = 0.8;
  Index k0 = 2;

  static TopKQuery make(Index k, double beta) {
    TopKQuery q{k, beta, k0_of(beta, k)};
    if (q.k0 > q.k) {
      throw ParameterError("TopKQuery: k0=" + std::to_string(q.k0) + " exceeds k=" + std::to_string(k) +
                           "; beta is too small for a nondegenerate query");
    }
    return q;
  }
};

/// Boundary set S: sorted positions k-k0+1 .. k+k0 (1-based, descending value, lower
/// index first among ties) mapped back to original indices, in position order.
inline std::vector<Index> boundary_set(const Vector& w, Index k, Index k0) {
  if (k < 1 || k0 < 1 || k0 > k) throw ParameterError("boundary_set: need 1 <= k0 <= k");
  if (k + k0 > w.size()) {
    throw ParameterError("boundary_set: k + k0 = " + std::to_string(k + k0) + " exceeds length " +
                         std::to_string(w.size()));
  }
  const auto order = descending_order(w);
  return {order.begin() + (k - k0), order.begin() + (k + k0)};
}

namespace detail {

// Power mean (mean_i x_i^alpha)^(1/alpha), scaled to avoid under/overflow.
inline double power_mean(std::span<const double> xs, double alpha) {
  const double top = *std::max_element(xs.begin(), xs.end());
  if (top <= 0.0) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += std::pow(x / top, alpha);
  return top * std::pow(acc / static_cast<double>(xs.size()), 1.0 / alpha);
}

// Solution of the order-constrained divergence minimization on the boundary.
//
// In sorted positions, the cheapest violation swaps the last k0 members of the top-k
// (group L) with the first k0 non-members (group H). The minimizer pools the largest
// members of L with the smallest members of H at a common level t, equal to the
// alpha-power-mean of the pooled values, and leaves every other entry proportional to w.
// When t falls inside [min L, max H] for the whole boundary, all 2*k0 entries pool and
// the value reduces to (alpha/(alpha-1)) ln(2k0 s + (2k0)^(1/alpha) sum_{i not in S} w_i)
// - ln(2k0)/(alpha-1) with s = (sum_{i in S} w_i^alpha)^(1/alpha). For skewed w with
// k0 >= 2 only part of the boundary pools, which gives a strictly smaller minimum.
struct BoundarySolution {
  std::vector<Index> order;  // sorted position -> original index
  Index pool_from_l = 0;     // pooled members of L: positions k-k0 .. k-k0+pool_from_l-1
  Index pool_from_h = 0;     // pooled members of H: positions k+k0-pool_from_h .. k+k0-1
  double level = 0.0;        // power mean of the pooled w values
  double normalizer = 0.0;   // |P| * level + sum of unpooled w
  double divergence = 0.0;
};

inline BoundarySolution solve_boundary(const SimplexVector& w, const TopKQuery& query, double alpha) {
  if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be a finite value > 1");
  const Index k = query.k;
  const Index k0 = query.k0;
  if (k0 > k) throw ParameterError("degenerate top-k query: k0 > k");
  if (k + k0 > w.size()) {
    throw ParameterError("top-k query needs k + k0 <= number of concepts (k + k0 = " + std::to_string(k + k0) +
                         ", length " + std::to_string(w.size()) + ")");
  }
  BoundarySolution best;
  best.order = descending_order(w.probs);
  std::vector<double> sorted(static_cast<std::size_t>(w.size()));
  for (Index i = 0; i < w.size(); ++i) sorted[static_cast<std::size_t>(i)] = w[best.order[static_cast<std::size_t>(i)]];

  const auto at = [&](Index pos) { return sorted[static_cast<std::size_t>(pos)]; };
  const Index l_begin = k - k0;
  const Index h_end = k + k0;
  bool found = false;
  std::vector<double> pooled;
  for (Index a = 1; a <= k0; ++a) {
    for (Index b = 1; b <= k0; ++b) {
      pooled.clear();
      for (Index p = l_begin; p < l_begin + a; ++p) pooled.push_back(at(p));
      for (Index p = h_end - b; p < h_end; ++p) pooled.push_back(at(p));
      const double t = power_mean(pooled, alpha);
      const double tol = 1e-12 * std::max(t, 1e-300);
      bool consistent = true;
      for (Index p = l_begin + a; p < k && consistent; ++p) consistent = at(p) <= t + tol;
      for (Index p = k; p < h_end - b && consistent; ++p) consistent = at(p) >= t - tol;
      const bool full_pool = (a == k0 && b == k0);
      if (!consistent && !(full_pool && !found)) continue;

      std::vector<double> rest;
      rest.reserve(sorted.size());
      for (Index p = 0; p < w.size(); ++p) {
        const bool in_pool = (p >= l_begin && p < l_begin + a) || (p >= h_end - b && p < h_end);
        if (!in_pool) rest.push_back(at(p));
      }
      const double z = static_cast<double>(a + b) * t + svct::detail::pairwise_sum(rest);
      const double value = std::max(0.0, alpha / (alpha - 1.0) * std::log(z));
      if (!found || (consistent && value < best.divergence)) {
        best.pool_from_l = a;
        best.pool_from_h = b;
        best.level = t;
        best.normalizer = z;
        best.divergence = value;
        found = true;
      }
    }
  }
  return best;
}

}  // namespace detail

/// Minimum Renyi divergence D_alpha(w || q) over simplex vectors q whose top-k overlap
/// with w is below beta. This is the top-k stability budget.
inline double min_divergence_topk(const SimplexVector& w, Index k, double beta, double alpha) {
  return detail::solve_boundary(w, TopKQuery::make(k, beta), alpha).divergence;
}

/// The value obtained by forcing all 2*k0 boundary entries to a common level.
/// Equals min_divergence_topk whenever that pooling is optimal (always for k0 = 1) and
/// upper-bounds it otherwise; kept for comparison.
inline double full_pool_divergence(const SimplexVector& w, Index k, double beta, double alpha) {
  if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be a finite value > 1");
  const auto query = TopKQuery::make(k, beta);
  const auto s_idx = boundary_set(w.probs, k, query.k0);
  std::vector<bool> in_s(static_cast<std::size_t>(w.size()), false);
  double s_pow = 0.0;
  for (Index i : s_idx) {
    in_s[static_cast<std::size_t>(i)] = true;
    s_pow += std::pow(w[i], alpha);
  }
  double outside = 0.0;
  for (Index i = 0; i < w.size(); ++i) {
    if (!in_s[static_cast<std::size_t>(i)]) outside += w[i];
  }
  const double two_k0 = 2.0 * static_cast<double>(query.k0);
  const double s = std::pow(s_pow, 1.0 / alpha);
  const double value = alpha / (alpha - 1.0) * std::log(two_k0 * s + std::pow(two_k0, 1.0 / alpha) * outside) -
                       std::log(two_k0) / (alpha - 1.0);
  return std::max(0.0, value);
}

/// The minimizer q of the top-k budget problem, mapped back to original indices.
///
/// The exact minimizer ties the pooled boundary entries, so it sits on the edge of the
/// violating region. `tie_margin` (relative) lifts the pooled non-members above the pooled
/// members so that the lower-index tie-break cannot restore the overlap; the divergence
/// moves by O(tie_margin). Pass 0 for the exact tied point.
inline SimplexVector worst_case_q(const SimplexVector& w, Index k, double beta, double alpha,
                                  double tie_margin = 1e-12) {
  const auto query = TopKQuery::make(k, beta);
  const auto sol = detail::solve_boundary(w, query, alpha);
  const Index l_begin = k - query.k0;
  const Index h_end = k + query.k0;
  const double pooled_value = sol.level / sol.normalizer;
  Vector q(w.size());
  for (Index pos = 0; pos < w.size(); ++pos) {
    const Index idx = sol.order[static_cast<std::size_t>(pos)];
    if (pos >= l_begin && pos < l_begin + sol.pool_from_l) {
      q(idx) = pooled_value * (1.0 - tie_margin / static_cast<double>(sol.pool_from_l));
    } else if (pos >= h_end - sol.pool_from_h && pos < h_end) {
      q(idx) = pooled_value * (1.0 + tie_margin / static_cast<double>(sol.pool_from_h));
    } else {
      q(idx) = w[idx] / sol.normalizer;
    }
  }
  q /= q.sum();
  return SimplexVector(std::move(q));
}

/// Renyi budget below which the argmax class of a distribution with top probabilities
/// p1 >= p2 cannot change:
///   -log(1 - p1 - p2 + 2 * ((p1^(1-alpha) + p2^(1-alpha)) / 2)^(1/(1-alpha))).
inline double prediction_gamma_threshold(double p1, double p2, double alpha) {
  if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ParameterError("prediction_gamma_threshold: alpha must be > 1");
  if (!(p1 >= p2)) throw ParameterError("prediction_gamma_threshold: need p1 >= p2");
  if (!(p1 > 0.0) || p1 > 1.0 || p2 < 0.0) throw ParameterError("prediction_gamma_threshold: probabilities out of range");
  if (p1 + p2 > 1.0 + 1e-9) throw ParameterError("prediction_gamma_threshold: p1 + p2 exceeds 1");
  // Clamping p2 from below only shrinks the threshold (it is decreasing in p2).
  p2 = std::max(p2, 1e-12);
  if (p2 > p1) p2 = p1;
  const double a = (1.0 - alpha) * std::log(p1);
  const double b = (1.0 - alpha) * std::log(p2);
  const double top = std::max(a, b);
  const double log_mean = std::log(0.5) + top + std::log(std::exp(a - top) + std::exp(b - top));
  const double mean_level = std::exp(log_mean / (1.0 - alpha));
  const double inner = 1.0 - p1 - p2 + 2.0 * mean_level;
  return std::max(0.0, -std::log(inner));
}

/// Smallest noise variance sigma^2 certifying radius R at order alpha for both the
/// top-k budget and a divergence budget gamma. A zero budget yields +infinity.
inline double certify_sigma_topk(double radius, double alpha, const SimplexVector& w, Index k, double beta,
                                 double gamma) {
  if (radius < 0.0 || !std::isfinite(radius)) throw ParameterError("certify_sigma_topk: radius must be >= 0");
  if (gamma < 0.0 || std::isnan(gamma)) throw ParameterError("certify_sigma_topk: gamma must be >= 0");
  const double budget = min_divergence_topk(w, k, beta, alpha);
  if (radius == 0.0) return 0.0;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double need = alpha * radius * radius / 2.0;
  const double topk = budget <= kZeroBudget ? inf : need / budget;
  const double pred = gamma <= kZeroBudget ? inf : (std::isinf(gamma) ? 0.0 : need / gamma);
  return std::max(topk, pred);
}

/// One-sided bounds on the two largest class probabilities from Monte Carlo votes.
struct PBounds {
  double p1_lower = 0.0;
  double p2_upper = 1.0;
  double delta = 0.001;
  std::int64_t m = 0;
  Index top_class = 0;
};

/// Hoeffding bounds: p1_lower = p1_hat - sqrt(ln(2/delta) / (2m)), p2_upper = p2_hat + same,
/// both clamped to [0, 1].
inline PBounds estimate_p_bounds(std::span<const std::int64_t> counts, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("estimate_p_bounds: delta must lie in (0, 1)");
  if (counts.size() < 2) throw ParameterError("estimate_p_bounds: need at least two classes");
  std::int64_t m = 0;
  for (auto c : counts) {
    if (c < 0) throw ParameterError("estimate_p_bounds: negative count");
    m += c;
  }
  if (m == 0) throw ParameterError("estimate_p_bounds: no samples");
  Vector freq(static_cast<Index>(counts.size()));
  for (std::size_t i = 0; i < counts.size(); ++i) {
    freq(static_cast<Index>(i)) = static_cast<double>(counts[i]) / static_cast<double>(m);
  }
  const auto order = descending_order(freq);
  const double slack = std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(m)));
  PBounds out;
  out.p1_lower = std::clamp(freq(order[0]) - slack, 0.0, 1.0);
  out.p2_upper = std::clamp(freq(order[1]) + slack, 0.0, 1.0);
  out.delta = delta;
  out.m = m;
  out.top_class = order[0];
  return out;
}

struct CertificateReport {
  double sigma = 0.0;
  std::int64_t m = 0;
  double alpha_star = 0.0;
  double alpha_star_topk = 0.0;
  double alpha_star_pred = 0.0;
  double r_topk = 0.0;
  double r_pred = 0.0;
  double r_final = 0.0;
  double gamma = 0.0;
  double p1_lower = 0.0;
  double p2_upper = 0.0;
  double delta = 0.0;
};

inline void to_json(nlohmann::json& j, const CertificateReport& r) {
  j = nlohmann::json{{"sigma", r.sigma},         {"m", r.m},
                     {"alpha_star", r.alpha_star}, {"alpha_star_topk", r.alpha_star_topk},
                     {"alpha_star_pred", r.alpha_star_pred}, {"r_topk", r.r_topk},
                     {"r_pred", r.r_pred},       {"r_final", r.r_final},
                     {"gamma", r.gamma},         {"p1_lower", r.p1_lower},
                     {"p2_upper", r.p2_upper},   {"delta", r.delta}};
}

inline void from_json(const nlohmann::json& j, CertificateReport& r) {
  j.at("sigma").get_to(r.sigma);
  j.at("m").get_to(r.m);
  j.at("alpha_star").get_to(r.alpha_star);
  j.at("alpha_star_topk").get_to(r.alpha_star_topk);
  j.at("alpha_star_pred").get_to(r.alpha_star_pred);
  j.at("r_topk").get_to(r.r_topk);
  j.at("r_pred").get_to(r.r_pred);
  j.at("r_final").get_to(r.r_final);
  j.at("gamma").get_to(r.gamma);
  j.at("p1_lower").get_to(r.p1_lower);
  j.at("p2_upper").get_to(r.p2_upper);
  j.at("delta").get_to(r.delta);
}

namespace detail {

struct AlphaPick {
  double alpha = 0.0;
  double value = 0.0;
};

// Maximizes f over the grid (ties keep the smaller alpha), then polishes with a
// golden-section search in log(alpha) between the neighbours of the best grid point.
template <typename F>
AlphaPick maximize_over_alpha(std::span<const double> grid, F&& f, bool refine) {
  std::vector<double> alphas(grid.begin(), grid.end());
  std::sort(alphas.begin(), alphas.end());
  AlphaPick best{alphas.front(), f(alphas.front())};
  std::size_t best_i = 0;
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    const double v = f(alphas[i]);
    if (v > best.value) {
      best = {alphas[i], v};
      best_i = i;
    }
  }
  if (!refine || alphas.size() < 2 || best.value <= 0.0) return best;
  double lo = std::log(best_i > 0 ? alphas[best_i - 1] : (1.0 + alphas.front()) / 2.0);
  double hi = std::log(best_i + 1 < alphas.size() ? alphas[best_i + 1] : alphas.back() * 2.0);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - ratio * (hi - lo);
  double x2 = lo + ratio * (hi - lo);
  double f1 = f(std::exp(x1));
  double f2 = f(std::exp(x2));
  for (int it = 0; it < 40; ++it) {
    if (f1 >= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = f(std::exp(x1));
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = f(std::exp(x2));
    }
  }
  const double cand_alpha = std::exp(f1 >= f2 ? x1 : x2);
  const double cand = std::max(f1, f2);
  if (cand > best.value) best = {cand_alpha, cand};
  return best;
}

}  // namespace detail

/// Certified l2 radii for a smoothed input. For each alpha the radius for a budget b is
/// sigma * sqrt(2 b / alpha); each radius is maximized over alpha independently.
inline CertificateReport certified_radius(double sigma, const SimplexVector& w, Index k, double beta,
                                          const PBounds& bounds, std::span<const double> alpha_grid,
                                          bool refine = true) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("certified_radius: sigma must be > 0");
  if (alpha_grid.empty()) throw ParameterError("certified_radius: empty alpha grid");
  for (double a : alpha_grid) {
    if (!(a > 1.0) || !std::isfinite(a)) throw ParameterError("certified_radius: alpha grid entries must be > 1");
  }
  const auto query = TopKQuery::make(k, beta);
  const auto radius_for = [sigma](double budget, double alpha) {
    return budget <= kZeroBudget ? 0.0 : sigma * std::sqrt(2.0 * budget / alpha);
  };

  CertificateReport rep;
  rep.sigma = sigma;
  rep.m = bounds.m;
  rep.delta = bounds.delta;
  rep.p1_lower = bounds.p1_lower;
  rep.p2_upper = bounds.p2_upper;

  const auto topk = detail::maximize_over_alpha(
      alpha_grid, [&](double a) { return radius_for(detail::solve_boundary(w, query, a).divergence, a); }, refine);
  rep.r_topk = topk.value;
  rep.alpha_star_topk = topk.alpha;

  const bool separated = bounds.p1_lower > 0.0 && bounds.p1_lower > bounds.p2_upper;
  if (separated) {
    const auto pred = detail::maximize_over_alpha(
        alpha_grid,
        [&](double a) { return radius_for(prediction_gamma_threshold(bounds.p1_lower, bounds.p2_upper, a), a); },
        refine);
    rep.r_pred = pred.value;
    rep.alpha_star_pred = pred.alpha;
    rep.gamma = prediction_gamma_threshold(bounds.p1_lower, bounds.p2_upper, pred.alpha);
  } else {
    rep.r_pred = 0.0;
    rep.alpha_star_pred = *std::min_element(alpha_grid.begin(), alpha_grid.end());
    rep.gamma = 0.0;
  }
  rep.r_final = std::min(rep.r_topk, rep.r_pred);
  rep.alpha_star = rep.r_topk <= rep.r_pred ? rep.alpha_star_topk : rep.alpha_star_pred;
  return rep;
}

}  // namespace svct::certification
