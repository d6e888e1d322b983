#pragma once

// Vector-level definitions shared by the rest of the library: top-k sets and
// their overlap ratio, the CFS/CPCS interpretability-stability metrics, and
// the discrete Renyi divergence.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct {

/// Concept activations f_c(X) for one input; one entry per concept.
struct ConceptVector {
  Vector values;

  ConceptVector() = default;
  explicit ConceptVector(Vector v) : values(std::move(v)) {
    detail::require(values.size() > 0, "ConceptVector: empty");
    detail::require(values.allFinite(), "ConceptVector: non-finite entry");
  }
  Index size() const { return values.size(); }
  double operator[](Index i) const { return values(i); }
  bool operator==(const ConceptVector& other) const {
    return values.size() == other.values.size() && values == other.values;
  }
};

/// Class probabilities; nonnegative, sums to one, at least two classes.
struct PredictionDistribution {
  Vector probs;

  PredictionDistribution() = default;
  explicit PredictionDistribution(Vector p) : probs(std::move(p)) {
    detail::require(probs.size() >= 2, "PredictionDistribution: need at least two classes");
    detail::require(probs.allFinite() && probs.minCoeff() >= 0.0,
                    "PredictionDistribution: entries must be finite and nonnegative");
    detail::require(std::abs(probs.sum() - 1.0) <= 1e-9, "PredictionDistribution: entries must sum to 1");
  }
  Index size() const { return probs.size(); }
  Index top_class() const { return argmax(probs); }
};

/// Strictly positive probability vector (the setting of the top-k certificate).
struct SimplexVector {
  Vector probs;

  SimplexVector() = default;
  explicit SimplexVector(Vector p) : probs(std::move(p)) {
    detail::require(probs.size() >= 1, "SimplexVector: empty");
    detail::require(probs.allFinite() && probs.minCoeff() > 0.0, "SimplexVector: entries must be strictly positive");
    detail::require(std::abs(probs.sum() - 1.0) <= 1e-9, "SimplexVector: entries must sum to 1");
  }
  Index size() const { return probs.size(); }
  double operator[](Index i) const { return probs(i); }
};

/// All indices of `v` ordered by descending value, lower index first among ties.
inline std::vector<Index> descending_order(const Vector& v) {
  std::vector<Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return v(a) > v(b); });
  return order;
}

/// The k largest entries of `v`, in rank order. Ties are broken toward the lower index,
/// so the result always has exactly k elements.
inline std::vector<Index> top_k_indices(const Vector& v, Index k) {
  if (k < 1 || k > v.size()) {
    throw ParameterError("top_k_indices: k=" + std::to_string(k) + " outside [1, " + std::to_string(v.size()) + "]");
  }
  detail::require(v.allFinite(), "top_k_indices: non-finite entry");
  auto order = descending_order(v);
  order.resize(static_cast<std::size_t>(k));
  return order;
}

/// V_k(v1, v2) = |T_k(v1) ∩ T_k(v2)| / k.
inline double top_k_overlap(const Vector& v1, const Vector& v2, Index k) {
  if (v1.size() != v2.size()) throw ParameterError("top_k_overlap: length mismatch");
  auto a = top_k_indices(v1, k);
  auto b = top_k_indices(v2, k);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<Index> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return static_cast<double>(common.size()) / static_cast<double>(k);
}

/// Concept Faithfulness Score ||c2 - c1|| / ||c1||. Lower is stabler.
inline double cfs(const ConceptVector& clean, const ConceptVector& perturbed) {
  if (clean.size() != perturbed.size()) throw ParameterError("cfs: length mismatch");
  const double base = clean.values.norm();
  if (!(base > 0.0)) throw DegenerateInputError("cfs: clean concept vector has zero norm");
  return (perturbed.values - clean.values).norm() / base;
}

/// Concept Perturbation Cosine Similarity.
inline double cpcs(const ConceptVector& clean, const ConceptVector& perturbed) {
  if (clean.size() != perturbed.size()) throw ParameterError("cpcs: length mismatch");
  const double n1 = clean.values.norm();
  const double n2 = perturbed.values.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw DegenerateInputError("cpcs: zero concept vector");
  const double c = clean.values.dot(perturbed.values) / (n1 * n2);
  return std::clamp(c, -1.0, 1.0);
}

/// D_alpha(P || Q) = 1/(alpha-1) * log sum_i P_i^alpha Q_i^(1-alpha), for alpha > 1.
/// P and Q are probability vectors; zeros in P are allowed, Q must be positive wherever P is.
inline double renyi_divergence(const Vector& p, const Vector& q, double alpha) {
  if (!(alpha > 1.0) || !std::isfinite(alpha)) throw ParameterError("renyi_divergence: alpha must be a finite value > 1");
  if (p.size() != q.size()) throw ParameterError("renyi_divergence: length mismatch");
  if (p.size() == 0) throw ParameterError("renyi_divergence: empty distributions");
  if (!p.allFinite() || !q.allFinite() || p.minCoeff() < 0.0 || q.minCoeff() < 0.0) {
    throw ParameterError("renyi_divergence: entries must be finite and nonnegative");
  }
  // log-sum-exp over the support of P
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(p.size()));
  for (Index i = 0; i < p.size(); ++i) {
    if (p(i) == 0.0) continue;
    if (q(i) == 0.0) throw DomainError("renyi_divergence: Q vanishes on the support of P");
    terms.push_back(alpha * std::log(p(i)) + (1.0 - alpha) * std::log(q(i)));
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  const double d = (top + std::log(acc)) / (alpha - 1.0);
  return std::max(0.0, d);
}

inline double renyi_divergence(const SimplexVector& p, const SimplexVector& q, double alpha) {
  return renyi_divergence(p.probs, q.probs, alpha);
}

/// Softmax bridge from raw concept activations to a strictly positive simplex vector.
/// Monotone, so top-k sets are preserved.
inline SimplexVector normalize_to_simplex(const ConceptVector& c) {
  Vector p = softmax(c.values);
  const double floor = std::numeric_limits<double>::min();
  for (Index i = 0; i < p.size(); ++i) p(i) = std::max(p(i), floor);
  p /= p.sum();
  return SimplexVector(std::move(p));
}

}  // namespace svct
