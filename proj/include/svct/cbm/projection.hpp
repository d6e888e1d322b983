#pragma once

// Projection learning: find W_c so that each concept neuron (W_c f(x))_j tracks the
// image/text activation column A(:, j) under the cos-cubed similarity.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::cbm {

struct ProjectionWeights {
  Matrix w;  // M x d0

  Index concepts() const { return w.rows(); }
  Index feature_dim() const { return w.cols(); }
};

namespace detail {

// Standardized (population std) and cubed copy of v, with the pieces the gradient needs.
struct CubedStandard {
  Vector z;
  Vector u;
  double stddev = 0.0;
  double u_norm = 0.0;
};

inline CubedStandard cube_standardize(const Vector& v, const char* what) {
  if (v.size() < 2) throw ParameterError(std::string(what) + ": need at least two entries");
  CubedStandard out;
  const double mean = v.mean();
  const Vector centered = (v.array() - mean).matrix();
  out.stddev = std::sqrt(centered.squaredNorm() / static_cast<double>(v.size()));
  if (!(out.stddev > 1e-300) || !std::isfinite(out.stddev)) {
    throw DegenerateInputError(std::string(what) + ": zero variance");
  }
  out.z = centered / out.stddev;
  out.u = out.z.array().cube().matrix();
  out.u_norm = out.u.norm();
  return out;
}

// cos-cubed value and its gradient with respect to the raw vector q, given the
// prepared target.
inline std::pair<double, Vector> cos_cubed_with_gradient(const Vector& q, const CubedStandard& target) {
  const auto cq = cube_standardize(q, "cos_cubed");
  const double denom = cq.u_norm * target.u_norm;
  const double value = cq.u.dot(target.u) / denom;
  const Vector du = target.u / denom - value * cq.u / (cq.u_norm * cq.u_norm);
  const Vector dz = (3.0 * cq.z.array().square() * du.array()).matrix();
  const double mean_dz = dz.mean();
  const double mean_dz_z = dz.dot(cq.z) / static_cast<double>(q.size());
  const Vector dq = ((dz.array() - mean_dz - cq.z.array() * mean_dz_z) / cq.stddev).matrix();
  return {value, dq};
}

}  // namespace detail

/// Cosine similarity of the standardized-then-cubed vectors.
inline double cos_cubed(const Vector& q, const Vector& a) {
  if (q.size() != a.size()) throw ParameterError("cos_cubed: length mismatch");
  const auto cq = detail::cube_standardize(q, "cos_cubed");
  const auto ca = detail::cube_standardize(a, "cos_cubed");
  return std::clamp(cq.u.dot(ca.u) / (cq.u_norm * ca.u_norm), -1.0, 1.0);
}

/// Gradient of cos_cubed(q, a) with respect to q.
inline Vector cos_cubed_gradient(const Vector& q, const Vector& a) {
  if (q.size() != a.size()) throw ParameterError("cos_cubed_gradient: length mismatch");
  return detail::cos_cubed_with_gradient(q, detail::cube_standardize(a, "cos_cubed")).second;
}

struct ProjectionOptions {
  std::size_t steps = 1000;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
};

struct ProjectionResult {
  ProjectionWeights weights;
  Vector similarities;               // final cos-cubed per concept
  std::vector<double> loss_history;  // loss before each step, then the final loss
  std::size_t loss_increases = 0;    // steps where the loss went up
};

/// Gaussian entries scaled by 1/sqrt(d0).
inline ProjectionWeights initial_projection(Index concepts, Index feature_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  Matrix w(concepts, feature_dim);
  for (Index i = 0; i < concepts; ++i) {
    for (Index j = 0; j < feature_dim; ++j) w(i, j) = normal(rng);
  }
  return {std::move(w)};
}

namespace detail {

inline double projection_loss_and_gradient(const Matrix& features, const std::vector<CubedStandard>& targets,
                                           const Matrix& w, Matrix* grad, Vector* sims) {
  const Matrix q = features * w.transpose();  // N x M
  double loss = 0.0;
  for (Index j = 0; j < w.rows(); ++j) {
    const auto [value, dq] = cos_cubed_with_gradient(q.col(j), targets[static_cast<std::size_t>(j)]);
    loss -= value;
    if (sims) (*sims)(j) = value;
    if (grad) grad->row(j) = -(features.transpose() * dq).transpose();
  }
  return loss;
}

}  // namespace detail

/// Full-batch gradient descent on L(W) = -sum_j cos_cubed(F W_j^T, A(:, j)).
inline ProjectionResult learn_projection(const Matrix& features, const Matrix& activations,
                                         const ProjectionOptions& options,
                                         const ProjectionWeights* init = nullptr) {
  if (features.rows() < 2) throw ParameterError("learn_projection: need at least two samples");
  if (features.rows() != activations.rows()) throw ParameterError("learn_projection: sample counts differ");
  if (activations.cols() < 1) throw EmptyConceptSetError("learn_projection: no concepts");
  if (!(options.learning_rate > 0.0)) throw ParameterError("learn_projection: learning rate must be positive");
  if (!features.allFinite() || !activations.allFinite()) throw ParameterError("learn_projection: non-finite input");

  // Rounding-level wobble at convergence is not counted as an increase.
  const auto increased = [](double before, double after) { return after > before + 1e-12 * (1.0 + std::abs(before)); };
  std::vector<detail::CubedStandard> targets;
  targets.reserve(static_cast<std::size_t>(activations.cols()));
  for (Index j = 0; j < activations.cols(); ++j) {
    targets.push_back(detail::cube_standardize(activations.col(j), "learn_projection(activation column)"));
  }

  ProjectionResult out;
  if (init) {
    if (init->w.rows() != activations.cols() || init->w.cols() != features.cols()) {
      throw ParameterError("learn_projection: initial weights have the wrong shape");
    }
    out.weights = *init;
  } else {
    out.weights = initial_projection(activations.cols(), features.cols(), options.seed);
  }
  Matrix& w = out.weights.w;
  Matrix grad(w.rows(), w.cols());
  out.similarities.resize(w.rows());
  for (std::size_t step = 0; step < options.steps; ++step) {
    const double loss = detail::projection_loss_and_gradient(features, targets, w, &grad, nullptr);
    if (!std::isfinite(loss) || !grad.allFinite()) throw DivergenceError("learn_projection: non-finite loss", step);
    if (!out.loss_history.empty() && increased(out.loss_history.back(), loss)) ++out.loss_increases;
    out.loss_history.push_back(loss);
    w -= options.learning_rate * grad;
  }
  const double final_loss =
      detail::projection_loss_and_gradient(features, targets, w, nullptr, &out.similarities);
  if (!std::isfinite(final_loss)) throw DivergenceError("learn_projection: non-finite loss", options.steps);
  if (!out.loss_history.empty() && increased(out.loss_history.back(), final_loss)) ++out.loss_increases;
  out.loss_history.push_back(final_loss);
  return out;
}

/// Drops concept rows whose similarity is below `cutoff`; returns the kept row indices.
inline std::pair<ProjectionWeights, std::vector<Index>> drop_uninterpretable(const ProjectionWeights& weights,
                                                                              const Vector& similarities,
                                                                              double cutoff = 0.45) {
  if (similarities.size() != weights.w.rows()) throw ParameterError("drop_uninterpretable: one similarity per row");
  std::vector<Index> kept;
  for (Index j = 0; j < similarities.size(); ++j) {
    if (similarities(j) >= cutoff) kept.push_back(j);
  }
  if (kept.empty()) throw EmptyConceptSetError("drop_uninterpretable: no concept reaches the similarity cutoff");
  Matrix w(static_cast<Index>(kept.size()), weights.w.cols());
  for (std::size_t r = 0; r < kept.size(); ++r) w.row(static_cast<Index>(r)) = weights.w.row(kept[r]);
  return {ProjectionWeights{std::move(w)}, std::move(kept)};
}

/// f_c = W_c f.
inline ConceptVector concept_features(const ProjectionWeights& weights, const Vector& backbone_feature) {
  if (backbone_feature.size() != weights.w.cols()) {
    throw ParameterError("concept_features: feature length " + std::to_string(backbone_feature.size()) +
                         ", projection expects " + std::to_string(weights.w.cols()));
  }
  return ConceptVector(weights.w * backbone_feature);
}

}  // namespace svct::cbm
