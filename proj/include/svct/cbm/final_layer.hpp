#pragma once

// Fusion of backbone and concept features, the sparse linear classifier on top, and
// test-time concept intervention.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::cbm {

/// [backbone feature; concept feature].
struct FusedFeature {
  Vector values;
  Index backbone_dim = 0;
};

inline FusedFeature fuse(const Vector& backbone_feature, const ConceptVector& concepts) {
  FusedFeature out;
  out.backbone_dim = backbone_feature.size();
  out.values.resize(backbone_feature.size() + concepts.size());
  out.values.head(backbone_feature.size()) = backbone_feature;
  out.values.tail(concepts.size()) = concepts.values;
  return out;
}

struct FinalLayerWeights {
  Matrix w;  // classes x features
  Vector bias;

  Index classes() const { return w.rows(); }
  Index input_dim() const { return w.cols(); }
  Index nonzeros() const { return static_cast<Index>((w.array() != 0.0).count()); }
};

inline Vector logits(const FinalLayerWeights& layer, const Vector& features) {
  if (features.size() != layer.w.cols()) {
    throw ParameterError("final layer expects " + std::to_string(layer.w.cols()) + " features, got " +
                         std::to_string(features.size()));
  }
  return layer.w * features + layer.bias;
}

inline PredictionDistribution predict(const FinalLayerWeights& layer, const Vector& features) {
  return PredictionDistribution(softmax(logits(layer, features)));
}

inline PredictionDistribution predict(const FinalLayerWeights& layer, const FusedFeature& fused) {
  return predict(layer, fused.values);
}

/// Replaces the listed concept entries; every other entry is left untouched.
inline ConceptVector intervene(const ConceptVector& concepts, const std::vector<std::pair<Index, double>>& edits) {
  ConceptVector out = concepts;
  for (const auto& [index, value] : edits) {
    if (index < 0 || index >= concepts.size()) {
      throw ParameterError("intervene: concept index " + std::to_string(index) + " out of range [0, " +
                           std::to_string(concepts.size()) + ")");
    }
    if (!std::isfinite(value)) throw ParameterError("intervene: non-finite value");
    out.values(index) = value;
  }
  return out;
}

struct FinalLayerOptions {
  double lambda = 0.0007;
  std::size_t iterations = 1000;
};

struct FinalLayerResult {
  FinalLayerWeights weights;
  double sparsity = 0.0;  // fraction of exact zeros in w
  std::vector<double> objective;
};

namespace detail {

// Largest eigenvalue of X^T X / n by power iteration from a fixed start.
inline double top_eigenvalue_gram(const Matrix& x) {
  Vector v = Vector::Ones(x.cols()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    Vector next = x.transpose() * (x * v) / static_cast<double>(x.rows());
    const double n = next.norm();
    if (n == 0.0) return 0.0;
    lambda = n;
    v = next / n;
  }
  return lambda;
}

inline double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

}  // namespace detail

/// l1-regularized multinomial logistic regression, mean cross-entropy + lambda * |W|_1
/// (bias unpenalized), fitted by proximal gradient on standardized features. The
/// standardization is folded back, so the returned weights act on raw features and
/// exact zeros stay zero.
inline FinalLayerResult train_final_layer(const Matrix& features, const std::vector<Index>& labels,
                                          Index classes, const FinalLayerOptions& options = {}) {
  const Index n = features.rows();
  const Index d = features.cols();
  if (n == 0 || static_cast<Index>(labels.size()) != n) throw ParameterError("train_final_layer: one label per row");
  if (!(options.lambda >= 0.0) || !std::isfinite(options.lambda)) throw ParameterError("train_final_layer: lambda must be >= 0");
  if (classes < 2) throw ParameterError("train_final_layer: need at least two classes");
  if (!features.allFinite()) throw ParameterError("train_final_layer: non-finite features");
  std::set<Index> present;
  for (Index y : labels) {
    if (y < 0 || y >= classes) throw ParameterError("train_final_layer: label out of range");
    present.insert(y);
  }
  if (present.size() < 2) throw ParameterError("train_final_layer: labels contain a single class");

  const Vector mean = features.colwise().mean().transpose();
  Vector scale(d);
  Matrix z = features.rowwise() - mean.transpose();
  for (Index j = 0; j < d; ++j) {
    const double s = std::sqrt(z.col(j).squaredNorm() / static_cast<double>(n));
    scale(j) = s > 1e-12 ? s : 0.0;
    if (scale(j) > 0.0) {
      z.col(j) /= s;
    } else {
      z.col(j).setZero();
    }
  }
  Matrix onehot = Matrix::Zero(n, classes);
  for (Index i = 0; i < n; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1.0;

  // Softmax cross-entropy has curvature at most 1/2 per direction; the bias column is
  // orthogonal to the centered features, so its Gram eigenvalue is 1.
  const double lipschitz = 0.5 * std::max(detail::top_eigenvalue_gram(z), 1.0);
  const double step = 1.0 / lipschitz;

  Matrix w = Matrix::Zero(classes, d);
  Vector b = Vector::Zero(classes);
  FinalLayerResult out;
  out.objective.reserve(options.iterations);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    Matrix scores = z * w.transpose();
    scores.rowwise() += b.transpose();
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double top = scores.row(i).maxCoeff();
      const double lse = top + std::log((scores.row(i).array() - top).exp().sum());
      loss += lse - scores(i, labels[static_cast<std::size_t>(i)]);
      scores.row(i) = (scores.row(i).array() - lse).exp().matrix();
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw DivergenceError("train_final_layer: non-finite loss", it);
    out.objective.push_back(loss + options.lambda * w.cwiseAbs().sum());
    const Matrix residual = scores - onehot;
    const Matrix grad_w = residual.transpose() * z / static_cast<double>(n);
    const Vector grad_b = residual.colwise().mean().transpose();
    for (Index c = 0; c < classes; ++c) {
      for (Index j = 0; j < d; ++j) {
        w(c, j) = scale(j) > 0.0 ? detail::soft_threshold(w(c, j) - step * grad_w(c, j), step * options.lambda) : 0.0;
      }
    }
    b -= step * grad_b;
  }

  out.weights.w = Matrix::Zero(classes, d);
  out.weights.bias = b;
  for (Index c = 0; c < classes; ++c) {
    for (Index j = 0; j < d; ++j) {
      if (w(c, j) == 0.0) continue;
      out.weights.w(c, j) = w(c, j) / scale(j);
      out.weights.bias(c) -= w(c, j) * mean(j) / scale(j);
    }
  }
  out.sparsity = 1.0 - static_cast<double>(out.weights.nonzeros()) / static_cast<double>(classes * d);
  return out;
}

}  // namespace svct::cbm
