#pragma once

// A trained concept-bottleneck classifier with feature fusion: frozen backbone, concept
// projection, and a linear head over [backbone; concepts].

#include <cmath>
#include <string>
#include <vector>

#include "svct/cbm/backbone.hpp"
#include "svct/cbm/final_layer.hpp"
#include "svct/cbm/projection.hpp"
#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::cbm {

class ConceptModel {
 public:
  ConceptModel() = default;
  ConceptModel(TinyBackbone backbone, ProjectionWeights projection, FinalLayerWeights head,
               std::vector<std::string> concept_names)
      : backbone_(std::move(backbone)),
        projection_(std::move(projection)),
        head_(std::move(head)),
        names_(std::move(concept_names)) {
    if (projection_.w.cols() != backbone_.feature_dim()) throw ParameterError("ConceptModel: projection/backbone width mismatch");
    if (head_.w.cols() != backbone_.feature_dim() + projection_.w.rows()) {
      throw ParameterError("ConceptModel: head expects " + std::to_string(head_.w.cols()) + " fused features, pipeline gives " +
                           std::to_string(backbone_.feature_dim() + projection_.w.rows()));
    }
    if (head_.bias.size() != head_.w.rows()) throw ParameterError("ConceptModel: bias length mismatch");
    if (static_cast<Index>(names_.size()) != projection_.w.rows()) throw ParameterError("ConceptModel: one name per concept row");
  }

  const TinyBackbone& backbone() const { return backbone_; }
  const ProjectionWeights& projection() const { return projection_; }
  const FinalLayerWeights& head() const { return head_; }
  const std::vector<std::string>& concept_names() const { return names_; }
  Index input_dim() const { return backbone_.input_dim(); }
  Index concept_count() const { return projection_.w.rows(); }
  Index classes() const { return head_.w.rows(); }

  ConceptVector concepts(const Vector& x) const { return concept_features(projection_, backbone_.features(x)); }

  FusedFeature fused(const Vector& x) const {
    const Vector f = backbone_.features(x);
    return fuse(f, concept_features(projection_, f));
  }

  PredictionDistribution predict(const Vector& x) const { return cbm::predict(head_, fused(x)); }

  /// Prediction with the concept half replaced by `concepts` (test-time intervention).
  PredictionDistribution predict_with_concepts(const Vector& x, const ConceptVector& concepts) const {
    if (concepts.size() != concept_count()) throw ParameterError("predict_with_concepts: concept length mismatch");
    return cbm::predict(head_, fuse(backbone_.features(x), concepts));
  }

  /// Head weights acting directly on backbone features: W_F,backbone + W_F,concepts * W_c.
  Matrix effective_feature_weights() const {
    const Index d0 = backbone_.feature_dim();
    return head_.w.leftCols(d0) + head_.w.rightCols(concept_count()) * projection_.w;
  }

  /// Cross-entropy of the fused prediction against `label`.
  double loss(const Vector& x, Index label) const {
    check_label(label);
    const Vector z = logits(head_, fused(x).values);
    const double top = z.maxCoeff();
    return top + std::log((z.array() - top).exp().sum()) - z(label);
  }

  /// Gradient of loss(x, label) with respect to the input.
  Vector input_gradient(const Vector& x, Index label) const {
    check_label(label);
    Vector p = predict(x).probs;
    p(label) -= 1.0;
    return backbone_.vector_jacobian_product(x, effective_feature_weights().transpose() * p);
  }

 private:
  void check_label(Index label) const {
    if (label < 0 || label >= classes()) throw ParameterError("ConceptModel: label out of range");
  }

  TinyBackbone backbone_;
  ProjectionWeights projection_;
  FinalLayerWeights head_;
  std::vector<std::string> names_;
};

}  // namespace svct::cbm
