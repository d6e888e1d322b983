#pragma once

// Training pipeline: filter candidate concepts, learn the projection, drop concepts that
// cannot be projected, fit the sparse head, and fit the denoiser prior.

#include <cstdint>
#include <string>
#include <vector>

#include "svct/cbm/concepts.hpp"
#include "svct/cbm/final_layer.hpp"
#include "svct/cbm/model.hpp"
#include "svct/cbm/projection.hpp"
#include "svct/harness/synthetic.hpp"
#include "svct/linalg.hpp"
#include "svct/smoothing.hpp"

namespace svct::harness {

struct TrainConfig {
  std::size_t proj_steps = 1000;
  double proj_lr = 0.1;
  double lam = 0.0007;
  std::size_t n_iters = 1000;
  double clip_cutoff = 0.25;
  double interpretability_cutoff = 0.45;
  double class_similarity_cutoff = 0.85;
  double duplicate_cutoff = 0.9;
  std::size_t max_name_length = 40;
  std::uint64_t seed = 11;
};

struct TrainedBundle {
  cbm::ConceptModel model;
  smoothing::GaussianMixturePrior prior;
  cbm::FinalLayerWeights concept_only_head;  // head on concept features alone
  std::vector<std::string> candidate_names;
  std::vector<std::string> after_filters;    // names surviving the embedding filters
  Vector similarities;                       // projection similarity of the final concepts
  double sparsity = 0.0;
  TrainConfig config;
};

inline cbm::FilterCutoffs filter_cutoffs(const TrainConfig& cfg) {
  cbm::FilterCutoffs c;
  c.max_name_length = cfg.max_name_length;
  c.class_similarity = cfg.class_similarity_cutoff;
  c.duplicate_similarity = cfg.duplicate_cutoff;
  c.clip_cutoff = cfg.clip_cutoff;
  return c;
}

/// Concept features W_c f(x) for each row of `x`.
inline Matrix concept_matrix(const cbm::ConceptModel& model, const Matrix& x) {
  return model.backbone().features_batch(x) * model.projection().w.transpose();
}

inline Matrix fused_matrix(const cbm::ConceptModel& model, const Matrix& x) {
  const Matrix f = model.backbone().features_batch(x);
  Matrix out(f.rows(), f.cols() + model.concept_count());
  out.leftCols(f.cols()) = f;
  out.rightCols(model.concept_count()) = f * model.projection().w.transpose();
  return out;
}

inline TrainedBundle train_model(const SyntheticDataset& data, const TrainConfig& cfg) {
  TrainedBundle out;
  out.config = cfg;
  out.candidate_names = data.candidates.names;
  const cbm::TinyBackbone backbone(data.backbone);
  const Matrix features = backbone.features_batch(data.x_train);

  const Matrix activations = cbm::activation_matrix(data.image_train, data.candidates);
  const auto filtered = cbm::filter_concepts(data.candidates, data.class_embeddings, activations, filter_cutoffs(cfg));
  out.after_filters = filtered.concepts.names;
  Matrix kept_activations(activations.rows(), static_cast<Index>(filtered.kept.size()));
  for (std::size_t j = 0; j < filtered.kept.size(); ++j) {
    kept_activations.col(static_cast<Index>(j)) = activations.col(filtered.kept[j]);
  }

  cbm::ProjectionOptions popt;
  popt.steps = cfg.proj_steps;
  popt.learning_rate = cfg.proj_lr;
  popt.seed = cfg.seed;
  const auto projection = cbm::learn_projection(features, kept_activations, popt);
  auto [weights, kept] = cbm::drop_uninterpretable(projection.weights, projection.similarities, cfg.interpretability_cutoff);
  std::vector<std::string> names;
  out.similarities.resize(static_cast<Index>(kept.size()));
  for (std::size_t r = 0; r < kept.size(); ++r) {
    names.push_back(filtered.concepts.names[static_cast<std::size_t>(kept[r])]);
    out.similarities(static_cast<Index>(r)) = projection.similarities(kept[r]);
  }

  const Matrix concepts = features * weights.w.transpose();
  Matrix fused(features.rows(), features.cols() + concepts.cols());
  fused.leftCols(features.cols()) = features;
  fused.rightCols(concepts.cols()) = concepts;
  const cbm::FinalLayerOptions fopt{cfg.lam, cfg.n_iters};
  const auto head = cbm::train_final_layer(fused, data.y_train, data.classes(), fopt);
  out.sparsity = head.sparsity;
  out.concept_only_head = cbm::train_final_layer(concepts, data.y_train, data.classes(), fopt).weights;
  out.model = cbm::ConceptModel(backbone, std::move(weights), head.weights, std::move(names));
  out.prior = smoothing::fit_gmm_prior(data.x_train, data.y_train, data.classes());
  return out;
}

}  // namespace svct::harness
