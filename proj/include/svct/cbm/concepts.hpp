#pragma once

// Candidate concept sets, the image/text activation matrix, and the filters that prune
// a candidate list before projection learning.

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::cbm {

namespace detail {

inline void require_unit_rows(const Matrix& m, const char* what) {
  for (Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
      throw ParameterError(std::string(what) + ": row " + std::to_string(i) + " is not unit-norm (norm " +
                           std::to_string(n) + ")");
    }
  }
}

}  // namespace detail

struct ConceptSet {
  std::vector<std::string> names;
  Matrix text_embeddings;  // one unit-norm row per concept

  ConceptSet() = default;
  ConceptSet(std::vector<std::string> n, Matrix e) : names(std::move(n)), text_embeddings(std::move(e)) {
    if (static_cast<Index>(names.size()) != text_embeddings.rows()) {
      throw ParameterError("ConceptSet: " + std::to_string(names.size()) + " names for " +
                           std::to_string(text_embeddings.rows()) + " embedding rows");
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : names) {
      if (!seen.insert(name).second) throw ParameterError("ConceptSet: duplicate name '" + name + "'");
    }
    detail::require_unit_rows(text_embeddings, "ConceptSet");
  }

  Index size() const { return static_cast<Index>(names.size()); }

  ConceptSet subset(const std::vector<Index>& keep) const {
    std::vector<std::string> n;
    Matrix e(static_cast<Index>(keep.size()), text_embeddings.cols());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      n.push_back(names.at(static_cast<std::size_t>(keep[r])));
      e.row(static_cast<Index>(r)) = text_embeddings.row(keep[r]);
    }
    return {std::move(n), std::move(e)};
  }
};

struct EmbeddingTable {
  Matrix image_embeddings;   // N x d_e, unit-norm rows
  Matrix backbone_features;  // N x d0

  EmbeddingTable() = default;
  EmbeddingTable(Matrix images, Matrix features)
      : image_embeddings(std::move(images)), backbone_features(std::move(features)) {
    if (image_embeddings.rows() != backbone_features.rows()) {
      throw ParameterError("EmbeddingTable: row counts differ");
    }
    if (!image_embeddings.allFinite() || !backbone_features.allFinite()) {
      throw ParameterError("EmbeddingTable: non-finite entries");
    }
    detail::require_unit_rows(image_embeddings, "EmbeddingTable");
  }
};

/// A(i, j) = image_i . text_j.
inline Matrix activation_matrix(const Matrix& image_embeddings, const ConceptSet& concepts) {
  if (image_embeddings.cols() != concepts.text_embeddings.cols()) {
    throw ParameterError("activation_matrix: image dim " + std::to_string(image_embeddings.cols()) +
                         " vs text dim " + std::to_string(concepts.text_embeddings.cols()));
  }
  return image_embeddings * concepts.text_embeddings.transpose();
}

inline Matrix activation_matrix(const EmbeddingTable& table, const ConceptSet& concepts) {
  return activation_matrix(table.image_embeddings, concepts);
}

struct FilterCutoffs {
  std::size_t max_name_length = 40;
  double class_similarity = 0.85;
  double duplicate_similarity = 0.9;
  double clip_cutoff = 0.25;
  Index top_n = 5;
};

struct FilterResult {
  ConceptSet concepts;
  std::vector<Index> kept;  // indices into the candidate set
};

/// Mean of the `top_n` largest entries of each column.
inline Vector mean_top_activation(const Matrix& activations, Index top_n) {
  Vector out(activations.cols());
  const Index n = std::min(top_n, activations.rows());
  std::vector<double> col(static_cast<std::size_t>(activations.rows()));
  for (Index j = 0; j < activations.cols(); ++j) {
    for (Index i = 0; i < activations.rows(); ++i) col[static_cast<std::size_t>(i)] = activations(i, j);
    std::partial_sort(col.begin(), col.begin() + n, col.end(), std::greater<>());
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += col[static_cast<std::size_t>(i)];
    out(j) = s / static_cast<double>(n);
  }
  return out;
}

/// Applies, in order: name length, similarity to any class, similarity to an earlier kept
/// concept, and mean top-n activation. `activations` holds one column per candidate.
inline FilterResult filter_concepts(const ConceptSet& candidates, const Matrix& class_embeddings,
                                    const Matrix& activations, const FilterCutoffs& cutoffs = {}) {
  const auto in_unit = [](double v) { return v > 0.0 && v <= 1.0; };
  if (!in_unit(cutoffs.class_similarity) || !in_unit(cutoffs.duplicate_similarity) || !in_unit(cutoffs.clip_cutoff)) {
    throw ParameterError("filter_concepts: cutoffs must lie in (0, 1]");
  }
  if (cutoffs.top_n < 1) throw ParameterError("filter_concepts: top_n must be positive");
  if (activations.cols() != candidates.size()) throw ParameterError("filter_concepts: activation columns != candidates");
  if (class_embeddings.rows() > 0 && class_embeddings.cols() != candidates.text_embeddings.cols()) {
    throw ParameterError("filter_concepts: class embedding dim mismatch");
  }
  detail::require_unit_rows(class_embeddings, "filter_concepts(class embeddings)");

  std::vector<Index> stage;
  for (Index j = 0; j < candidates.size(); ++j) {
    if (candidates.names[static_cast<std::size_t>(j)].size() <= cutoffs.max_name_length) stage.push_back(j);
  }

  std::vector<Index> next;
  for (Index j : stage) {
    bool close = false;
    for (Index c = 0; c < class_embeddings.rows() && !close; ++c) {
      close = candidates.text_embeddings.row(j).dot(class_embeddings.row(c)) > cutoffs.class_similarity;
    }
    if (!close) next.push_back(j);
  }
  stage.swap(next);
  next.clear();

  for (Index j : stage) {
    bool dup = false;
    for (Index kept : next) {
      if (candidates.text_embeddings.row(j).dot(candidates.text_embeddings.row(kept)) > cutoffs.duplicate_similarity) {
        dup = true;
        break;
      }
    }
    if (!dup) next.push_back(j);
  }
  stage.swap(next);
  next.clear();

  const Vector top = mean_top_activation(activations, cutoffs.top_n);
  for (Index j : stage) {
    if (top(j) >= cutoffs.clip_cutoff) next.push_back(j);
  }
  if (next.empty()) throw EmptyConceptSetError("filter_concepts: every candidate concept was filtered out");
  return {candidates.subset(next), next};
}

}  // namespace svct::cbm
