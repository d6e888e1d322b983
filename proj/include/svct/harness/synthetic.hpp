#pragma once

// Synthetic planted-concept world: class-conditional inputs in [0,1]^d, a frozen tanh
// backbone, planted concept activations that are linear in part of the backbone
// features, and image/text embeddings whose inner products reproduce those activations.
//
// The backbone is block-structured: the first half of the features reads the first half
// of the input, the second half reads the rest. Planted concepts only see the first
// block, so a concept-only classifier loses the class information carried by the second.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "svct/cbm/backbone.hpp"
#include "svct/cbm/concepts.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::harness {

struct SyntheticSpec {
  Index d_input = 32;
  Index d0 = 32;
  Index m_true = 48;
  Index classes = 4;
  Index n_train = 1000;
  Index n_test = 200;
  double input_std = 0.04;          // within-class spread of each input coordinate
  double class_separation = 0.015;  // class-mean offset from 0.5 on the concept-visible half
  double aux_separation = 0.05;     // class-mean offset from 0.5 on the other half
  double backbone_gain = 32.0;      // scale of first-layer weights
  double feature_offset = 1.0;      // std of the constant feature offset b2
  double concept_class_weight = 0.8;  // share of each planted direction aligned with its class
  double embedding_noise = 0.02;   // noise std on image embeddings (before normalization)
  double background_weight = 0.3;  // shared text/image component (CLIP-style positive offset)
  bool distractors = true;
  std::uint64_t seed = 7;

  Index visible_input() const { return d_input / 2; }
  Index visible_features() const { return d0 / 2; }
  /// Embedding width: planted concepts, background, class names, one unused direction.
  Index d_e() const { return m_true + 1 + classes + 1; }

  void validate() const {
    if (d_input < 2 || d0 < 2 || m_true < 1 || classes < 2 || n_train < classes || n_test < 1) {
      throw ParameterError("SyntheticSpec: dimensions must be >= 1 (d_input, d0 >= 2; classes >= 2; n_train >= classes)");
    }
    if (!(input_std > 0.0) || !(class_separation >= 0.0) || !(aux_separation >= 0.0) || !(backbone_gain > 0.0) ||
        !(feature_offset >= 0.0)) {
      throw ParameterError("SyntheticSpec: input_std and backbone_gain must be positive, class_separation >= 0");
    }
    if (!(embedding_noise > 0.0)) throw ParameterError("SyntheticSpec: embedding noise must be positive");
    if (!(concept_class_weight >= 0.0 && concept_class_weight <= 1.0)) {
      throw ParameterError("SyntheticSpec: concept_class_weight must lie in [0, 1]");
    }
    if (!(background_weight >= 0.0 && background_weight < 1.0)) {
      throw ParameterError("SyntheticSpec: background_weight must lie in [0, 1)");
    }
  }
};

struct SyntheticDataset {
  SyntheticSpec spec;
  Matrix x_train;
  std::vector<Index> y_train;
  Matrix x_test;
  std::vector<Index> y_test;
  Matrix class_means;  // classes x d_input
  cbm::BackboneParams backbone;
  cbm::ConceptSet candidates;  // planted concepts first, then distractors
  std::vector<std::string> class_names;
  Matrix class_embeddings;
  Matrix image_train;  // unit-norm image embeddings
  Matrix image_test;
  Matrix planted_projection;  // m_true x d0, zero on the second feature block
  Vector planted_center;      // feature mean subtracted before projection
  std::vector<Index> concept_class;  // class each planted concept is aligned with

  Index classes() const { return spec.classes; }
  /// Planted activations W* (f(x) - center) for the rows of `x`.
  Matrix planted_activations(const Matrix& x) const {
    const Matrix f = cbm::TinyBackbone(backbone).features_batch(x);
    return (f.rowwise() - planted_center.transpose()) * planted_projection.transpose();
  }
};

namespace detail {

inline Matrix gaussian_matrix(Index rows, Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

inline std::vector<Index> balanced_labels(Index n, Index classes, std::mt19937_64& rng) {
  std::vector<Index> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = i % classes;
  std::shuffle(y.begin(), y.end(), rng);
  return y;
}

inline Matrix sample_inputs(const std::vector<Index>& labels, const Matrix& means, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std);
  Matrix x(static_cast<Index>(labels.size()), means.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      x(i, j) = std::clamp(means(labels[static_cast<std::size_t>(i)], j) + normal(rng), 0.0, 1.0);
    }
  }
  return x;
}

inline std::string concept_name(Index j) {
  std::string n = std::to_string(j);
  return "planted concept " + std::string(n.size() < 2 ? 2 - n.size() : 0, '0') + n;
}

}  // namespace detail

inline SyntheticDataset synth_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticDataset ds;
  ds.spec = spec;
  const Index din = spec.d_input;
  const Index vin = spec.visible_input();
  const Index d0 = spec.d0;
  const Index vf = spec.visible_features();
  const Index m = spec.m_true;
  const Index c = spec.classes;

  // Class means: 0.5 plus a random-sign offset per coordinate.
  std::uniform_real_distribution<double> unit(0.5, 1.0);
  std::bernoulli_distribution coin(0.5);
  ds.class_means.resize(c, din);
  for (Index k = 0; k < c; ++k) {
    for (Index j = 0; j < din; ++j) {
      const double sep = j < vin ? spec.class_separation : spec.aux_separation;
      ds.class_means(k, j) = 0.5 + (coin(rng) ? 1.0 : -1.0) * sep * unit(rng);
    }
  }

  // Block-diagonal backbone centered on the middle of the input box.
  cbm::BackboneParams& bb = ds.backbone;
  bb.w1 = Matrix::Zero(d0, din);
  bb.w1.topLeftCorner(vf, vin) = detail::gaussian_matrix(vf, vin, spec.backbone_gain / std::sqrt(double(vin)), rng);
  bb.w1.bottomRightCorner(d0 - vf, din - vin) =
      detail::gaussian_matrix(d0 - vf, din - vin, spec.backbone_gain / std::sqrt(double(din - vin)), rng);
  bb.b1 = -bb.w1 * Vector::Constant(din, 0.5);
  bb.w2 = Matrix::Zero(d0, d0);
  bb.w2.topLeftCorner(vf, vf) = detail::gaussian_matrix(vf, vf, 1.0 / std::sqrt(double(vf)), rng);
  bb.w2.bottomRightCorner(d0 - vf, d0 - vf) = detail::gaussian_matrix(d0 - vf, d0 - vf, 1.0 / std::sqrt(double(d0 - vf)), rng);
  bb.b2 = detail::gaussian_matrix(d0, 1, spec.feature_offset, rng).col(0);
  const cbm::TinyBackbone backbone(bb);

  ds.y_train = detail::balanced_labels(spec.n_train, c, rng);
  ds.y_test = detail::balanced_labels(spec.n_test, c, rng);
  ds.x_train = detail::sample_inputs(ds.y_train, ds.class_means, spec.input_std, rng);
  ds.x_test = detail::sample_inputs(ds.y_test, ds.class_means, spec.input_std, rng);

  // Planted projection: each concept mixes its class direction with a random direction,
  // both restricted to the visible feature block.
  const Matrix f_train = backbone.features_batch(ds.x_train);
  ds.planted_center = f_train.colwise().mean().transpose();
  Matrix class_dirs = Matrix::Zero(c, vf);
  Vector counts = Vector::Zero(c);
  for (Index i = 0; i < f_train.rows(); ++i) {
    const Index y = ds.y_train[static_cast<std::size_t>(i)];
    class_dirs.row(y) += f_train.row(i).head(vf) - ds.planted_center.head(vf).transpose();
    counts(y) += 1.0;
  }
  for (Index k = 0; k < c; ++k) {
    class_dirs.row(k) /= counts(k);
    const double n = class_dirs.row(k).norm();
    if (n > 0.0) class_dirs.row(k) /= n;
  }
  ds.planted_projection = Matrix::Zero(m, d0);
  const double aligned = spec.concept_class_weight;
  const double spread = std::sqrt(1.0 - aligned * aligned);
  for (Index j = 0; j < m; ++j) {
    const Index k = j % c;
    ds.concept_class.push_back(k);
    Vector g = detail::gaussian_matrix(vf, 1, 1.0, rng).col(0);
    g.normalize();
    ds.planted_projection.row(j).head(vf) = (aligned * class_dirs.row(k).transpose() + spread * g).transpose();
  }

  // Embeddings: coordinates [0, m) carry planted activations, m is the shared background,
  // then one coordinate per class name, then an unused direction.
  const Index de = spec.d_e();
  const Index background = m;
  const Index class_base = m + 1;
  const Index unused = m + 1 + c;
  const Matrix act_train = ds.planted_activations(ds.x_train);
  const Matrix act_test = ds.planted_activations(ds.x_test);
  double max_norm = 0.0;
  for (Index i = 0; i < act_train.rows(); ++i) max_norm = std::max(max_norm, act_train.row(i).norm());
  for (Index i = 0; i < act_test.rows(); ++i) max_norm = std::max(max_norm, act_test.row(i).norm());
  const double kappa = max_norm > 0.0 ? 0.95 / max_norm : 1.0;
  const auto embed = [&](const Matrix& act) {
    Matrix e = Matrix::Zero(act.rows(), de);
    Matrix noise = detail::gaussian_matrix(act.rows(), m, spec.embedding_noise, rng);
    for (Index i = 0; i < act.rows(); ++i) {
      Vector signal = kappa * act.row(i).transpose() + noise.row(i).transpose();
      const double sn = signal.norm();
      if (sn > 0.99) signal *= 0.99 / sn;
      e.row(i).head(m) = signal.transpose();
      e(i, background) = std::sqrt(1.0 - signal.squaredNorm());
    }
    return e;
  };
  ds.image_train = embed(act_train);
  ds.image_test = embed(act_test);

  std::vector<std::string> names;
  std::vector<Vector> rows;
  const double bgw = spec.background_weight;
  for (Index j = 0; j < m; ++j) {
    Vector t = Vector::Zero(de);
    t(j) = std::sqrt(1.0 - bgw * bgw);
    t(background) = bgw;
    names.push_back(detail::concept_name(j));
    rows.push_back(t);
  }
  ds.class_embeddings = Matrix::Zero(c, de);
  for (Index k = 0; k < c; ++k) {
    ds.class_names.push_back("class " + std::to_string(k));
    ds.class_embeddings(k, class_base + k) = 1.0;
  }
  if (spec.distractors) {
    // One candidate per filter: overlong name, class look-alike, near duplicate, never active.
    Vector longname = rows[0] + rows[std::min<Index>(1, m - 1)];
    names.push_back("planted concept with a description that runs past the length limit");
    rows.push_back(longname.normalized());
    Vector classlike = Vector::Zero(de);
    classlike(class_base) = 1.0;
    classlike(std::min<Index>(2, m - 1)) = 0.3;
    names.push_back("looks like class 0");
    rows.push_back(classlike.normalized());
    Vector dup = rows[static_cast<std::size_t>(std::min<Index>(3, m - 1))];
    dup(unused) = 0.3;
    names.push_back("near copy of concept 03");
    rows.push_back(dup.normalized());
    Vector quiet = Vector::Zero(de);
    quiet(unused) = 1.0;
    names.push_back("never active");
    rows.push_back(quiet);
  }
  Matrix text(static_cast<Index>(rows.size()), de);
  for (std::size_t r = 0; r < rows.size(); ++r) text.row(static_cast<Index>(r)) = rows[r].transpose();
  ds.candidates = cbm::ConceptSet(std::move(names), std::move(text));
  return ds;
}

}  // namespace svct::harness
