#pragma once

// Frozen stand-in for the pretrained feature extractor:
//   f(x) = W2 * tanh(W1 * x + b1) + b2.

#include <string>

#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::cbm {

struct BackboneParams {
  Matrix w1;  // hidden x input
  Vector b1;
  Matrix w2;  // features x hidden
  Vector b2;
};

class TinyBackbone {
 public:
  TinyBackbone() = default;
  explicit TinyBackbone(BackboneParams params) : p_(std::move(params)) {
    const auto h = p_.w1.rows();
    if (h == 0 || p_.w1.cols() == 0) throw ParameterError("TinyBackbone: empty first layer");
    if (p_.b1.size() != h || p_.w2.cols() != h || p_.b2.size() != p_.w2.rows() || p_.w2.rows() == 0) {
      throw ParameterError("TinyBackbone: inconsistent layer shapes");
    }
    if (!p_.w1.allFinite() || !p_.w2.allFinite() || !p_.b1.allFinite() || !p_.b2.allFinite()) {
      throw ParameterError("TinyBackbone: non-finite parameters");
    }
  }

  const BackboneParams& params() const { return p_; }
  Index input_dim() const { return p_.w1.cols(); }
  Index hidden_dim() const { return p_.w1.rows(); }
  Index feature_dim() const { return p_.w2.rows(); }

  Vector features(const Vector& x) const {
    check_input(x);
    const Vector h = (p_.w1 * x + p_.b1).array().tanh().matrix();
    return p_.w2 * h + p_.b2;
  }

  /// Row i of the result is the feature vector of row i of `inputs`.
  Matrix features_batch(const Matrix& inputs) const {
    if (inputs.cols() != input_dim()) throw ParameterError("TinyBackbone: input width mismatch");
    Matrix h = inputs * p_.w1.transpose();
    h.rowwise() += p_.b1.transpose();
    h = h.array().tanh().matrix();
    Matrix out = h * p_.w2.transpose();
    out.rowwise() += p_.b2.transpose();
    return out;
  }

  /// d f / d x, shape features x input.
  Matrix jacobian(const Vector& x) const {
    check_input(x);
    const Vector h = (p_.w1 * x + p_.b1).array().tanh().matrix();
    const Vector slope = (1.0 - h.array().square()).matrix();
    return p_.w2 * slope.asDiagonal() * p_.w1;
  }

  /// J(x)^T g without forming J.
  Vector vector_jacobian_product(const Vector& x, const Vector& g) const {
    check_input(x);
    if (g.size() != feature_dim()) throw ParameterError("TinyBackbone: cotangent length mismatch");
    const Vector h = (p_.w1 * x + p_.b1).array().tanh().matrix();
    const Vector back = (p_.w2.transpose() * g).array() * (1.0 - h.array().square());
    return p_.w1.transpose() * back;
  }

 private:
  void check_input(const Vector& x) const {
    if (x.size() != input_dim()) {
      throw ParameterError("TinyBackbone: input length " + std::to_string(x.size()) + ", expected " +
                           std::to_string(input_dim()));
    }
  }

  BackboneParams p_;
};

inline Vector tiny_backbone(const Vector& x, const BackboneParams& params) { return TinyBackbone(params).features(x); }

}  // namespace svct::cbm
