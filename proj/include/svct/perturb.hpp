#pragma once

// Input perturbations: projected gradient ascent on the cross-entropy, Gaussian noise,
// and a finite-difference check of the gradients PGD relies on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::perturb {

enum class Norm { linf, l2 };

inline std::string to_string(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

inline Norm norm_from_string(const std::string& s) {
  if (s == "linf") return Norm::linf;
  if (s == "l2") return Norm::l2;
  throw ParameterError("unknown attack norm '" + s + "' (expected linf or l2)");
}

struct AttackConfig {
  double rho = 8.0 / 255.0;
  double step = 2.0 / 255.0;
  std::size_t iters = 10;
  Norm norm = Norm::linf;
  std::optional<std::pair<double, double>> box = std::pair{0.0, 1.0};

  void validate() const {
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw ParameterError("AttackConfig: rho must be >= 0");
    if (!(step > 0.0) || !std::isfinite(step)) throw ParameterError("AttackConfig: step must be > 0");
    if (iters < 1) throw ParameterError("AttackConfig: iters must be >= 1");
    if (box && !(box->first < box->second)) throw ParameterError("AttackConfig: empty input box");
  }
};

/// Loss and its input gradient for a fixed label.
struct GradientModel {
  std::function<double(const Vector&, Index)> loss;
  std::function<Vector(const Vector&, Index)> gradient;
};

template <typename M>
GradientModel gradient_model(const M& model) {
  return {[&model](const Vector& x, Index y) { return model.loss(x, y); },
          [&model](const Vector& x, Index y) { return model.input_gradient(x, y); }};
}

inline double linf_distance(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }
inline double l2_distance(const Vector& a, const Vector& b) { return (a - b).norm(); }

inline Vector project_to_ball(const Vector& x, const Vector& center, const AttackConfig& config) {
  Vector out;
  if (config.norm == Norm::linf) {
    out = x.array().max(center.array() - config.rho).min(center.array() + config.rho).matrix();
  } else {
    const Vector d = x - center;
    const double n = d.norm();
    out = n > config.rho ? Vector(center + d * (config.rho / n)) : x;
  }
  // Clipping to a box that contains the center only moves points toward it.
  if (config.box) out = out.cwiseMax(config.box->first).cwiseMin(config.box->second);
  return out;
}

/// Gradient ascent on the loss from x itself (no random start), each step projected onto
/// the rho-ball around x. `on_iterate` sees every projected iterate.
inline Vector pgd_attack(const GradientModel& model, const Vector& x, Index label, const AttackConfig& config,
                         const std::function<void(const Vector&)>& on_iterate = {}) {
  config.validate();
  if (!x.allFinite()) throw ParameterError("pgd_attack: non-finite input");
  if (config.rho == 0.0) return x;
  Vector cur = x;
  for (std::size_t it = 0; it < config.iters; ++it) {
    const Vector g = model.gradient(cur, label);
    if (g.size() != x.size()) throw AttackFailureError("pgd_attack: gradient has the wrong length");
    if (!g.allFinite()) throw AttackFailureError("pgd_attack: non-finite gradient at iteration " + std::to_string(it));
    Vector next;
    if (config.norm == Norm::linf) {
      next = cur + config.step * g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    } else {
      const double n = g.norm();
      next = n > 0.0 ? Vector(cur + config.step * g / n) : cur;
    }
    cur = project_to_ball(next, x, config);
    if (on_iterate) on_iterate(cur);
  }
  return cur;
}

/// x + N(0, std^2 I).
inline Vector gaussian_perturb(const Vector& x, double stddev, std::uint64_t seed) {
  if (!(stddev >= 0.0) || !std::isfinite(stddev)) throw ParameterError("gaussian_perturb: std must be >= 0");
  if (stddev == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  Vector out = x;
  for (Index i = 0; i < out.size(); ++i) out(i) += normal(rng);
  return out;
}

/// Largest relative error |a - n| / max(|a|, |n|) between the analytic gradient and a
/// central finite difference; coordinates where both are below 1e-10 count as exact.
inline double grad_check(const std::function<double(const Vector&)>& loss,
                         const std::function<Vector(const Vector&)>& gradient, const Vector& x, double epsilon) {
  if (!(epsilon > 0.0)) throw ParameterError("grad_check: epsilon must be > 0");
  const Vector analytic = gradient(x);
  if (analytic.size() != x.size()) throw ParameterError("grad_check: gradient has the wrong length");
  double worst = 0.0;
  Vector probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + epsilon;
    const double up = loss(probe);
    probe(i) = x(i) - epsilon;
    const double down = loss(probe);
    probe(i) = x(i);
    const double numeric = (up - down) / (2.0 * epsilon);
    const double scale = std::max(std::abs(analytic(i)), std::abs(numeric));
    if (scale < 1e-10) continue;
    worst = std::max(worst, std::abs(analytic(i) - numeric) / scale);
  }
  return worst;
}

}  // namespace svct::perturb
