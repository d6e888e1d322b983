#pragma once

// Denoised diffusion smoothing: add Gaussian noise, rescale onto a diffusion timestep,
// denoise once, and run the concept pipeline on the result; repeat and aggregate.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/cbm/model.hpp"
#include "svct/concept_math.hpp"
#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::smoothing {

/// Discrete diffusion schedule beta_1 > beta_2 > ... > beta_T. Noise level sigma^2(t) =
/// (1 - beta_t) / beta_t increases with t.
class NoiseSchedule {
 public:
  NoiseSchedule() : NoiseSchedule(linear()) {}
  explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ParameterError("NoiseSchedule: empty");
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      if (!(betas_[i] > 0.0 && betas_[i] <= 1.0)) throw ParameterError("NoiseSchedule: beta outside (0, 1]");
      if (i > 0 && !(betas_[i] < betas_[i - 1])) throw ParameterError("NoiseSchedule: betas must strictly decrease");
    }
  }

  static NoiseSchedule linear(double beta_first = 0.9999, double beta_last = 0.02, std::size_t steps = 1000) {
    if (steps < 2) throw ParameterError("NoiseSchedule::linear: need at least two steps");
    std::vector<double> b(steps);
    for (std::size_t i = 0; i < steps; ++i) {
      b[i] = beta_first + (beta_last - beta_first) * static_cast<double>(i) / static_cast<double>(steps - 1);
    }
    return NoiseSchedule(std::move(b));
  }

  std::size_t length() const { return betas_.size(); }
  /// beta_t for t = 1..T; t = 0 is the noise-free start with beta_0 = 1.
  double beta(std::size_t t) const { return t == 0 ? 1.0 : betas_.at(t - 1); }
  double sigma2(std::size_t t) const { return (1.0 - beta(t)) / beta(t); }
  double max_sigma2() const { return sigma2(length()); }
  const std::vector<double>& betas() const { return betas_; }

 private:
  std::vector<double> betas_;
};

struct TimestepMatch {
  double t_star = 0.0;       // fractional timestep with sigma2(t_star) = sigma^2 by interpolation
  std::size_t nearest = 0;   // closest integer timestep
  double beta = 1.0;         // 1 / (1 + sigma^2)
};

/// Timestep whose noise level equals sigma^2. The returned beta solves
/// (1 - beta) / beta = sigma^2 exactly; t_star interpolates between the two bracketing
/// schedule entries.
inline TimestepMatch match_timestep(double sigma, const NoiseSchedule& schedule) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("match_timestep: sigma must be finite and >= 0");
  const double s2 = sigma * sigma;
  if (s2 > schedule.max_sigma2()) {
    throw OutOfScheduleError("match_timestep: sigma^2 = " + std::to_string(s2) + " exceeds the schedule maximum " +
                             std::to_string(schedule.max_sigma2()));
  }
  TimestepMatch out;
  out.beta = 1.0 / (1.0 + s2);
  std::size_t lo = 0;
  std::size_t hi = schedule.length();
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    (schedule.sigma2(mid) <= s2 ? lo : hi) = mid;
  }
  const double a = schedule.sigma2(lo);
  const double b = schedule.sigma2(hi);
  out.t_star = static_cast<double>(lo) + (b > a ? (s2 - a) / (b - a) : 0.0);
  if (lo == 0) {
    out.nearest = 1;
  } else {
    out.nearest = (s2 - a <= b - s2) ? lo : hi;
  }
  return out;
}

/// Isotropic Gaussian mixture sum_c w_c N(mu_c, tau2 I).
struct GaussianMixturePrior {
  Vector weights;
  Matrix means;  // one component per row
  double tau2 = 1.0;

  void validate() const {
    if (weights.size() == 0 || weights.size() != means.rows()) throw ParameterError("GaussianMixturePrior: one weight per mean");
    if (!weights.allFinite() || weights.minCoeff() < 0.0 || std::abs(weights.sum() - 1.0) > 1e-9) {
      throw ParameterError("GaussianMixturePrior: weights must lie on the simplex");
    }
    if (!(tau2 > 0.0) || !std::isfinite(tau2)) throw ParameterError("GaussianMixturePrior: tau2 must be positive");
    if (!means.allFinite()) throw ParameterError("GaussianMixturePrior: non-finite means");
  }
};

/// Class-conditional fit: component weights are class frequencies, means are class means,
/// tau2 is the pooled within-class variance averaged over coordinates.
inline GaussianMixturePrior fit_gmm_prior(const Matrix& inputs, const std::vector<Index>& labels, Index classes) {
  if (inputs.rows() == 0 || static_cast<Index>(labels.size()) != inputs.rows()) {
    throw ParameterError("fit_gmm_prior: one label per input row");
  }
  GaussianMixturePrior prior;
  prior.means = Matrix::Zero(classes, inputs.cols());
  Vector counts = Vector::Zero(classes);
  for (Index i = 0; i < inputs.rows(); ++i) {
    const Index y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) throw ParameterError("fit_gmm_prior: label out of range");
    prior.means.row(y) += inputs.row(i);
    counts(y) += 1.0;
  }
  std::vector<Index> present;
  for (Index c = 0; c < classes; ++c) {
    if (counts(c) > 0) present.push_back(c);
  }
  double ss = 0.0;
  for (Index c : present) prior.means.row(c) /= counts(c);
  for (Index i = 0; i < inputs.rows(); ++i) {
    ss += (inputs.row(i) - prior.means.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  }
  Matrix means(static_cast<Index>(present.size()), inputs.cols());
  Vector weights(static_cast<Index>(present.size()));
  for (std::size_t r = 0; r < present.size(); ++r) {
    means.row(static_cast<Index>(r)) = prior.means.row(present[r]);
    weights(static_cast<Index>(r)) = counts(present[r]) / static_cast<double>(inputs.rows());
  }
  prior.means = std::move(means);
  prior.weights = std::move(weights);
  prior.tau2 = std::max(ss / static_cast<double>(inputs.rows() * inputs.cols()), 1e-12);
  return prior;
}

/// Posterior mean E[X | X + sigma Z = noisy] under the mixture prior.
inline Vector gmm_posterior_denoiser(const Vector& noisy, double sigma, const GaussianMixturePrior& prior) {
  if (noisy.size() != prior.means.cols()) throw ParameterError("gmm_posterior_denoiser: dimension mismatch");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("gmm_posterior_denoiser: sigma must be >= 0");
  const double s2 = sigma * sigma;
  const double total = prior.tau2 + s2;
  const Index comps = prior.means.rows();
  Vector logr(comps);
  for (Index c = 0; c < comps; ++c) {
    const double w = prior.weights(c);
    logr(c) = w > 0.0 ? std::log(w) - (noisy.transpose() - prior.means.row(c)).squaredNorm() / (2.0 * total)
                      : -std::numeric_limits<double>::infinity();
  }
  const Vector r = softmax(logr);
  Vector out = Vector::Zero(noisy.size());
  for (Index c = 0; c < comps; ++c) {
    if (r(c) == 0.0) continue;
    out += r(c) * (prior.tau2 * noisy + s2 * prior.means.row(c).transpose()) / total;
  }
  return out;
}

enum class DenoiserKind { identity, gmm_posterior_mean };

inline std::string to_string(DenoiserKind kind) {
  return kind == DenoiserKind::identity ? "identity" : "gmm_posterior_mean";
}

inline DenoiserKind denoiser_kind_from_string(const std::string& s) {
  if (s == "identity") return DenoiserKind::identity;
  if (s == "gmm_posterior_mean" || s == "gmm") return DenoiserKind::gmm_posterior_mean;
  throw ParameterError("unknown denoiser kind '" + s + "' (expected identity or gmm_posterior_mean)");
}

struct DenoiserSpec {
  DenoiserKind kind = DenoiserKind::gmm_posterior_mean;
  GaussianMixturePrior prior;
};

/// Receives the scaled diffusion state sqrt(beta) * (X + noise) and its timestep; returns
/// an estimate of X in input coordinates.
using Denoiser = std::function<Vector(const Vector& scaled, const TimestepMatch& step)>;

inline Denoiser make_denoiser(const DenoiserSpec& spec) {
  if (spec.kind == DenoiserKind::identity) {
    return [](const Vector& scaled, const TimestepMatch& step) -> Vector { return scaled / std::sqrt(step.beta); };
  }
  spec.prior.validate();
  return [prior = spec.prior](const Vector& scaled, const TimestepMatch& step) -> Vector {
    const double sigma = std::sqrt((1.0 - step.beta) / step.beta);
    return gmm_posterior_denoiser(scaled / std::sqrt(step.beta), sigma, prior);
  };
}

/// sqrt(beta) * (x + sigma * z), z ~ N(0, I) drawn from `rng`.
inline Vector diffuse(const Vector& x, double sigma, const TimestepMatch& step, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector out(x.size());
  const double scale = std::sqrt(step.beta);
  for (Index i = 0; i < x.size(); ++i) out(i) = scale * (x(i) + sigma * normal(rng));
  return out;
}

/// One denoised input X-hat for the given seed.
inline Vector dds_denoise(const Vector& x, double sigma, const Denoiser& denoiser, const NoiseSchedule& schedule,
                          std::uint64_t seed) {
  if (!x.allFinite()) throw ParameterError("dds_denoise: non-finite input");
  const auto step = match_timestep(sigma, schedule);
  std::mt19937_64 rng(seed);
  return denoiser(diffuse(x, sigma, step, rng), step);
}

/// Concept vector of one denoised sample.
inline ConceptVector dds_sample(const cbm::ConceptModel& model, const Vector& x, double sigma,
                                const Denoiser& denoiser, const NoiseSchedule& schedule, std::uint64_t seed) {
  return model.concepts(dds_denoise(x, sigma, denoiser, schedule, seed));
}

struct SmoothedOutput {
  ConceptVector mean_concepts;
  std::vector<std::int64_t> class_counts;
  std::int64_t m = 0;
  double sigma = 0.0;
};

inline void to_json(nlohmann::json& j, const SmoothedOutput& s) {
  j = nlohmann::json{{"mean_concepts", to_std(s.mean_concepts.values)},
                     {"class_counts", s.class_counts},
                     {"m", s.m},
                     {"sigma", s.sigma}};
}

/// Averages m denoised samples (seeds base_seed + i). Class votes come from the full
/// fused prediction on each denoised input.
inline SmoothedOutput smooth_concepts(const cbm::ConceptModel& model, const Vector& x, double sigma, std::int64_t m,
                                      const Denoiser& denoiser, const NoiseSchedule& schedule,
                                      std::uint64_t base_seed) {
  if (m < 1) throw ParameterError("smooth_concepts: m must be at least 1");
  std::vector<Vector> samples;
  samples.reserve(static_cast<std::size_t>(m));
  SmoothedOutput out;
  out.class_counts.assign(static_cast<std::size_t>(model.classes()), 0);
  for (std::int64_t i = 0; i < m; ++i) {
    const Vector xhat = dds_denoise(x, sigma, denoiser, schedule, base_seed + static_cast<std::uint64_t>(i));
    const auto fused = model.fused(xhat);
    samples.push_back(fused.values.tail(model.concept_count()));
    ++out.class_counts[static_cast<std::size_t>(cbm::predict(model.head(), fused).top_class())];
  }
  out.mean_concepts = ConceptVector(svct::detail::pairwise_mean(samples));
  out.m = m;
  out.sigma = sigma;
  return out;
}

/// The four pipeline variants obtained by switching denoising and smoothing on or off.
struct PipelineVariant {
  bool denoising = true;
  bool smoothing = true;

  std::string name() const {
    if (denoising && smoothing) return "svct";
    if (denoising) return "denoise_only";
    if (smoothing) return "smooth_only";
    return "vct";
  }
  bool deterministic() const { return !denoising && !smoothing; }
  /// Sample count actually used for a requested m.
  std::int64_t samples(std::int64_t m) const { return smoothing ? m : 1; }
  /// Denoiser actually used when `chosen` is the configured one.
  DenoiserKind denoiser(DenoiserKind chosen = DenoiserKind::gmm_posterior_mean) const {
    return denoising ? chosen : DenoiserKind::identity;
  }
};

inline PipelineVariant ablation_config(bool denoising, bool smoothing) { return {denoising, smoothing}; }

inline std::vector<PipelineVariant> ablation_grid() {
  return {ablation_config(false, false), ablation_config(false, true), ablation_config(true, false),
          ablation_config(true, true)};
}

struct SmoothingParams {
  double sigma = 8.0 / 255.0;
  std::int64_t m = 64;
  NoiseSchedule schedule;
  DenoiserKind denoiser = DenoiserKind::gmm_posterior_mean;  // used by variants with denoising on
};

/// Runs `variant` on x. The deterministic variant returns the plain concept vector with a
/// single vote for its prediction.
inline SmoothedOutput run_variant(const cbm::ConceptModel& model, const Vector& x, const PipelineVariant& variant,
                                  const SmoothingParams& params, const GaussianMixturePrior& prior,
                                  std::uint64_t base_seed) {
  if (variant.deterministic()) {
    SmoothedOutput out;
    const auto fused = model.fused(x);
    out.mean_concepts = ConceptVector(fused.values.tail(model.concept_count()));
    out.class_counts.assign(static_cast<std::size_t>(model.classes()), 0);
    ++out.class_counts[static_cast<std::size_t>(cbm::predict(model.head(), fused).top_class())];
    out.m = 1;
    out.sigma = 0.0;
    return out;
  }
  const auto denoiser = make_denoiser(DenoiserSpec{variant.denoiser(params.denoiser), prior});
  return smooth_concepts(model, x, params.sigma, variant.samples(params.m), denoiser, params.schedule, base_seed);
}

}  // namespace svct::smoothing
