#pragma once

// Stability sweep: attack each test input once per radius, run every pipeline variant on
// the clean and attacked input with matched sampling seeds, and summarize accuracy,
// concept stability and certified radii per (variant, radius) row.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/certification.hpp"
#include "svct/concept_math.hpp"
#include "svct/harness/config.hpp"
#include "svct/harness/metrics.hpp"
#include "svct/harness/pipeline.hpp"
#include "svct/harness/synthetic.hpp"
#include "svct/perturb.hpp"
#include "svct/smoothing.hpp"

namespace svct::harness {

struct SweepOptions {
  std::vector<double> radii{6.0 / 255.0, 8.0 / 255.0, 10.0 / 255.0};
  std::vector<smoothing::PipelineVariant> variants = smoothing::ablation_grid();
  AttackSection attack;
  smoothing::SmoothingParams smoothing;
  std::uint64_t seed = 1234;
  std::int64_t repetitions = 10;
  std::int64_t n_inputs = 200;
  std::int64_t concept_weight_inputs = 3;
  Index k = 5;
  double beta = 0.8;
  double delta = 0.001;
  std::vector<double> alpha_grid = certification::default_alpha_grid();
};

inline SweepOptions sweep_options(const ExperimentConfig& c) {
  SweepOptions o;
  o.radii = c.attack.radii;
  o.attack = c.attack;
  o.smoothing = {c.smoothing.sigma, c.smoothing.m, c.smoothing.schedule(),
                 smoothing::denoiser_kind_from_string(c.smoothing.denoiser)};
  o.seed = c.smoothing.seed;
  o.repetitions = c.report.repetitions;
  o.n_inputs = c.report.n_inputs;
  o.concept_weight_inputs = c.report.concept_weight_inputs;
  o.k = static_cast<Index>(c.certify.k);
  o.beta = c.certify.beta;
  o.delta = c.certify.delta;
  o.alpha_grid = c.certify.alpha_grid;
  return o;
}

struct ReportRow {
  std::string variant;
  bool denoising = false;
  bool smoothing = false;
  double rho = 0.0;
  double sigma = 0.0;
  std::int64_t m = 1;
  double clean_accuracy = 0.0;
  double accuracy = 0.0;
  double accuracy_std = 0.0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  double cfs_mean = 0.0;
  double cfs_std = 0.0;
  double cpcs_mean = 0.0;
  double cpcs_std = 0.0;
  double topk_overlap_mean = 0.0;
  std::optional<double> r_topk_mean;
  std::optional<double> r_pred_mean;
  std::optional<double> r_final_mean;
  std::optional<double> certified_fraction;  // share of attacks whose l2 norm is within r_topk
  double linf_mean = 0.0;
  double l2_mean = 0.0;
  std::vector<double> accuracy_by_rep;
  std::vector<double> cfs_by_rep;
  std::vector<double> cpcs_by_rep;

  bool operator==(const ReportRow&) const = default;
};

struct ModelSummary {
  Index concepts = 0;
  Index candidates = 0;
  Index after_filters = 0;
  double sparsity = 0.0;
  double fused_accuracy = 0.0;
  double concept_only_accuracy = 0.0;

  bool operator==(const ModelSummary&) const = default;
};

struct ExperimentReport {
  nlohmann::json config;
  std::string baseline = "same_variant_clean";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> repetition_seeds;
  std::int64_t n_inputs = 0;
  Index k = 0;
  double beta = 0.0;
  ModelSummary model;
  std::vector<ReportRow> rows;

  bool operator==(const ExperimentReport&) const = default;
};

struct CertificateEntry {
  std::string variant;
  std::int64_t input = 0;
  std::int64_t repetition = 0;
  Index label = 0;
  Index top_class = 0;
  certification::CertificateReport report;
};

/// One concept value of one input under one condition, long format.
struct ConceptWeightRow {
  std::int64_t input = 0;
  std::string variant;
  double rho = 0.0;
  std::string condition;  // "clean" or "perturbed"
  std::string concept_name;
  double value = 0.0;
};

struct SweepResult {
  ExperimentReport report;
  std::vector<CertificateEntry> certificates;
  std::vector<ConceptWeightRow> concept_weights;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return mean_std(v).mean;
}

}  // namespace detail

/// Seed for repetition `rep` of a sweep seeded with `seed`.
inline std::uint64_t repetition_seed(std::uint64_t seed, std::int64_t rep) {
  return detail::splitmix64(seed ^ detail::splitmix64(static_cast<std::uint64_t>(rep)));
}

/// Sampling seed for input `i` within a repetition; clean and attacked runs share it.
inline std::uint64_t input_seed(std::uint64_t rep_seed, std::int64_t i) {
  return detail::splitmix64(rep_seed + static_cast<std::uint64_t>(i));
}

/// Top class of a smoothed output (majority vote, lowest index on ties).
inline Index voted_class(const smoothing::SmoothedOutput& out) {
  Index best = 0;
  for (std::size_t c = 1; c < out.class_counts.size(); ++c) {
    if (out.class_counts[c] > out.class_counts[static_cast<std::size_t>(best)]) best = static_cast<Index>(c);
  }
  return best;
}

/// Certificate for one smoothed output: the concept mean mapped to the simplex by softmax
/// and Hoeffding bounds on the class votes.
inline certification::CertificateReport certify_output(const smoothing::SmoothedOutput& out, Index k, double beta,
                                                       double delta, std::span<const double> alpha_grid) {
  const auto w = normalize_to_simplex(out.mean_concepts);
  const auto bounds = certification::estimate_p_bounds(out.class_counts, delta);
  return certification::certified_radius(out.sigma, w, k, beta, bounds, alpha_grid);
}

inline ModelSummary summarize_model(const TrainedBundle& bundle, const SyntheticDataset& data) {
  ModelSummary s;
  s.concepts = bundle.model.concept_count();
  s.candidates = static_cast<Index>(bundle.candidate_names.size());
  s.after_filters = static_cast<Index>(bundle.after_filters.size());
  s.sparsity = bundle.sparsity;
  const Matrix fused = fused_matrix(bundle.model, data.x_test);
  const Matrix concepts = concept_matrix(bundle.model, data.x_test);
  std::vector<Index> pf, pc;
  for (Index i = 0; i < fused.rows(); ++i) {
    pf.push_back(argmax(cbm::logits(bundle.model.head(), fused.row(i).transpose())));
    pc.push_back(argmax(cbm::logits(bundle.concept_only_head, concepts.row(i).transpose())));
  }
  s.fused_accuracy = accuracy(pf, data.y_test);
  s.concept_only_accuracy = accuracy(pc, data.y_test);
  return s;
}

inline SweepResult stability_sweep(const TrainedBundle& bundle, const SyntheticDataset& data, const SweepOptions& opt,
                                   const nlohmann::json& config_echo = nlohmann::json::object()) {
  if (opt.radii.empty() || opt.variants.empty()) throw ParameterError("stability_sweep: empty radius list or ablation grid");
  if (opt.repetitions < 1) throw ParameterError("stability_sweep: repetitions must be >= 1");
  const auto& model = bundle.model;
  if (model.input_dim() != data.x_test.cols()) throw ParameterError("stability_sweep: model and dataset dimensions differ");
  const std::int64_t n = std::min<std::int64_t>(opt.n_inputs, data.x_test.rows());
  if (n < 1) throw ParameterError("stability_sweep: no test inputs");
  const Index classes = model.classes();

  SweepResult result;
  auto& rep = result.report;
  rep.config = config_echo;
  rep.seed = opt.seed;
  rep.n_inputs = n;
  rep.k = opt.k;
  rep.beta = opt.beta;
  rep.model = summarize_model(bundle, data);
  for (std::int64_t r = 0; r < opt.repetitions; ++r) rep.repetition_seeds.push_back(repetition_seed(opt.seed, r));

  std::vector<Vector> inputs;
  std::vector<Index> labels;
  for (std::int64_t i = 0; i < n; ++i) {
    inputs.push_back(data.x_test.row(i).transpose());
    labels.push_back(data.y_test[static_cast<std::size_t>(i)]);
  }

  // Attacks depend only on (input, radius).
  const auto grad = perturb::gradient_model(model);
  std::vector<std::vector<Vector>> attacked(opt.radii.size());
  std::vector<double> linf_mean(opt.radii.size()), l2_mean(opt.radii.size());
  for (std::size_t ri = 0; ri < opt.radii.size(); ++ri) {
    const auto cfg = opt.attack.at(opt.radii[ri]);
    std::vector<double> linf, l2;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& x = inputs[static_cast<std::size_t>(i)];
      attacked[ri].push_back(perturb::pgd_attack(grad, x, labels[static_cast<std::size_t>(i)], cfg));
      linf.push_back(perturb::linf_distance(attacked[ri].back(), x));
      l2.push_back(perturb::l2_distance(attacked[ri].back(), x));
    }
    linf_mean[ri] = mean_std(linf).mean;
    l2_mean[ri] = mean_std(l2).mean;
  }

  for (const auto& variant : opt.variants) {
    const std::int64_t m = variant.samples(opt.smoothing.m);
    struct Acc {
      std::vector<double> accuracy, cfs, cpcs, overlap, sens, spec;
    };
    std::vector<Acc> acc(opt.radii.size());
    std::vector<double> clean_acc, r_topk, r_pred, r_final;
    std::vector<std::vector<double>> certified_hits(opt.radii.size());

    for (std::int64_t r = 0; r < opt.repetitions; ++r) {
      const std::uint64_t rs = rep.repetition_seeds[static_cast<std::size_t>(r)];
      std::vector<smoothing::SmoothedOutput> clean;
      std::vector<Index> clean_pred;
      std::vector<double> topk_radius;
      for (std::int64_t i = 0; i < n; ++i) {
        clean.push_back(smoothing::run_variant(model, inputs[static_cast<std::size_t>(i)], variant, opt.smoothing,
                                               bundle.prior, input_seed(rs, i)));
        clean_pred.push_back(voted_class(clean.back()));
        if (variant.smoothing) {
          auto cert = certify_output(clean.back(), opt.k, opt.beta, opt.delta, opt.alpha_grid);
          r_topk.push_back(cert.r_topk);
          r_pred.push_back(cert.r_pred);
          r_final.push_back(cert.r_final);
          topk_radius.push_back(cert.r_topk);
          result.certificates.push_back(
              {variant.name(), i, r, labels[static_cast<std::size_t>(i)], clean_pred.back(), cert});
        }
      }
      clean_acc.push_back(accuracy(clean_pred, labels));

      for (std::size_t ri = 0; ri < opt.radii.size(); ++ri) {
        std::vector<Index> pred;
        std::vector<double> cf, cp, ov;
        for (std::int64_t i = 0; i < n; ++i) {
          const auto& xp = attacked[ri][static_cast<std::size_t>(i)];
          const auto pert = smoothing::run_variant(model, xp, variant, opt.smoothing, bundle.prior, input_seed(rs, i));
          const auto& base = clean[static_cast<std::size_t>(i)];
          pred.push_back(voted_class(pert));
          cf.push_back(cfs(base.mean_concepts, pert.mean_concepts));
          cp.push_back(cpcs(base.mean_concepts, pert.mean_concepts));
          ov.push_back(top_k_overlap(base.mean_concepts.values, pert.mean_concepts.values, opt.k));
          if (variant.smoothing) {
            const double norm = perturb::l2_distance(xp, inputs[static_cast<std::size_t>(i)]);
            certified_hits[ri].push_back(norm <= topk_radius[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
          }
          if (r == 0 && i < opt.concept_weight_inputs) {
            for (Index j = 0; j < model.concept_count(); ++j) {
              const auto& name = model.concept_names()[static_cast<std::size_t>(j)];
              result.concept_weights.push_back({i, variant.name(), opt.radii[ri], "clean", name, base.mean_concepts[j]});
            }
            for (Index j = 0; j < model.concept_count(); ++j) {
              const auto& name = model.concept_names()[static_cast<std::size_t>(j)];
              result.concept_weights.push_back({i, variant.name(), opt.radii[ri], "perturbed", name, pert.mean_concepts[j]});
            }
          }
        }
        const auto ss = sensitivity_specificity(pred, labels, classes);
        acc[ri].accuracy.push_back(accuracy(pred, labels));
        acc[ri].cfs.push_back(mean_std(cf).mean);
        acc[ri].cpcs.push_back(mean_std(cp).mean);
        acc[ri].overlap.push_back(mean_std(ov).mean);
        if (ss.macro_sensitivity) acc[ri].sens.push_back(*ss.macro_sensitivity);
        if (ss.macro_specificity) acc[ri].spec.push_back(*ss.macro_specificity);
      }
    }

    for (std::size_t ri = 0; ri < opt.radii.size(); ++ri) {
      ReportRow row;
      row.variant = variant.name();
      row.denoising = variant.denoising;
      row.smoothing = variant.smoothing;
      row.rho = opt.radii[ri];
      row.sigma = variant.deterministic() ? 0.0 : opt.smoothing.sigma;
      row.m = m;
      row.clean_accuracy = mean_std(clean_acc).mean;
      const auto a = mean_std(acc[ri].accuracy);
      row.accuracy = a.mean;
      row.accuracy_std = a.std;
      row.sensitivity = detail::mean_of(acc[ri].sens);
      row.specificity = detail::mean_of(acc[ri].spec);
      const auto c = mean_std(acc[ri].cfs);
      row.cfs_mean = c.mean;
      row.cfs_std = c.std;
      const auto p = mean_std(acc[ri].cpcs);
      row.cpcs_mean = p.mean;
      row.cpcs_std = p.std;
      row.topk_overlap_mean = mean_std(acc[ri].overlap).mean;
      if (variant.smoothing) {
        row.r_topk_mean = detail::mean_of(r_topk);
        row.r_pred_mean = detail::mean_of(r_pred);
        row.r_final_mean = detail::mean_of(r_final);
        row.certified_fraction = detail::mean_of(certified_hits[ri]);
      }
      row.linf_mean = linf_mean[ri];
      row.l2_mean = l2_mean[ri];
      row.accuracy_by_rep = acc[ri].accuracy;
      row.cfs_by_rep = acc[ri].cfs;
      row.cpcs_by_rep = acc[ri].cpcs;
      rep.rows.push_back(std::move(row));
    }
  }
  return result;
}

}  // namespace svct::harness
