// Acceptance checks. Prints one [PASS]/[FAIL] line per criterion and exits non-zero if
// any check fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/simplex_grid.hpp"
#include "support/generators.hpp"
#include "svct/certification_oracle.hpp"
#include "svct/svct.hpp"

using namespace svct;
using namespace svct::harness;
using svct::testing::Gen;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

// Default toy experiment, built once and shared by the checks that need a trained model.
struct Trained {
  ExperimentConfig cfg;
  SyntheticDataset data;
  TrainedBundle bundle;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.data = synth_dataset(out.cfg.data);
    out.bundle = train_model(out.data, out.cfg.train);
    return out;
  }();
  return t;
}

struct TopKCase {
  SimplexVector w;
  Index k = 1;
  double beta = 1.0;
  double alpha = 2.0;
};

// 200 random instances with dimension <= 6, k <= 3, beta in {0.5, 0.67, 1}, alpha in {2, 4}.
std::vector<TopKCase> topk_cases() {
  Gen g(2024);
  const double betas[] = {0.5, 0.67, 1.0};
  const double alphas[] = {2.0, 4.0};
  std::vector<TopKCase> cases;
  while (cases.size() < 200) {
    TopKCase c;
    const Index dim = g.integer(2, 6);
    c.k = g.integer(1, std::min<Index>(3, dim - 1));
    c.beta = betas[g.integer(0, 2)];
    c.alpha = alphas[g.integer(0, 1)];
    if (c.k + certification::k0_of(c.beta, c.k) > dim) continue;
    c.w = SimplexVector(g.simplex(dim, cases.size() % 2 ? 1.0 : 0.5));
    cases.push_back(c);
  }
  return cases;
}

Outcome closed_form_vs_bruteforce() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& c : topk_cases()) {
    const double closed = certification::min_divergence_topk(c.w, c.k, c.beta, c.alpha);
    const double brute = certification::min_divergence_bruteforce(c.w, c.k, c.beta, c.alpha, 0.01);
    worst = std::max(worst, std::abs(closed - brute));
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.05 && secs <= 120.0, "max |closed - brute| = " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome minimizer_validity() {
  double worst = 0.0;
  int violating = 0;
  const auto cases = topk_cases();
  for (const auto& c : cases) {
    const auto q = certification::worst_case_q(c.w, c.k, c.beta, c.alpha);
    const double closed = certification::min_divergence_topk(c.w, c.k, c.beta, c.alpha);
    worst = std::max(worst, std::abs(renyi_divergence(c.w, q, c.alpha) - closed));
    violating += top_k_overlap(c.w.probs, q.probs, c.k) < c.beta ? 1 : 0;
  }
  const int n = static_cast<int>(cases.size());
  return {worst <= 1e-9 && violating == n,
          "max divergence error " + fmt(worst, 3) + ", overlap below beta in " + std::to_string(violating) + "/" +
              std::to_string(n)};
}

// True when some class other than `top` reaches q(top).
bool argmax_moves(const Vector& q, Index top) {
  for (Index j = 0; j < q.size(); ++j) {
    if (j != top && q(j) >= q(top)) return true;
  }
  return false;
}

// Verdict is on D(P || Q) with the threshold taken from P, as stated. The reversed
// divergence D(Q || P), which is what the certificate relies on (the Gaussian shift bound
// holds in both directions), is counted alongside for the record. A relative margin of
// 1e-12 keeps exact boundary ties (D equal to the threshold up to rounding) out of both.
Outcome prediction_threshold_soundness() {
  const auto t0 = Clock::now();
  const int steps = 50;
  std::vector<Vector> grid;
  oracle::for_each_simplex_point(3, steps, [&](const Vector& q) { grid.push_back(q); });
  long long below = 0, counterexamples = 0, below_reversed = 0, counterexamples_reversed = 0;
  std::string example;
  for (double alpha : {2.0, 8.0}) {
    for (const auto& p : grid) {
      const auto order = descending_order(p);
      const double gamma = certification::prediction_gamma_threshold(p(order[0]), p(order[1]), alpha) * (1.0 - 1e-12);
      if (gamma <= 0.0) continue;
      const Index top = order[0];
      for (const auto& q : grid) {
        if (q.minCoeff() <= 0.0) continue;  // D(P || Q) is infinite
        if (renyi_divergence(p, q, alpha) < gamma) {
          ++below;
          if (argmax_moves(q, top)) {
            if (++counterexamples > 0 && example.empty() && p.minCoeff() > 0.0) {
              std::ostringstream e;
              e << "e.g. alpha " << alpha << " P (" << p.transpose() << ") Q (" << q.transpose()
                << ") D " << fmt(renyi_divergence(p, q, alpha)) << " < " << fmt(gamma);
              example = e.str();
            }
          }
        }
        if (p.minCoeff() > 0.0 && renyi_divergence(q, p, alpha) < gamma) {
          ++below_reversed;
          counterexamples_reversed += argmax_moves(q, top) ? 1 : 0;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  std::string detail = "D(P||Q): " + std::to_string(counterexamples) + " counterexamples among " +
                       std::to_string(below) + " pairs under the threshold";
  if (!example.empty()) detail += ", " + example;
  detail += "; D(Q||P): " + std::to_string(counterexamples_reversed) + " of " + std::to_string(below_reversed) + "; " +
            fmt(secs, 3) + " s";
  return {counterexamples == 0 && secs <= 60.0, detail};
}

Outcome empirical_certificate_soundness() {
  const auto& t = trained();
  const auto& model = t.bundle.model;
  smoothing::SmoothingParams params;
  params.sigma = 8.0 / 255.0;
  params.m = 256;
  params.schedule = t.cfg.smoothing.schedule();
  const auto variant = smoothing::ablation_config(true, true);
  const Index k = 5;
  const double beta = 0.8;
  const std::uint64_t rep_seed = repetition_seed(t.cfg.smoothing.seed, 0);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  int pairs = 0;
  int stable = 0;
  int certified_inputs = 0;
  double radius_sum = 0.0;
  for (std::int64_t i = 0; i < 50; ++i) {
    const Vector x = t.data.x_test.row(i).transpose();
    const auto seed = input_seed(rep_seed, i);
    const auto clean = smoothing::run_variant(model, x, variant, params, t.bundle.prior, seed);
    const auto cert = certify_output(clean, k, beta, t.cfg.certify.delta, certification::default_alpha_grid());
    radius_sum += cert.r_topk;
    certified_inputs += cert.r_topk > 0.0 ? 1 : 0;
    for (int s = 0; s < 100; ++s) {
      Vector dir(x.size());
      for (Index j = 0; j < dir.size(); ++j) dir(j) = normal(rng);
      const Vector xp = x + 0.99 * cert.r_topk * dir.normalized();
      const auto pert = smoothing::run_variant(model, xp, variant, params, t.bundle.prior, seed);
      ++pairs;
      stable += top_k_overlap(clean.mean_concepts.values, pert.mean_concepts.values, k) >= beta ? 1 : 0;
    }
  }
  const double frac = static_cast<double>(stable) / pairs;
  return {frac >= 0.95, "fraction with V_k >= beta " + fmt(frac) + " over " + std::to_string(pairs) + " pairs; " +
                            std::to_string(certified_inputs) + "/50 inputs with r_topk > 0, mean r_topk " +
                            fmt(radius_sum / 50.0)};
}

Outcome dds_noise_model() {
  const auto& t = trained();
  const Vector x = t.data.x_test.row(0).transpose();
  const auto schedule = t.cfg.smoothing.schedule();
  const std::int64_t m = 100000;
  double worst_z = 0.0;
  for (double sigma : {8.0 / 255.0, 1.0}) {
    const auto step = smoothing::match_timestep(sigma, schedule);
    Vector sum = Vector::Zero(x.size());
    Vector sumsq = Vector::Zero(x.size());
    for (std::int64_t i = 0; i < m; ++i) {
      std::mt19937_64 rng(static_cast<std::uint64_t>(i) + 1);
      const Vector s = smoothing::diffuse(x, sigma, step, rng);
      sum += s;
      sumsq += s.cwiseProduct(s);
    }
    const double var_target = 1.0 - step.beta;
    for (Index j = 0; j < x.size(); ++j) {
      const double mean = sum(j) / m;
      const double var = (sumsq(j) - m * mean * mean) / (m - 1);
      const double se_mean = std::sqrt(var_target / m);
      const double se_var = var_target * std::sqrt(2.0 / (m - 1));
      worst_z = std::max(worst_z, std::abs(mean - std::sqrt(step.beta) * x(j)) / se_mean);
      worst_z = std::max(worst_z, std::abs(var - var_target) / se_var);
    }
  }
  return {worst_z <= 4.0, "largest deviation " + fmt(worst_z, 3) + " standard errors over 32 coordinates x 2 sigmas"};
}

Outcome denoiser_optimality() {
  auto spec = trained().cfg.data;
  spec.n_test = 10000;
  const auto data = synth_dataset(spec);
  const auto prior = smoothing::fit_gmm_prior(data.x_train, data.y_train, data.classes());
  const auto gmm = smoothing::make_denoiser({smoothing::DenoiserKind::gmm_posterior_mean, prior});
  const auto identity = smoothing::make_denoiser({smoothing::DenoiserKind::identity, {}});
  const smoothing::NoiseSchedule schedule;
  bool all = true;
  std::string detail;
  for (double sigma : {0.05, 0.1, 0.3, 1.0}) {
    double se_gmm = 0.0;
    double se_id = 0.0;
    for (Index i = 0; i < data.x_test.rows(); ++i) {
      const Vector x = data.x_test.row(i).transpose();
      const auto seed = static_cast<std::uint64_t>(i) * 7919 + 5;
      se_gmm += (smoothing::dds_denoise(x, sigma, gmm, schedule, seed) - x).squaredNorm();
      se_id += (smoothing::dds_denoise(x, sigma, identity, schedule, seed) - x).squaredNorm();
    }
    const double n = static_cast<double>(data.x_test.rows() * data.x_test.cols());
    all = all && se_gmm < se_id;
    detail += (detail.empty() ? "" : "; ") + std::string("sigma ") + fmt(sigma, 2) + ": " + fmt(se_gmm / n, 3) +
              " vs " + fmt(se_id / n, 3);
  }
  return {all, "per-coordinate MSE gmm vs identity, " + detail};
}

Outcome projection_recovery() {
  int recovered = 0;
  double lowest = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Gen g(5000 + seed);
    const Matrix f = g.normal_matrix(512, 8);
    const Matrix planted = g.normal_matrix(4, 8);
    const Matrix activations = f * planted.transpose();
    cbm::ProjectionOptions opt;
    opt.steps = 1000;
    opt.seed = seed;
    const auto out = cbm::learn_projection(f, activations, opt);
    lowest = std::min(lowest, out.similarities.minCoeff());
    recovered += out.similarities.minCoeff() >= 0.95 ? 1 : 0;
  }
  return {recovered >= 18, std::to_string(recovered) + "/20 seeds recover every concept, lowest similarity " + fmt(lowest)};
}

// Per-seed results for the two directional checks.
struct SeedRun {
  double fused_accuracy = 0.0;
  double concept_only_accuracy = 0.0;
  std::map<std::string, double> cfs, cpcs;
};

const std::vector<SeedRun>& seed_runs() {
  static const std::vector<SeedRun> runs = [] {
    std::vector<SeedRun> out;
    for (int s = 0; s < 20; ++s) {
      ExperimentConfig cfg;
      cfg.reseed(static_cast<std::uint64_t>(100 + 10 * s));
      cfg.attack.radii = {8.0 / 255.0};
      cfg.report.repetitions = 2;
      cfg.report.concept_weight_inputs = 0;
      const auto data = synth_dataset(cfg.data);
      const auto bundle = train_model(data, cfg.train);
      const auto result = stability_sweep(bundle, data, sweep_options(cfg));
      SeedRun run;
      run.fused_accuracy = result.report.model.fused_accuracy;
      run.concept_only_accuracy = result.report.model.concept_only_accuracy;
      for (const auto& row : result.report.rows) {
        run.cfs[row.variant] = row.cfs_mean;
        run.cpcs[row.variant] = row.cpcs_mean;
      }
      out.push_back(std::move(run));
    }
    return out;
  }();
  return runs;
}

Outcome fused_beats_concept_only() {
  int wins = 0, losses = 0;
  double fused = 0.0, concept_only = 0.0;
  for (const auto& r : seed_runs()) {
    fused += r.fused_accuracy / 20.0;
    concept_only += r.concept_only_accuracy / 20.0;
    wins += r.fused_accuracy > r.concept_only_accuracy ? 1 : 0;
    losses += r.fused_accuracy < r.concept_only_accuracy ? 1 : 0;
  }
  const double p = sign_test_p_value(wins, losses);
  return {fused >= concept_only && p < 0.05, "mean accuracy fused " + fmt(fused) + " vs concept-only " + fmt(concept_only) +
                                            ", wins/losses " + std::to_string(wins) + "/" + std::to_string(losses) +
                                            ", sign test p = " + fmt(p, 3)};
}

Outcome ablation_ordering() {
  std::map<std::string, double> cfs, cpcs;
  for (const auto& r : seed_runs()) {
    for (const auto& [v, x] : r.cfs) cfs[v] += x / 20.0;
    for (const auto& [v, x] : r.cpcs) cpcs[v] += x / 20.0;
  }
  const bool headline = cfs["svct"] < cfs["vct"] && cpcs["svct"] > cpcs["vct"];
  const double cfs_one_best = std::min(cfs["smooth_only"], cfs["denoise_only"]);
  const double cfs_one_worst = std::max(cfs["smooth_only"], cfs["denoise_only"]);
  const double cpcs_one_best = std::max(cpcs["smooth_only"], cpcs["denoise_only"]);
  const double cpcs_one_worst = std::min(cpcs["smooth_only"], cpcs["denoise_only"]);
  const bool ordering = cfs["svct"] < cfs_one_best && cfs_one_worst < cfs["vct"] && cpcs["svct"] > cpcs_one_best &&
                        cpcs_one_worst > cpcs["vct"];
  std::string detail = "mean CFS/CPCS";
  for (const char* v : {"vct", "smooth_only", "denoise_only", "svct"}) {
    detail += std::string(" ") + v + " " + fmt(cfs[v]) + "/" + fmt(cpcs[v]);
  }
  return {headline && ordering, detail};
}

Outcome sparsity_path() {
  const auto& t = trained();
  const Matrix fused = fused_matrix(t.bundle.model, t.data.x_train);
  std::vector<Index> nonzeros;
  for (double lam : {0.0, 0.0007, 0.007, 0.07, 0.7}) {
    nonzeros.push_back(cbm::train_final_layer(fused, t.data.y_train, t.data.classes(), {lam, 1000}).weights.nonzeros());
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < nonzeros.size(); ++i) decreasing = decreasing && nonzeros[i] <= nonzeros[i - 1];
  const Index at_large = cbm::train_final_layer(fused, t.data.y_train, t.data.classes(), {100.0, 1000}).weights.nonzeros();
  std::string detail = "nonzeros";
  for (Index n : nonzeros) detail += " " + std::to_string(n);
  detail += "; lambda 100 leaves " + std::to_string(at_large);
  return {decreasing && at_large == 0, detail};
}

Outcome metric_identities() {
  Gen g(11);
  const int n = 10000;
  double worst = 0.0;
  int overlap_failures = 0;
  for (int i = 0; i < n; ++i) {
    const Index dim = g.integer(2, 40);
    Vector c = g.normal_vector(dim, g.uniform(0.01, 10.0));
    if (c.norm() == 0.0) c(0) = 1.0;
    const double scale = std::exp(g.uniform(-5.0, 5.0));
    worst = std::max(worst, std::abs(cfs(ConceptVector(c), ConceptVector(c))));
    worst = std::max(worst, std::abs(cpcs(ConceptVector(c), ConceptVector(Vector(scale * c))) - 1.0));
    const Vector v = i % 2 ? c : g.tied_vector(dim, 3);
    overlap_failures += top_k_overlap(v, v, g.integer(1, dim)) == 1.0 ? 0 : 1;
    const Vector p = g.simplex(dim, g.uniform(0.1, 3.0));
    worst = std::max(worst, std::abs(renyi_divergence(p, p, g.uniform(1.01, 64.0))));
  }
  return {worst <= 1e-9 && overlap_failures == 0,
          std::to_string(n) + " instances per identity, max error " + fmt(worst, 3) + ", overlap failures " +
              std::to_string(overlap_failures)};
}

Outcome pgd_contract() {
  const auto& t = trained();
  const auto& model = t.bundle.model;
  const auto grad = perturb::gradient_model(model);
  int attacks = 0, feasible = 0;
  for (double rho : t.cfg.attack.radii) {
    const auto cfg = t.cfg.attack.at(rho);
    for (Index i = 0; i < t.data.x_test.rows(); ++i) {
      const Vector x = t.data.x_test.row(i).transpose();
      bool ok = true;
      perturb::pgd_attack(grad, x, t.data.y_test[static_cast<std::size_t>(i)], cfg, [&](const Vector& it) {
        ok = ok && perturb::linf_distance(it, x) <= rho * (1.0 + 1e-12) && it.minCoeff() >= 0.0 && it.maxCoeff() <= 1.0;
      });
      ++attacks;
      feasible += ok ? 1 : 0;
    }
  }

  Gen g(12);
  int exact = 0;
  const int linear_cases = 100;
  for (int c = 0; c < linear_cases; ++c) {
    const Index dim = g.integer(1, 32);
    const Vector w = g.normal_vector(dim);
    const Vector x = g.uniform_vector(dim, 0.2, 0.8);
    const double rho = g.uniform(0.001, 0.1);
    const perturb::GradientModel linear{[w](const Vector& v, Index) { return w.dot(v); },
                                        [w](const Vector&, Index) { return w; }};
    perturb::AttackConfig cfg;
    cfg.rho = rho;
    cfg.step = rho / 4.0;
    cfg.iters = 10;
    const Vector out = perturb::pgd_attack(linear, x, 0, cfg);
    Vector expected(dim);
    for (Index j = 0; j < dim; ++j) expected(j) = w(j) > 0.0 ? x(j) + rho : (w(j) < 0.0 ? x(j) - rho : x(j));
    exact += out == expected ? 1 : 0;
  }

  double worst_grad = 0.0;
  for (Index i = 0; i < 50; ++i) {
    const Vector x = t.data.x_test.row(i).transpose();
    const Index y = t.data.y_test[static_cast<std::size_t>(i)];
    worst_grad = std::max(worst_grad, perturb::grad_check([&](const Vector& v) { return model.loss(v, y); },
                                                          [&](const Vector& v) { return model.input_gradient(v, y); }, x,
                                                          1e-6));
  }
  return {feasible == attacks && exact == linear_cases && worst_grad <= 1e-5,
          "feasible " + std::to_string(feasible) + "/" + std::to_string(attacks) + ", linear closed form " +
              std::to_string(exact) + "/" + std::to_string(linear_cases) + ", gradient relative error " +
              fmt(worst_grad, 3)};
}

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_reproducibility() {
  const fs::path root = fs::temp_directory_path() / "svct_acceptance_sweep";
  fs::remove_all(root);
  const std::string config = std::string(SVCT_SOURCE_DIR) + "/configs/default.toml";
  double slowest = 0.0;
  for (const char* run : {"a", "b"}) {
    const auto t0 = Clock::now();
    const std::string cmd = std::string(SVCT_CLI_PATH) + " --config " + config + " --seed 1234 --out-dir " +
                            (root / run).string() + " sweep > " + (root.string() + "_" + run + ".log") + " 2>&1";
    if (run_command(cmd) != 0) return {false, std::string("sweep run ") + run + " failed, see " + root.string() + "_" + run + ".log"};
    slowest = std::max(slowest, seconds_since(t0));
  }
  int identical = 0;
  const char* files[] = {"report.csv", "report.json", "concept_weights.csv", "certificates.json"};
  for (const char* f : files) identical += read_text(root / "a" / f) == read_text(root / "b" / f) ? 1 : 0;
  fs::remove_all(root);
  return {identical == 4 && slowest <= 600.0,
          std::to_string(identical) + "/4 report files byte-identical, slowest default sweep " + fmt(slowest, 3) + " s"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
      {"closed-form top-k divergence matches brute force", closed_form_vs_bruteforce},
      {"worst-case q attains the minimum and breaks the overlap", minimizer_validity},
      {"prediction threshold is sound on the 3-class grid", prediction_threshold_soundness},
      {"top-k certificate holds under random l2 perturbations", empirical_certificate_soundness},
      {"diffusion noise model moments", dds_noise_model},
      {"posterior-mean denoiser beats identity", denoiser_optimality},
      {"projection recovers planted concepts", projection_recovery},
      {"fused head beats concept-only head", fused_beats_concept_only},
      {"smoothing and denoising stabilize concepts", ablation_ordering},
      {"sparsity decreases along the lambda path", sparsity_path},
      {"metric identities", metric_identities},
      {"PGD contract", pgd_contract},
      {"CLI sweep is reproducible and fast", cli_reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = checks[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << i + 1 << " " << checks[i].first << " (" << o.detail << "; "
              << fmt(seconds_since(t0), 3) << " s)" << std::endl;
  }
  std::cout << checks.size() - failures << "/" << checks.size() << " acceptance checks passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
