// Command-line front end: synth, train, certify, attack, sweep and intervene.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "svct/svct.hpp"

namespace fs = std::filesystem;
using namespace svct;
using namespace svct::harness;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string data;
  std::string model;
};

ExperimentConfig resolve_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.reseed(*g.seed);
  cfg.validate();
  return cfg;
}

SyntheticDataset obtain_dataset(const Globals& g, const ExperimentConfig& cfg) {
  return g.data.empty() ? synth_dataset(cfg.data) : load_dataset(g.data);
}

TrainedBundle obtain_bundle(const Globals& g, const ExperimentConfig& cfg, const SyntheticDataset& data) {
  return g.model.empty() ? train_model(data, cfg.train) : load_bundle(g.model);
}

nlohmann::json distribution_json(const PredictionDistribution& p) {
  return {{"probabilities", to_std(p.probs)}, {"top_class", static_cast<long long>(p.top_class())}};
}

std::pair<Index, double> parse_edit(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw CLI::ValidationError("--edit", "expected j=v, got '" + text + "'");
  try {
    std::size_t used = 0;
    const long long j = std::stoll(text.substr(0, eq), &used);
    if (used != eq) throw std::invalid_argument("index");
    const std::string rhs = text.substr(eq + 1);
    const double v = std::stod(rhs, &used);
    if (used != rhs.size()) throw std::invalid_argument("value");
    return {static_cast<Index>(j), v};
  } catch (const std::logic_error&) {
    throw CLI::ValidationError("--edit", "expected j=v with integer j and real v, got '" + text + "'");
  }
}

int run_synth(const Globals& g) {
  const auto cfg = resolve_config(g);
  const auto data = synth_dataset(cfg.data);
  const fs::path out = fs::path(g.out_dir) / "dataset.json";
  save_dataset(out, data);
  write_json(fs::path(g.out_dir) / "config.json", to_json(cfg));
  std::cout << "wrote " << out.string() << " (" << data.x_train.rows() << " train, " << data.x_test.rows()
            << " test, " << data.candidates.size() << " candidate concepts)\n";
  return 0;
}

int run_train(const Globals& g) {
  const auto cfg = resolve_config(g);
  const auto data = obtain_dataset(g, cfg);
  const auto bundle = train_model(data, cfg.train);
  const fs::path out = fs::path(g.out_dir) / "model.json";
  save_bundle(out, bundle);
  write_json(fs::path(g.out_dir) / "config.json", to_json(cfg));
  const auto summary = summarize_model(bundle, data);
  std::cout << "wrote " << out.string() << ": " << summary.concepts << " concepts of " << summary.candidates
            << " candidates, sparsity " << summary.sparsity << ", test accuracy " << summary.fused_accuracy
            << " (concept-only " << summary.concept_only_accuracy << ")\n";
  return 0;
}

int run_certify(const Globals& g, std::optional<std::int64_t> n_inputs) {
  const auto cfg = resolve_config(g);
  const auto data = obtain_dataset(g, cfg);
  const auto bundle = obtain_bundle(g, cfg, data);
  smoothing::SmoothingParams params{cfg.smoothing.sigma, cfg.certify.m, cfg.smoothing.schedule(),
                                    smoothing::denoiser_kind_from_string(cfg.smoothing.denoiser)};
  const std::int64_t n = std::min<std::int64_t>(n_inputs.value_or(cfg.certify.n_inputs), data.x_test.rows());
  const std::uint64_t rs = repetition_seed(cfg.smoothing.seed, 0);
  nlohmann::json certs = nlohmann::json::array();
  double topk_sum = 0.0;
  double final_sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const Vector x = data.x_test.row(i).transpose();
    const auto out = smoothing::run_variant(bundle.model, x, smoothing::ablation_config(true, true), params,
                                            bundle.prior, input_seed(rs, i));
    const auto cert = certify_output(out, static_cast<Index>(cfg.certify.k), cfg.certify.beta, cfg.certify.delta,
                                     cfg.certify.alpha_grid);
    topk_sum += cert.r_topk;
    final_sum += cert.r_final;
    certs.push_back({{"input", i},
                     {"label", static_cast<long long>(data.y_test[static_cast<std::size_t>(i)])},
                     {"top_class", static_cast<long long>(voted_class(out))},
                     {"certificate", cert}});
  }
  const fs::path path = fs::path(g.out_dir) / "certificates.json";
  write_json(path, {{"config", to_json(cfg)}, {"certificates", certs}});
  std::cout << "wrote " << path.string() << ": " << n << " inputs, mean r_topk " << topk_sum / static_cast<double>(n)
            << ", mean r_final " << final_sum / static_cast<double>(n) << "\n";
  return 0;
}

int run_attack(const Globals& g, std::optional<double> rho) {
  const auto cfg = resolve_config(g);
  const auto data = obtain_dataset(g, cfg);
  const auto bundle = obtain_bundle(g, cfg, data);
  const auto grad = perturb::gradient_model(bundle.model);
  const std::vector<double> radii = rho ? std::vector<double>{*rho} : cfg.attack.radii;
  nlohmann::json sets = nlohmann::json::array();
  for (double r : radii) {
    const auto attack = cfg.attack.at(r);
    Matrix adv(data.x_test.rows(), data.x_test.cols());
    nlohmann::json linf = nlohmann::json::array();
    nlohmann::json l2 = nlohmann::json::array();
    for (Index i = 0; i < data.x_test.rows(); ++i) {
      const Vector x = data.x_test.row(i).transpose();
      const Vector xp = perturb::pgd_attack(grad, x, data.y_test[static_cast<std::size_t>(i)], attack);
      adv.row(i) = xp.transpose();
      linf.push_back(perturb::linf_distance(xp, x));
      l2.push_back(perturb::l2_distance(xp, x));
    }
    sets.push_back({{"rho", r}, {"norm", cfg.attack.norm}, {"inputs", matrix_json(adv)}, {"linf", linf}, {"l2", l2}});
  }
  const fs::path path = fs::path(g.out_dir) / "attacked.json";
  write_json(path, {{"config", to_json(cfg)}, {"labels", labels_json(data.y_test)}, {"sets", sets}});
  std::cout << "wrote " << path.string() << ": " << radii.size() << " radius setting(s) x " << data.x_test.rows()
            << " inputs\n";
  return 0;
}

int run_sweep(const Globals& g) {
  const auto start = std::chrono::steady_clock::now();
  const auto cfg = resolve_config(g);
  const auto data = obtain_dataset(g, cfg);
  const auto bundle = obtain_bundle(g, cfg, data);
  const auto trained = std::chrono::steady_clock::now();
  const auto result = stability_sweep(bundle, data, sweep_options(cfg), to_json(cfg));
  const auto done = std::chrono::steady_clock::now();
  const auto paths = write_report(result, g.out_dir);
  const auto seconds = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
  write_json(fs::path(g.out_dir) / "timing.json",
             {{"setup_seconds", seconds(start, trained)}, {"sweep_seconds", seconds(trained, done)},
              {"total_seconds", seconds(start, std::chrono::steady_clock::now())}});
  for (const auto& p : paths) std::cout << "wrote " << p.string() << "\n";
  for (const auto& row : result.report.rows) {
    std::cout << row.variant << " rho=" << row.rho << " acc=" << row.accuracy << " cfs=" << row.cfs_mean
              << " cpcs=" << row.cpcs_mean << "\n";
  }
  return 0;
}

int run_intervene(const Globals& g, std::int64_t index, const std::vector<std::string>& edit_texts) {
  const auto cfg = resolve_config(g);
  const auto data = obtain_dataset(g, cfg);
  const auto bundle = obtain_bundle(g, cfg, data);
  if (index < 0 || index >= data.x_test.rows()) {
    throw CLI::ValidationError("--input-index", std::to_string(index) + " is outside [0, " +
                                                    std::to_string(data.x_test.rows()) + ")");
  }
  std::vector<std::pair<Index, double>> edits;
  for (const auto& t : edit_texts) edits.push_back(parse_edit(t));
  const Vector x = data.x_test.row(index).transpose();
  const auto concepts = bundle.model.concepts(x);
  const auto edited = cbm::intervene(concepts, edits);
  nlohmann::json applied = nlohmann::json::array();
  for (const auto& [j, v] : edits) {
    applied.push_back({{"concept", static_cast<long long>(j)},
                       {"name", bundle.model.concept_names()[static_cast<std::size_t>(j)]},
                       {"from", concepts[j]},
                       {"to", v}});
  }
  const nlohmann::json out{{"input_index", index},
                           {"label", static_cast<long long>(data.y_test[static_cast<std::size_t>(index)])},
                           {"edits", applied},
                           {"before", distribution_json(bundle.model.predict_with_concepts(x, concepts))},
                           {"after", distribution_json(bundle.model.predict_with_concepts(x, edited))}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Concept-bottleneck stability toolkit: synthetic data, training, smoothing, attacks and certificates"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "TOML experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "sets the data, train and smoothing seeds to S, S+1, S+2");
  app.add_option("--out-dir", g.out_dir, "directory for output files")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  auto* train = app.add_subcommand("train", "learn the concept projection and final layer");
  auto* certify = app.add_subcommand("certify", "certified radii for test inputs");
  auto* attack = app.add_subcommand("attack", "PGD-perturbed copies of the test set");
  auto* sweep = app.add_subcommand("sweep", "full stability sweep and report files");
  auto* intervene = app.add_subcommand("intervene", "edit concepts of one input and compare predictions");
  for (auto* sub : {train, certify, attack, sweep, intervene}) {
    sub->add_option("--data", g.data, "dataset JSON (synthesized from the config when absent)")->check(CLI::ExistingFile);
  }
  for (auto* sub : {certify, attack, sweep, intervene}) {
    sub->add_option("--model", g.model, "model bundle JSON (trained from the config when absent)")->check(CLI::ExistingFile);
  }
  std::optional<std::int64_t> n_inputs;
  certify->add_option("--n-inputs", n_inputs, "number of test inputs to certify")->check(CLI::PositiveNumber);
  std::optional<double> rho;
  attack->add_option("--rho", rho, "single attack radius (default: the configured radii)")->check(CLI::NonNegativeNumber);
  std::int64_t input_index = 0;
  std::vector<std::string> edits;
  intervene->add_option("--input-index", input_index, "test input to edit")->required();
  intervene->add_option("--edit", edits, "concept edit j=v (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return run_synth(g);
    if (*train) return run_train(g);
    if (*certify) return run_certify(g, n_inputs);
    if (*attack) return run_attack(g, rho);
    if (*sweep) return run_sweep(g);
    if (*intervene) return run_intervene(g, input_index, edits);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
