#pragma once

// Experiment configuration: six tables, every key optional with a default, unknown keys
// rejected. `to_json` gives the fully resolved config echoed into every output.

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/certification.hpp"
#include "svct/errors.hpp"
#include "svct/harness/pipeline.hpp"
#include "svct/harness/synthetic.hpp"
#include "svct/harness/toml_lite.hpp"
#include "svct/perturb.hpp"
#include "svct/smoothing.hpp"

namespace svct::harness {

struct SmoothingSection {
  double sigma = 8.0 / 255.0;
  std::int64_t m = 64;
  std::string denoiser = "gmm_posterior_mean";
  double beta_first = 0.9999;
  double beta_last = 0.02;
  std::int64_t schedule_steps = 1000;
  std::uint64_t seed = 1234;

  smoothing::NoiseSchedule schedule() const {
    return smoothing::NoiseSchedule::linear(beta_first, beta_last, static_cast<std::size_t>(schedule_steps));
  }
};

struct AttackSection {
  std::vector<double> radii{6.0 / 255.0, 8.0 / 255.0, 10.0 / 255.0};
  double step = 2.0 / 255.0;
  std::int64_t iters = 10;
  std::string norm = "linf";

  perturb::AttackConfig at(double rho) const {
    perturb::AttackConfig c;
    c.rho = rho;
    c.step = step;
    c.iters = static_cast<std::size_t>(iters);
    c.norm = perturb::norm_from_string(norm);
    c.validate();
    return c;
  }
};

struct CertifySection {
  std::int64_t k = 5;
  double beta = 0.8;
  double delta = 0.001;
  std::vector<double> alpha_grid = certification::default_alpha_grid();
  std::int64_t n_inputs = 50;
  std::int64_t m = 256;
};

struct ReportSection {
  std::int64_t repetitions = 10;
  std::int64_t n_inputs = 200;
  std::int64_t concept_weight_inputs = 3;
};

struct ExperimentConfig {
  SyntheticSpec data;
  TrainConfig train;
  SmoothingSection smoothing;
  AttackSection attack;
  CertifySection certify;
  ReportSection report;

  void validate() const {
    data.validate();
    if (train.proj_lr <= 0.0 || train.lam < 0.0) throw ConfigError("[train] proj_lr must be > 0 and lam >= 0");
    if (!(smoothing.sigma > 0.0) || smoothing.m < 1) throw ConfigError("[smoothing] sigma must be > 0 and m >= 1");
    smoothing::denoiser_kind_from_string(smoothing.denoiser);
    smoothing.schedule();
    for (double r : attack.radii) attack.at(r);
    if (certify.k < 1 || !(certify.beta > 0.0 && certify.beta <= 1.0)) throw ConfigError("[certify] need k >= 1, beta in (0, 1]");
    if (!(certify.delta > 0.0 && certify.delta < 1.0)) throw ConfigError("[certify] delta must lie in (0, 1)");
    if (certify.alpha_grid.empty()) throw ConfigError("[certify] alpha_grid is empty");
    for (double a : certify.alpha_grid) {
      if (!(a > 1.0)) throw ConfigError("[certify] alpha_grid entries must be > 1");
    }
    if (certify.n_inputs < 1 || certify.m < 1) throw ConfigError("[certify] n_inputs and m must be >= 1");
    if (report.repetitions < 1 || report.n_inputs < 1 || report.concept_weight_inputs < 0) {
      throw ConfigError("[report] repetitions and n_inputs must be >= 1");
    }
  }

  /// Replaces the data, training and smoothing seeds with seed, seed + 1, seed + 2.
  void reseed(std::uint64_t seed) {
    data.seed = seed;
    train.seed = seed + 1;
    smoothing.seed = seed + 2;
  }
};

namespace detail {

class TableReader {
 public:
  TableReader(const nlohmann::json& root, std::string name) : name_(std::move(name)) {
    if (!root.contains(name_)) return;
    table_ = &root.at(name_);
    if (!table_->is_object()) throw ConfigError("[" + name_ + "] must be a table");
  }

  template <typename T>
  void read(const std::string& key, T& field) {
    used_.insert(key);
    if (!table_ || !table_->contains(key)) return;
    const auto& v = table_->at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected a boolean");
        field = v.get<bool>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
        field = v.get<std::string>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
        field = v.get<double>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("expected an integer");
        const auto raw = v.get<long long>();
        if (std::is_unsigned_v<T> && raw < 0) throw ConfigError("expected a non-negative integer");
        field = static_cast<T>(raw);
      } else {
        if (!v.is_array()) throw ConfigError("expected an array of numbers");
        field.clear();
        for (const auto& e : v) {
          if (!e.is_number()) throw ConfigError("expected an array of numbers");
          field.push_back(e.get<double>());
        }
      }
    } catch (const ConfigError& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    }
  }

  void finish() const {
    if (!table_) return;
    for (const auto& [key, value] : table_->items()) {
      if (!used_.count(key)) throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
    }
  }

 private:
  std::string name_;
  const nlohmann::json* table_ = nullptr;
  std::set<std::string> used_;
};

template <typename F>
void with_table(const nlohmann::json& root, const std::string& name, F&& body) {
  TableReader r(root, name);
  body(r);
  r.finish();
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& root) {
  if (!root.is_object()) throw ConfigError("config root must be a table");
  static const std::set<std::string> tables{"data", "train", "smoothing", "attack", "certify", "report"};
  for (const auto& [key, value] : root.items()) {
    if (!tables.count(key)) throw ConfigError("unknown config table or top-level key '" + key + "'");
  }
  ExperimentConfig c;
  detail::with_table(root, "data", [&](auto& r) {
    auto& d = c.data;
    r.read("seed", d.seed);
    r.read("d_input", d.d_input);
    r.read("d0", d.d0);
    r.read("m_true", d.m_true);
    r.read("classes", d.classes);
    r.read("n_train", d.n_train);
    r.read("n_test", d.n_test);
    r.read("input_std", d.input_std);
    r.read("class_separation", d.class_separation);
    r.read("aux_separation", d.aux_separation);
    r.read("backbone_gain", d.backbone_gain);
    r.read("feature_offset", d.feature_offset);
    r.read("concept_class_weight", d.concept_class_weight);
    r.read("embedding_noise", d.embedding_noise);
    r.read("background_weight", d.background_weight);
    r.read("distractors", d.distractors);
  });
  detail::with_table(root, "train", [&](auto& r) {
    auto& t = c.train;
    r.read("seed", t.seed);
    r.read("proj_steps", t.proj_steps);
    r.read("proj_lr", t.proj_lr);
    r.read("lam", t.lam);
    r.read("n_iters", t.n_iters);
    r.read("clip_cutoff", t.clip_cutoff);
    r.read("interpretability_cutoff", t.interpretability_cutoff);
    r.read("class_similarity_cutoff", t.class_similarity_cutoff);
    r.read("duplicate_cutoff", t.duplicate_cutoff);
    r.read("max_name_length", t.max_name_length);
  });
  detail::with_table(root, "smoothing", [&](auto& r) {
    auto& s = c.smoothing;
    r.read("sigma", s.sigma);
    r.read("m", s.m);
    r.read("denoiser", s.denoiser);
    r.read("beta_first", s.beta_first);
    r.read("beta_last", s.beta_last);
    r.read("schedule_steps", s.schedule_steps);
    r.read("seed", s.seed);
  });
  detail::with_table(root, "attack", [&](auto& r) {
    auto& a = c.attack;
    r.read("radii", a.radii);
    r.read("step", a.step);
    r.read("iters", a.iters);
    r.read("norm", a.norm);
  });
  detail::with_table(root, "certify", [&](auto& r) {
    auto& k = c.certify;
    r.read("k", k.k);
    r.read("beta", k.beta);
    r.read("delta", k.delta);
    r.read("alpha_grid", k.alpha_grid);
    r.read("n_inputs", k.n_inputs);
    r.read("m", k.m);
  });
  detail::with_table(root, "report", [&](auto& r) {
    auto& p = c.report;
    r.read("repetitions", p.repetitions);
    r.read("n_inputs", p.n_inputs);
    r.read("concept_weight_inputs", p.concept_weight_inputs);
  });
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) { return config_from_json(toml::parse_file(path)); }

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& d = c.data;
  const auto& t = c.train;
  const auto& s = c.smoothing;
  const auto& a = c.attack;
  const auto& k = c.certify;
  const auto& p = c.report;
  return {
      {"data",
       {{"seed", d.seed},
        {"d_input", d.d_input},
        {"d0", d.d0},
        {"m_true", d.m_true},
        {"classes", d.classes},
        {"n_train", d.n_train},
        {"n_test", d.n_test},
        {"input_std", d.input_std},
        {"class_separation", d.class_separation},
        {"aux_separation", d.aux_separation},
        {"backbone_gain", d.backbone_gain},
        {"feature_offset", d.feature_offset},
        {"concept_class_weight", d.concept_class_weight},
        {"embedding_noise", d.embedding_noise},
        {"background_weight", d.background_weight},
        {"distractors", d.distractors}}},
      {"train",
       {{"seed", t.seed},
        {"proj_steps", t.proj_steps},
        {"proj_lr", t.proj_lr},
        {"lam", t.lam},
        {"n_iters", t.n_iters},
        {"clip_cutoff", t.clip_cutoff},
        {"interpretability_cutoff", t.interpretability_cutoff},
        {"class_similarity_cutoff", t.class_similarity_cutoff},
        {"duplicate_cutoff", t.duplicate_cutoff},
        {"max_name_length", t.max_name_length}}},
      {"smoothing",
       {{"sigma", s.sigma},
        {"m", s.m},
        {"denoiser", s.denoiser},
        {"beta_first", s.beta_first},
        {"beta_last", s.beta_last},
        {"schedule_steps", s.schedule_steps},
        {"seed", s.seed}}},
      {"attack", {{"radii", a.radii}, {"step", a.step}, {"iters", a.iters}, {"norm", a.norm}}},
      {"certify",
       {{"k", k.k}, {"beta", k.beta}, {"delta", k.delta}, {"alpha_grid", k.alpha_grid}, {"n_inputs", k.n_inputs}, {"m", k.m}}},
      {"report",
       {{"repetitions", p.repetitions}, {"n_inputs", p.n_inputs}, {"concept_weight_inputs", p.concept_weight_inputs}}},
  };
}

}  // namespace svct::harness
