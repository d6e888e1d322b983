#pragma once

// Report serialization: report.csv (one row per condition), report.json (full nested
// report with the config echo), concept_weights.csv (long format, clean vs perturbed)
// and certificates.json. Wall-clock time goes to timing.json so the reports themselves
// stay byte-identical across runs.

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svct/errors.hpp"
#include "svct/harness/io.hpp"
#include "svct/harness/sweep.hpp"

namespace svct::harness {

namespace detail {

inline nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline std::optional<double> optional_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline std::string optional_csv(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

}  // namespace detail

inline nlohmann::json row_json(const ReportRow& r) {
  return {{"variant", r.variant},
          {"denoising", r.denoising},
          {"smoothing", r.smoothing},
          {"rho", r.rho},
          {"sigma", r.sigma},
          {"m", r.m},
          {"clean_accuracy", r.clean_accuracy},
          {"accuracy", r.accuracy},
          {"accuracy_std", r.accuracy_std},
          {"sensitivity", detail::optional_json(r.sensitivity)},
          {"specificity", detail::optional_json(r.specificity)},
          {"cfs_mean", r.cfs_mean},
          {"cfs_std", r.cfs_std},
          {"cpcs_mean", r.cpcs_mean},
          {"cpcs_std", r.cpcs_std},
          {"topk_overlap_mean", r.topk_overlap_mean},
          {"r_topk_mean", detail::optional_json(r.r_topk_mean)},
          {"r_pred_mean", detail::optional_json(r.r_pred_mean)},
          {"r_final_mean", detail::optional_json(r.r_final_mean)},
          {"certified_fraction", detail::optional_json(r.certified_fraction)},
          {"linf_mean", r.linf_mean},
          {"l2_mean", r.l2_mean},
          {"accuracy_by_rep", r.accuracy_by_rep},
          {"cfs_by_rep", r.cfs_by_rep},
          {"cpcs_by_rep", r.cpcs_by_rep}};
}

inline ReportRow row_from_json(const nlohmann::json& j) {
  ReportRow r;
  j.at("variant").get_to(r.variant);
  j.at("denoising").get_to(r.denoising);
  j.at("smoothing").get_to(r.smoothing);
  j.at("rho").get_to(r.rho);
  j.at("sigma").get_to(r.sigma);
  j.at("m").get_to(r.m);
  j.at("clean_accuracy").get_to(r.clean_accuracy);
  j.at("accuracy").get_to(r.accuracy);
  j.at("accuracy_std").get_to(r.accuracy_std);
  r.sensitivity = detail::optional_from_json(j.at("sensitivity"));
  r.specificity = detail::optional_from_json(j.at("specificity"));
  j.at("cfs_mean").get_to(r.cfs_mean);
  j.at("cfs_std").get_to(r.cfs_std);
  j.at("cpcs_mean").get_to(r.cpcs_mean);
  j.at("cpcs_std").get_to(r.cpcs_std);
  j.at("topk_overlap_mean").get_to(r.topk_overlap_mean);
  r.r_topk_mean = detail::optional_from_json(j.at("r_topk_mean"));
  r.r_pred_mean = detail::optional_from_json(j.at("r_pred_mean"));
  r.r_final_mean = detail::optional_from_json(j.at("r_final_mean"));
  r.certified_fraction = detail::optional_from_json(j.at("certified_fraction"));
  j.at("linf_mean").get_to(r.linf_mean);
  j.at("l2_mean").get_to(r.l2_mean);
  j.at("accuracy_by_rep").get_to(r.accuracy_by_rep);
  j.at("cfs_by_rep").get_to(r.cfs_by_rep);
  j.at("cpcs_by_rep").get_to(r.cpcs_by_rep);
  return r;
}

inline nlohmann::json report_json(const ExperimentReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back(row_json(row));
  return {{"config", r.config},
          {"baseline", r.baseline},
          {"seed", r.seed},
          {"repetition_seeds", r.repetition_seeds},
          {"n_inputs", r.n_inputs},
          {"k", static_cast<long long>(r.k)},
          {"beta", r.beta},
          {"model",
           {{"concepts", static_cast<long long>(r.model.concepts)},
            {"candidates", static_cast<long long>(r.model.candidates)},
            {"after_filters", static_cast<long long>(r.model.after_filters)},
            {"sparsity", r.model.sparsity},
            {"fused_accuracy", r.model.fused_accuracy},
            {"concept_only_accuracy", r.model.concept_only_accuracy}}},
          {"rows", rows}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
  return decode("report", [&] {
    ExperimentReport r;
    r.config = j.at("config");
    j.at("baseline").get_to(r.baseline);
    j.at("seed").get_to(r.seed);
    j.at("repetition_seeds").get_to(r.repetition_seeds);
    j.at("n_inputs").get_to(r.n_inputs);
    r.k = static_cast<Index>(j.at("k").get<long long>());
    j.at("beta").get_to(r.beta);
    const auto& m = j.at("model");
    r.model.concepts = static_cast<Index>(m.at("concepts").get<long long>());
    r.model.candidates = static_cast<Index>(m.at("candidates").get<long long>());
    r.model.after_filters = static_cast<Index>(m.at("after_filters").get<long long>());
    m.at("sparsity").get_to(r.model.sparsity);
    m.at("fused_accuracy").get_to(r.model.fused_accuracy);
    m.at("concept_only_accuracy").get_to(r.model.concept_only_accuracy);
    for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
    return r;
  });
}

inline const std::vector<std::string>& report_csv_columns() {
  static const std::vector<std::string> cols{
      "variant",      "denoising",    "smoothing",   "rho",         "sigma",       "m",
      "clean_accuracy", "accuracy",   "accuracy_std", "sensitivity", "specificity", "cfs_mean",
      "cfs_std",      "cpcs_mean",    "cpcs_std",    "topk_overlap_mean", "r_topk_mean", "r_pred_mean",
      "r_final_mean", "certified_fraction", "linf_mean", "l2_mean"};
  return cols;
}

inline std::string report_csv(const ExperimentReport& r) {
  std::ostringstream out;
  const auto& cols = report_csv_columns();
  out << "# one row per (variant, rho); columns:";
  for (const auto& c : cols) out << ' ' << c;
  out << "; empty cells are undefined metrics\n";
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& row : r.rows) {
    out << csv_field(row.variant) << ',' << (row.denoising ? 1 : 0) << ',' << (row.smoothing ? 1 : 0) << ','
        << format_double(row.rho) << ',' << format_double(row.sigma) << ',' << row.m << ','
        << format_double(row.clean_accuracy) << ',' << format_double(row.accuracy) << ','
        << format_double(row.accuracy_std) << ',' << detail::optional_csv(row.sensitivity) << ','
        << detail::optional_csv(row.specificity) << ',' << format_double(row.cfs_mean) << ','
        << format_double(row.cfs_std) << ',' << format_double(row.cpcs_mean) << ',' << format_double(row.cpcs_std)
        << ',' << format_double(row.topk_overlap_mean) << ',' << detail::optional_csv(row.r_topk_mean) << ','
        << detail::optional_csv(row.r_pred_mean) << ',' << detail::optional_csv(row.r_final_mean) << ','
        << detail::optional_csv(row.certified_fraction) << ',' << format_double(row.linf_mean) << ','
        << format_double(row.l2_mean) << '\n';
  }
  return out.str();
}

inline std::string concept_weights_csv(const std::vector<ConceptWeightRow>& rows) {
  std::ostringstream out;
  out << "input,variant,rho,condition,concept,value\n";
  for (const auto& r : rows) {
    out << r.input << ',' << csv_field(r.variant) << ',' << format_double(r.rho) << ',' << r.condition << ','
        << csv_field(r.concept_name) << ',' << format_double(r.value) << '\n';
  }
  return out.str();
}

inline nlohmann::json certificates_json(const std::vector<CertificateEntry>& certs) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : certs) {
    out.push_back({{"variant", c.variant},
                   {"input", c.input},
                   {"repetition", c.repetition},
                   {"label", static_cast<long long>(c.label)},
                   {"top_class", static_cast<long long>(c.top_class)},
                   {"certificate", c.report}});
  }
  return out;
}

/// Writes the four report files into `dir` and returns their paths.
inline std::vector<std::filesystem::path> write_report(const SweepResult& result, const std::filesystem::path& dir) {
  const std::vector<std::filesystem::path> paths{dir / "report.csv", dir / "report.json", dir / "concept_weights.csv",
                                                 dir / "certificates.json"};
  write_text(paths[0], report_csv(result.report));
  write_json(paths[1], report_json(result.report));
  write_text(paths[2], concept_weights_csv(result.concept_weights));
  write_json(paths[3], certificates_json(result.certificates));
  return paths;
}

inline ExperimentReport read_report(const std::filesystem::path& path) {
  try {
    return report_from_json(read_json(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace svct::harness
