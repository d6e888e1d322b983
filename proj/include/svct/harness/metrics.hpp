#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "svct/errors.hpp"
#include "svct/linalg.hpp"

namespace svct::harness {

inline double accuracy(const std::vector<Index>& predictions, const std::vector<Index>& labels) {
  if (predictions.size() != labels.size()) throw ParameterError("accuracy: length mismatch");
  if (labels.empty()) throw ParameterError("accuracy: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct SensitivitySpecificity {
  std::vector<std::optional<double>> sensitivity;  // per class; empty when the class never occurs
  std::vector<std::optional<double>> specificity;  // per class; empty when every label is that class
  std::optional<double> macro_sensitivity;
  std::optional<double> macro_specificity;
};

/// One-vs-rest TP/(TP+FN) and TN/(TN+FP) per class, with unweighted macro averages over
/// the classes where each is defined.
inline SensitivitySpecificity sensitivity_specificity(const std::vector<Index>& predictions,
                                                      const std::vector<Index>& labels, Index classes) {
  if (predictions.size() != labels.size()) throw ParameterError("sensitivity_specificity: length mismatch");
  if (classes < 2) throw ParameterError("sensitivity_specificity: need at least two classes");
  SensitivitySpecificity out;
  double sens_sum = 0.0;
  double spec_sum = 0.0;
  int sens_n = 0;
  int spec_n = 0;
  for (Index c = 0; c < classes; ++c) {
    double tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool actual = labels[i] == c;
      const bool said = predictions[i] == c;
      tp += actual && said;
      fn += actual && !said;
      tn += !actual && !said;
      fp += !actual && said;
    }
    if (tp + fn > 0) {
      out.sensitivity.emplace_back(tp / (tp + fn));
      sens_sum += *out.sensitivity.back();
      ++sens_n;
    } else {
      out.sensitivity.emplace_back(std::nullopt);
    }
    if (tn + fp > 0) {
      out.specificity.emplace_back(tn / (tn + fp));
      spec_sum += *out.specificity.back();
      ++spec_n;
    } else {
      out.specificity.emplace_back(std::nullopt);
    }
  }
  if (sens_n > 0) out.macro_sensitivity = sens_sum / sens_n;
  if (spec_n > 0) out.macro_specificity = spec_sum / spec_n;
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

inline MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {};
  double s = 0.0;
  for (double v : values) s += v;
  const double mean = s / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

/// P(X >= wins) for X ~ Binomial(wins + losses, 1/2): one-sided sign test, ties dropped.
inline double sign_test_p_value(int wins, int losses) {
  const int n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (int k = wins; k <= n; ++k) {
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  }
  return std::min(1.0, p);
}

}  // namespace svct::harness
