#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuzzfuse/scancore.hpp"

namespace fuzzfuse {

/// Binary confusion counts with class 1 as the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const Label> labels, std::span<const Label> predictions);

/// A metric whose denominator is zero is std::nullopt, never 0.
struct ClassificationMetrics {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> f1;
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

/// Goodness of fit of predicted class-1 probabilities against 0/1 labels.
/// generalized_r2 (Nagelkerke) and entropy_r2 are std::nullopt when the labels
/// contain a single class, since the null model is then degenerate.
struct ProbMetricReport {
  std::optional<double> generalized_r2;
  std::optional<double> entropy_r2;
  double rase = 0.0;
  double mad = 0.0;
  double log_likelihood = 0.0;
  double null_log_likelihood = 0.0;
  std::size_t n = 0;
};

inline constexpr double kProbabilityClip = 1e-12;

ProbMetricReport probabilistic_metrics(std::span<const Label> labels,
                                       std::span<const double> probs);

/// "NA" for undefined values, shortest round-trip text otherwise.
std::string format_metric(const std::optional<double>& value);

/// Header and row in table order: Accuracy, Precision, Sensitivity,
/// Specificity, F1-score.
std::string classification_csv_header();
std::string classification_csv_row(const std::string& stage, const ConfusionMatrix& cm);

/// Header and row in table order: Generalized R-square, Entropy R-square,
/// RASE, MAD, Log-Likelihood.
std::string probabilistic_csv_header();
std::string probabilistic_csv_row(const std::string& stage, const ProbMetricReport& report);

}  // namespace fuzzfuse
