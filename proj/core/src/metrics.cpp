#include "fuzzfuse/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/textio.hpp"

namespace fuzzfuse {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_binary(std::span<const Label> values, const char* what) {
  for (Label v : values) {
    if (v != 0 && v != 1) fail(ErrorCode::kInvalidArgument, std::string(what) + " must be 0 or 1");
  }
}

}  // namespace

ConfusionMatrix confusion(std::span<const Label> labels, std::span<const Label> predictions) {
  if (labels.size() != predictions.size()) {
    fail(ErrorCode::kInvalidArgument, "confusion: labels and predictions differ in length");
  }
  if (labels.empty()) fail(ErrorCode::kInvalidArgument, "confusion: empty input");
  check_binary(labels, "labels");
  check_binary(predictions, "predictions");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      (predictions[i] == 1 ? cm.tp : cm.fn) += 1;
    } else {
      (predictions[i] == 1 ? cm.fp : cm.tn) += 1;
    }
  }
  return cm;
}

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  ClassificationMetrics m;
  m.accuracy = ratio(cm.tp + cm.tn, cm.total());
  m.precision = ratio(cm.tp, cm.tp + cm.fp);
  m.sensitivity = ratio(cm.tp, cm.tp + cm.fn);
  m.specificity = ratio(cm.tn, cm.tn + cm.fp);
  if (m.precision && m.sensitivity && (*m.precision + *m.sensitivity) > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.sensitivity / (*m.precision + *m.sensitivity);
  }
  return m;
}

ProbMetricReport probabilistic_metrics(std::span<const Label> labels,
                                       std::span<const double> probs) {
  if (labels.size() != probs.size()) {
    fail(ErrorCode::kInvalidArgument, "probabilistic_metrics: length mismatch");
  }
  if (labels.empty()) fail(ErrorCode::kInvalidArgument, "probabilistic_metrics: empty input");
  check_binary(labels, "labels");

  ProbMetricReport report;
  report.n = labels.size();
  const double n = static_cast<double>(labels.size());
  double positives = 0.0;
  double squared = 0.0;
  double absolute = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!std::isfinite(probs[i]) || probs[i] < 0.0 || probs[i] > 1.0) {
      fail(ErrorCode::kInvalidArgument, "probabilistic_metrics: probabilities must lie in [0,1]");
    }
    const double p = std::clamp(probs[i], kProbabilityClip, 1.0 - kProbabilityClip);
    const double y = labels[i];
    positives += y;
    report.log_likelihood += labels[i] == 1 ? std::log(p) : std::log1p(-p);
    squared += (y - p) * (y - p);
    absolute += std::abs(y - p);
  }
  report.rase = std::sqrt(squared / n);
  report.mad = absolute / n;

  const double negatives = n - positives;
  if (positives == 0.0 || negatives == 0.0) return report;
  report.null_log_likelihood =
      positives * std::log(positives / n) + negatives * std::log(negatives / n);
  report.entropy_r2 = 1.0 - report.log_likelihood / report.null_log_likelihood;
  // Nagelkerke: (1 - (L0/L1)^(2/n)) / (1 - L0^(2/n)), in log space.
  const double cox_snell = -std::expm1(2.0 * (report.null_log_likelihood - report.log_likelihood) / n);
  const double max_cox_snell = -std::expm1(2.0 * report.null_log_likelihood / n);
  report.generalized_r2 = cox_snell / max_cox_snell;
  return report;
}

std::string format_metric(const std::optional<double>& value) {
  return value ? textio::format_double(*value) : "NA";
}

std::string classification_csv_header() {
  return "stage,n,tp,fp,tn,fn,accuracy,precision,sensitivity,specificity,f1";
}

std::string classification_csv_row(const std::string& stage, const ConfusionMatrix& cm) {
  const auto m = classification_metrics(cm);
  return stage + ',' + std::to_string(cm.total()) + ',' + std::to_string(cm.tp) + ',' +
         std::to_string(cm.fp) + ',' + std::to_string(cm.tn) + ',' + std::to_string(cm.fn) +
         ',' + format_metric(m.accuracy) + ',' + format_metric(m.precision) + ',' +
         format_metric(m.sensitivity) + ',' + format_metric(m.specificity) + ',' +
         format_metric(m.f1);
}

std::string probabilistic_csv_header() {
  return "stage,n,generalized_r2,entropy_r2,rase,mad,log_likelihood";
}

std::string probabilistic_csv_row(const std::string& stage, const ProbMetricReport& report) {
  return stage + ',' + std::to_string(report.n) + ',' + format_metric(report.generalized_r2) +
         ',' + format_metric(report.entropy_r2) + ',' + textio::format_double(report.rase) +
         ',' + textio::format_double(report.mad) + ',' +
         textio::format_double(report.log_likelihood);
}

}  // namespace fuzzfuse
