#include "fuzzfuse/choquet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fuzzfuse/error.hpp"
#include "json.hpp"

namespace fuzzfuse {

double uncertainty_weight(const ConfidenceVector& cv) {
  return std::max(cv.p0(), cv.p1()) - std::min(cv.p0(), cv.p1());
}

ChoquetTrace choquet_trace(std::span<const double> probs, const FuzzyMeasure& fm) {
  const std::size_t n = probs.size();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "choquet_aggregate needs at least one source");
  if (n != fm.size()) {
    fail(ErrorCode::kInvalidArgument, "choquet_aggregate: " + std::to_string(n) +
                                          " probabilities for a measure over " +
                                          std::to_string(fm.size()) + " sources");
  }
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      fail(ErrorCode::kInvalidArgument, "choquet_aggregate: probabilities must lie in [0,1]");
    }
  }

  ChoquetTrace trace;
  trace.order.resize(n);
  std::iota(trace.order.begin(), trace.order.end(), std::size_t{0});
  std::stable_sort(trace.order.begin(), trace.order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

  const auto& weights = fm.weights();
  const double lambda = fm.lambda();
  trace.sorted_probs.resize(n);
  trace.sorted_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    trace.sorted_probs[i] = probs[trace.order[i]];
    trace.sorted_weights[i] = weights[trace.order[i]];
  }

  // Upper sets {i..n} grow as i decreases, so accumulate from the top.
  trace.upper_set_measures.assign(n, 0.0);
  double accumulated = 0.0;  // sum of w (lambda == 0) or of log1p(lambda w)
  for (std::size_t k = n; k-- > 0;) {
    const double w = trace.sorted_weights[k];
    double raw = 0.0;
    if (lambda == 0.0) {
      accumulated += w;
      raw = accumulated;
    } else {
      accumulated += std::log1p(lambda * w);
      raw = std::expm1(accumulated) / lambda;
    }
    trace.upper_set_measures[k] = std::clamp(raw / fm.normalizer(), 0.0, 1.0);
  }
  trace.upper_set_measures[0] = 1.0;

  trace.rectangle_areas.resize(n);
  double previous = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double area = (trace.sorted_probs[i] - previous) * trace.upper_set_measures[i];
    trace.rectangle_areas[i] = area;
    total += area;
    previous = trace.sorted_probs[i];
  }
  // Rounding can push the sum an ulp outside the hull of the inputs.
  trace.value = std::clamp(total, trace.sorted_probs.front(), trace.sorted_probs.back());
  return trace;
}

double choquet_aggregate(std::span<const double> probs, const FuzzyMeasure& fm) {
  return choquet_trace(probs, fm).value;
}

FusionTrace fuse_scan_traced(std::span<const ConfidenceVector> slices, LambdaSpec spec) {
  if (slices.empty()) fail(ErrorCode::kInvalidArgument, "fuse_scan needs at least one slice");

  FusionTrace trace;
  trace.slice_weights.reserve(slices.size());
  std::array<std::vector<double>, 2> channel;
  for (const auto& cv : slices) {
    trace.slice_weights.push_back(uncertainty_weight(cv));
    channel[0].push_back(cv.p0());
    channel[1].push_back(cv.p1());
  }
  if (std::all_of(trace.slice_weights.begin(), trace.slice_weights.end(),
                  [](double w) { return w == 0.0; })) {
    fail(ErrorCode::kIndeterminate, "every slice is maximally uncertain");
  }

  const FuzzyMeasure fm = FuzzyMeasure::build(trace.slice_weights, spec);
  trace.measure_json = fm.to_json();
  for (int cls = 0; cls < 2; ++cls) {
    trace.per_class[cls] = choquet_trace(channel[cls], fm);
  }

  FusionResult& result = trace.result;
  result.lambda = fm.lambda();
  result.per_class_raw = {trace.per_class[0].value, trace.per_class[1].value};
  const double total = result.per_class_raw[0] + result.per_class_raw[1];
  if (!(total > 0.0)) {
    fail(ErrorCode::kIndeterminate, "both class aggregates are zero");
  }
  result.fused = ConfidenceVector::from_positive(result.per_class_raw[1] / total);
  result.predicted_label = result.per_class_raw[1] >= result.per_class_raw[0] ? 1 : 0;
  return trace;
}

FusionResult fuse_scan(std::span<const ConfidenceVector> slices, LambdaSpec spec) {
  return fuse_scan_traced(slices, spec).result;
}

std::vector<ConfidenceVector> scan_confidences(const ScanRecord& scan) {
  std::vector<ConfidenceVector> out;
  out.reserve(scan.slices.size());
  for (const auto& slice : scan.slices) {
    if (!slice.confidence) {
      fail(ErrorCode::kInvalidArgument, "scan " + scan.scan_id + " slice " +
                                            std::to_string(slice.slice_index) +
                                            " has no confidence");
    }
    out.push_back(*slice.confidence);
  }
  return out;
}

void LambdaGrid::validate() const {
  if (steps < 1) fail(ErrorCode::kInvalidArgument, "lambda grid needs at least one step");
  if (!(lo > -1.0) || !std::isfinite(hi) || (steps > 1 && !(lo < hi))) {
    fail(ErrorCode::kInvalidArgument, "lambda grid requires -1 < lo < hi");
  }
}

std::vector<double> LambdaGrid::points() const {
  validate();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(steps));
  if (steps == 1) {
    out.push_back(lo);
    return out;
  }
  const double step = (hi - lo) / static_cast<double>(steps - 1);
  for (int i = 0; i < steps; ++i) {
    out.push_back(i + 1 == steps ? hi : lo + step * static_cast<double>(i));
  }
  return out;
}

GridSearchResult grid_search_lambda(std::span<const ScanRecord> validation_scans,
                                    const LambdaGrid& grid) {
  if (validation_scans.empty()) {
    fail(ErrorCode::kInvalidArgument, "grid search needs validation scans");
  }
  std::vector<std::vector<ConfidenceVector>> confidences;
  double max_weight = 0.0;
  for (const auto& scan : validation_scans) {
    confidences.push_back(scan_confidences(scan));
    for (const auto& cv : confidences.back()) {
      max_weight = std::max(max_weight, uncertainty_weight(cv));
    }
  }

  GridSearchResult result;
  bool found = false;
  for (double lambda : grid.points()) {
    GridPoint point{lambda, false, 0.0};
    // 1 + lambda w is smallest at the largest weight when lambda < 0.
    point.valid = 1.0 + std::min(lambda, 0.0) * max_weight > kMinMeasureFactor;
    if (point.valid) {
      std::size_t correct = 0;
      for (std::size_t s = 0; s < validation_scans.size(); ++s) {
        try {
          const auto fused = fuse_scan(confidences[s], LambdaSpec::fixed(lambda));
          if (fused.predicted_label == validation_scans[s].label) ++correct;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kIndeterminate) throw;
        }
      }
      point.accuracy =
          static_cast<double>(correct) / static_cast<double>(validation_scans.size());

      const bool better =
          !found || point.accuracy > result.best_accuracy ||
          (point.accuracy == result.best_accuracy &&
           (std::abs(lambda) < std::abs(result.best_lambda) ||
            (std::abs(lambda) == std::abs(result.best_lambda) && lambda > result.best_lambda)));
      if (better) {
        result.best_lambda = lambda;
        result.best_accuracy = point.accuracy;
        found = true;
      }
    }
    result.evaluated.push_back(point);
  }
  if (!found) fail(ErrorCode::kInvalidArgument, "lambda grid has no valid point");
  return result;
}

std::string fusion_trace_json(const std::string& scan_id, const FusionTrace& trace) {
  nlohmann::ordered_json out;
  out["scan_id"] = scan_id;
  out["lambda"] = trace.result.lambda;
  out["slice_weights"] = trace.slice_weights;
  out["measure"] = nlohmann::ordered_json::parse(trace.measure_json);
  for (int cls = 0; cls < 2; ++cls) {
    const auto& ct = trace.per_class[cls];
    nlohmann::ordered_json c;
    c["sorted_probs"] = ct.sorted_probs;
    c["sorted_weights"] = ct.sorted_weights;
    c["order"] = ct.order;
    c["upper_set_measures"] = ct.upper_set_measures;
    c["rectangle_areas"] = ct.rectangle_areas;
    c["aggregate"] = ct.value;
    out["class" + std::to_string(cls)] = std::move(c);
  }
  out["fused"] = {trace.result.fused.p0(), trace.result.fused.p1()};
  out["predicted_label"] = trace.result.predicted_label;
  return out.dump();
}

}  // namespace fuzzfuse
