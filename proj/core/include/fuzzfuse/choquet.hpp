#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fuzzfuse/fuzzmeasure.hpp"
#include "fuzzfuse/scancore.hpp"

namespace fuzzfuse {

/// Slice importance from prediction spread: max(p0, p1) - min(p0, p1).
/// Confident slices weigh close to 1, maximally uncertain ones 0.
double uncertainty_weight(const ConfidenceVector& cv);

/// Audit record of one aggregation: probabilities sorted ascending, the source
/// weights in the same order, the normalized measure of each upper set
/// {i, ..., n} (sorted positions), and the rectangle areas
/// (p_i - p_{i-1}) * measure_i with p_0 = 0.
struct ChoquetTrace {
  std::vector<double> sorted_probs;
  std::vector<double> sorted_weights;
  std::vector<std::size_t> order;  // original index of each sorted position
  std::vector<double> upper_set_measures;
  std::vector<double> rectangle_areas;
  double value = 0.0;
};

/// Choquet integral of per-source probabilities with respect to `fm`.
/// Sorting is stable so equal probabilities keep input order. The result lies
/// in [min(probs), max(probs)].
double choquet_aggregate(std::span<const double> probs, const FuzzyMeasure& fm);
ChoquetTrace choquet_trace(std::span<const double> probs, const FuzzyMeasure& fm);

struct FusionResult {
  ConfidenceVector fused{0.5, 0.5};
  Label predicted_label = 1;
  std::array<double, 2> per_class_raw{0.0, 0.0};
  double lambda = 0.0;
};

struct FusionTrace {
  FusionResult result;
  std::vector<double> slice_weights;
  std::string measure_json;
  std::array<ChoquetTrace, 2> per_class;
};

/// Fuses the slice confidences of one scan. Each slice is weighted by its
/// uncertainty weight, one measure is shared by both classes, each class
/// channel is integrated separately, and the two aggregates are renormalized
/// to sum to 1. Ties in the fused vector go to class 1.
/// Throws kIndeterminate when every slice has zero weight.
FusionResult fuse_scan(std::span<const ConfidenceVector> slices, LambdaSpec spec);
FusionTrace fuse_scan_traced(std::span<const ConfidenceVector> slices, LambdaSpec spec);

/// Slice confidences of a scan in slice order; throws if any is missing.
std::vector<ConfidenceVector> scan_confidences(const ScanRecord& scan);

/// Uniform grid of `steps` points from lo to hi inclusive (lo alone when
/// steps == 1).
struct LambdaGrid {
  double lo = -0.99;
  double hi = -0.01;
  int steps = 99;

  void validate() const;
  std::vector<double> points() const;
};

struct GridPoint {
  double lambda = 0.0;
  bool valid = false;
  double accuracy = 0.0;
};

struct GridSearchResult {
  double best_lambda = 0.0;
  double best_accuracy = 0.0;
  std::vector<GridPoint> evaluated;
};

/// Picks the fixed lambda maximizing scan-level accuracy of fuse_scan. Ties go
/// to the lambda closest to 0, then to the larger lambda. Points where some
/// slice factor 1 + lambda w is not positive are skipped. Indeterminate scans
/// count as misclassified.
GridSearchResult grid_search_lambda(std::span<const ScanRecord> validation_scans,
                                    const LambdaGrid& grid);

/// Fusion trace as a JSON object (sorted probabilities, weights, upper-set
/// measures, rectangle areas for both classes).
std::string fusion_trace_json(const std::string& scan_id, const FusionTrace& trace);

}  // namespace fuzzfuse
