#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fuzzfuse {

/// How the interaction parameter of a Sugeno lambda-measure is chosen.
class LambdaSpec {
 public:
  /// Root of 1 + lambda = prod(1 + lambda * w_i), solved per weight set.
  static LambdaSpec exact() { return LambdaSpec(false, 0.0); }
  /// A caller-supplied lambda (e.g. from grid search).
  static LambdaSpec fixed(double lambda) { return LambdaSpec(true, lambda); }

  bool is_fixed() const noexcept { return fixed_; }
  double value() const noexcept { return value_; }
  std::string describe() const;

 private:
  LambdaSpec(bool fixed, double value) : fixed_(fixed), value_(value) {}
  bool fixed_;
  double value_;
};

/// Smallest admissible factor 1 + lambda * w_i for a fixed lambda.
inline constexpr double kMinMeasureFactor = 1e-9;

/// Solves 1 + lambda = prod(1 + lambda * w_i) for the nonzero root in
/// (-1, inf). Returns 0 when sum(w) is 1 within 1e-9; otherwise the sign of
/// the root is opposite to the sign of sum(w) - 1.
///
/// Requires at least two weights in [0,1], two of them nonzero. When a weight
/// is 1 the root sits at the -1 boundary; the closest representable lambda
/// above -1 is returned since it satisfies the identity to rounding.
/// Throws kDegenerateInput for inadmissible weight sets and kNumeric if the
/// bracket cannot be established or bisection stalls.
double solve_lambda(std::span<const double> weights);

/// |prod(1 + lambda * w_i) - (1 + lambda)|
double lambda_residual(std::span<const double> weights, double lambda);

/// Sugeno lambda-measure over n sources, normalized so the full set has
/// measure 1. The raw (un-normalized) measure of a subset A is
///   g(A) = (prod_{i in A}(1 + lambda w_i) - 1) / lambda,  lambda != 0
///   g(A) = sum_{i in A} w_i,                              lambda == 0
/// and the normalized measure is g(A) / g(S).
class FuzzyMeasure {
 public:
  /// In exact mode lambda comes from solve_lambda, or is 0 when fewer than two
  /// weights are nonzero (the identity then has no nonzero root). In fixed
  /// mode lambda must exceed -1 and keep every factor 1 + lambda w_i above
  /// kMinMeasureFactor. Either way the normalizer is the raw g(S).
  static FuzzyMeasure build(std::span<const double> weights, LambdaSpec spec);

  std::size_t size() const noexcept { return weights_.size(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double lambda() const noexcept { return lambda_; }
  double normalizer() const noexcept { return normalizer_; }

  /// Raw g(A). Indices must be in range and distinct.
  double raw_measure(std::span<const std::size_t> subset) const;
  /// g(A) / g(S), in [0, 1].
  double measure(std::span<const std::size_t> subset) const;

  /// JSON object {"weights": [...], "lambda": x, "normalizer": y}.
  std::string to_json() const;

 private:
  FuzzyMeasure(std::vector<double> weights, double lambda, double normalizer)
      : weights_(std::move(weights)), lambda_(lambda), normalizer_(normalizer) {}

  std::vector<double> weights_;
  double lambda_;
  double normalizer_;
};

/// Raw measure of a set given its weights directly; shared by FuzzyMeasure
/// and the Choquet suffix computation.
double raw_lambda_measure(std::span<const double> member_weights, double lambda);

}  // namespace fuzzfuse
