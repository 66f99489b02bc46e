#include "fuzzfuse/fuzzmeasure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/textio.hpp"

namespace fuzzfuse {

namespace {

constexpr double kUnitSumTolerance = 1e-9;
constexpr double kBoundaryResidual = 1e-10;
constexpr int kMaxBisections = 2000;

void check_weights(std::span<const double> weights) {
  if (weights.empty()) fail(ErrorCode::kInvalidArgument, "fuzzy measure needs weights");
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0 || w > 1.0) {
      fail(ErrorCode::kInvalidArgument, "fuzzy measure weights must lie in [0,1]");
    }
  }
}

std::size_t count_nonzero(std::span<const double> weights) {
  return static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [](double w) { return w > 0.0; }));
}

// prod(1 + lambda w_i) - (1 + lambda), evaluated through log1p/expm1 so the
// sign stays reliable for |lambda| far below machine epsilon.
double identity_gap(std::span<const double> weights, double lambda) {
  double log_product = 0.0;
  for (double w : weights) log_product += std::log1p(lambda * w);
  return std::expm1(log_product) - lambda;
}

std::string bracket_state(double lo, double hi, double f_lo, double f_hi) {
  std::ostringstream os;
  os << "bracket [" << lo << ", " << hi << "], f = [" << f_lo << ", " << f_hi << "]";
  return os.str();
}

}  // namespace

std::string LambdaSpec::describe() const {
  return fixed_ ? "fixed(" + textio::format_double(value_) + ")" : "exact";
}

double lambda_residual(std::span<const double> weights, double lambda) {
  double product = 1.0;
  for (double w : weights) product *= 1.0 + lambda * w;
  return std::abs(product - (1.0 + lambda));
}

double solve_lambda(std::span<const double> weights) {
  if (weights.size() < 2) {
    fail(ErrorCode::kInvalidArgument, "solve_lambda needs at least two weights");
  }
  check_weights(weights);
  if (count_nonzero(weights) < 2) {
    fail(ErrorCode::kDegenerateInput,
         "lambda identity has no nonzero root with fewer than two nonzero weights");
  }

  double sum = 0.0;
  for (double w : weights) sum += w;
  if (std::abs(sum - 1.0) <= kUnitSumTolerance) return 0.0;

  auto gap = [&](double lambda) { return identity_gap(weights, lambda); };

  double lo = 0.0;
  double hi = 0.0;
  if (sum > 1.0) {
    // Root in (-1, 0): gap > 0 towards -1, gap < 0 just below 0.
    lo = std::nextafter(-1.0, 0.0);
    hi = -1e-9;
    while (gap(hi) >= 0.0) {
      hi *= 1e-3;
      if (hi > -1e-300) {
        fail(ErrorCode::kNumeric, "solve_lambda: no sign change near 0; " +
                                      bracket_state(lo, hi, gap(lo), gap(hi)));
      }
    }
    if (gap(lo) <= 0.0) {
      // The root coincides with the -1 boundary to double precision.
      if (lambda_residual(weights, lo) < kBoundaryResidual) return lo;
      fail(ErrorCode::kNumeric, "solve_lambda: root not bracketed above -1; " +
                                    bracket_state(lo, hi, gap(lo), gap(hi)));
    }
  } else {
    // Root in (0, inf): gap < 0 just above 0, gap > 0 for large lambda.
    lo = 1e-9;
    while (gap(lo) >= 0.0) {
      lo *= 1e-3;
      if (lo < 1e-300) {
        fail(ErrorCode::kNumeric, "solve_lambda: no sign change near 0; " +
                                      bracket_state(lo, hi, gap(lo), gap(hi)));
      }
    }
    hi = 1.0;
    while (gap(hi) <= 0.0) {
      hi *= 2.0;
      if (hi > 1e300) {
        fail(ErrorCode::kNumeric, "solve_lambda: upper bracket diverged; " +
                                      bracket_state(lo, hi, gap(lo), gap(hi)));
      }
    }
  }

  const bool lo_positive = gap(lo) > 0.0;
  for (int iter = 0; iter < kMaxBisections; ++iter) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) {
      return lambda_residual(weights, lo) <= lambda_residual(weights, hi) ? lo : hi;
    }
    const double g = gap(mid);
    if (g == 0.0) return mid;
    if ((g > 0.0) == lo_positive) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  fail(ErrorCode::kNumeric, "solve_lambda: bisection did not converge; " +
                                bracket_state(lo, hi, gap(lo), gap(hi)));
}

double raw_lambda_measure(std::span<const double> member_weights, double lambda) {
  if (lambda == 0.0) {
    double sum = 0.0;
    for (double w : member_weights) sum += w;
    return sum;
  }
  double log_product = 0.0;
  for (double w : member_weights) log_product += std::log1p(lambda * w);
  return std::expm1(log_product) / lambda;
}

FuzzyMeasure FuzzyMeasure::build(std::span<const double> weights, LambdaSpec spec) {
  check_weights(weights);
  const std::size_t nonzero = count_nonzero(weights);
  if (nonzero == 0) {
    fail(ErrorCode::kDegenerateInput, "fuzzy measure with all-zero weights is degenerate");
  }

  double lambda = 0.0;
  if (spec.is_fixed()) {
    lambda = spec.value();
    if (!std::isfinite(lambda) || lambda <= -1.0) {
      fail(ErrorCode::kInvalidArgument, "fixed lambda must be finite and > -1");
    }
    for (double w : weights) {
      if (1.0 + lambda * w <= kMinMeasureFactor) {
        fail(ErrorCode::kInvalidArgument,
             "fixed lambda " + textio::format_double(lambda) +
                 " makes 1 + lambda*w nonpositive for w = " + textio::format_double(w));
      }
    }
  } else if (nonzero >= 2) {
    lambda = solve_lambda(weights);
  }

  std::vector<double> owned(weights.begin(), weights.end());
  const double normalizer = raw_lambda_measure(owned, lambda);
  if (!(normalizer > 0.0) || !std::isfinite(normalizer)) {
    fail(ErrorCode::kNumeric, "fuzzy measure normalizer is not positive");
  }
  return FuzzyMeasure(std::move(owned), lambda, normalizer);
}

double FuzzyMeasure::raw_measure(std::span<const std::size_t> subset) const {
  std::vector<bool> seen(weights_.size(), false);
  std::vector<double> members;
  members.reserve(subset.size());
  for (std::size_t index : subset) {
    if (index >= weights_.size()) {
      fail(ErrorCode::kInvalidArgument, "subset index " + std::to_string(index) +
                                            " out of range for " +
                                            std::to_string(weights_.size()) + " sources");
    }
    if (seen[index]) {
      fail(ErrorCode::kInvalidArgument, "subset index " + std::to_string(index) + " repeated");
    }
    seen[index] = true;
    members.push_back(weights_[index]);
  }
  return raw_lambda_measure(members, lambda_);
}

double FuzzyMeasure::measure(std::span<const std::size_t> subset) const {
  if (subset.size() == weights_.size()) {
    raw_measure(subset);  // validates indices
    return 1.0;
  }
  return std::clamp(raw_measure(subset) / normalizer_, 0.0, 1.0);
}

std::string FuzzyMeasure::to_json() const {
  std::string out = "{\"weights\":[";
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (i) out += ',';
    out += textio::format_double(weights_[i]);
  }
  out += "],\"lambda\":" + textio::format_double(lambda_) +
         ",\"normalizer\":" + textio::format_double(normalizer_) + "}";
  return out;
}

}  // namespace fuzzfuse
