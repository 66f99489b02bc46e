#pragma once

#include <array>
#include <string>

#include "fuzzfuse/metrics.hpp"
#include "fuzzfuse/screening.hpp"

namespace fuzzfuse::svg {

/// Horizontal bars of contribution percentage, largest first, with the
/// screening threshold drawn as a dashed line and dropped features greyed.
std::string importance_chart(const FeatureScreenReport& report, const std::string& title);

/// 2x2 matrix, rows = actual class, columns = predicted class, cells shaded
/// by row-normalized count.
std::string confusion_matrix(const ConfusionMatrix& cm, const std::string& title,
                             const std::array<std::string, 2>& class_names);

}  // namespace fuzzfuse::svg
