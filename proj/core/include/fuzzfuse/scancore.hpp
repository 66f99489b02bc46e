#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace fuzzfuse {

/// Binary class label. Class 1 is the positive finding (hemorrhage present,
/// or the acute subtype in the subtype task).
using Label = int;

/// Per-slice class-probability pair. Entries lie in [0, 1] and sum to 1
/// within kSumTolerance; construction enforces both.
class ConfidenceVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ConfidenceVector(double p_class0, double p_class1);

  /// Builds (1 - p1, p1); p1 must lie in [0, 1].
  static ConfidenceVector from_positive(double p_class1);

  double p0() const noexcept { return p0_; }
  double p1() const noexcept { return p1_; }
  double operator[](int cls) const noexcept { return cls == 0 ? p0_ : p1_; }

  friend bool operator==(const ConfidenceVector&, const ConfidenceVector&) = default;

 private:
  double p0_;
  double p1_;
};

struct SliceRecord {
  int slice_index = 0;
  std::vector<double> features;
  std::optional<ConfidenceVector> confidence;

  friend bool operator==(const SliceRecord&, const SliceRecord&) = default;
};

struct ScanRecord {
  std::string scan_id;
  std::string subject_id;
  std::vector<SliceRecord> slices;
  Label label = 0;

  std::size_t size() const noexcept { return slices.size(); }

  /// Throws kInvalidArgument unless the scan has at least one slice,
  /// strictly increasing slice indices, a 0/1 label, and every slice carries
  /// features or a confidence.
  void validate() const;

  friend bool operator==(const ScanRecord&, const ScanRecord&) = default;
};

using Dataset = std::vector<ScanRecord>;

/// Checks every scan, unique scan ids, and a constant feature length.
void validate_dataset(std::span<const ScanRecord> scans);

/// Feature length shared by all slices (0 when the dataset carries none).
std::size_t feature_dim(std::span<const ScanRecord> scans);

std::size_t slice_count(std::span<const ScanRecord> scans);

struct DatasetSplit {
  std::set<std::string> train_scan_ids;
  std::set<std::string> test_scan_ids;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

/// Assigns whole subjects to the test side until its slice count is as close
/// as greedy allocation gets to `test_fraction` of all slices. Subjects are
/// visited in a seeded permutation of ascending-subject_id order; a subject
/// joins the test side only if that strictly reduces the distance to the
/// target. At least one subject always lands on each side.
DatasetSplit split_subject_independent(std::span<const ScanRecord> scans,
                                       double test_fraction, std::uint64_t seed);

/// Scans whose id is in `ids`, in input order.
Dataset select_scans(std::span<const ScanRecord> scans, const std::set<std::string>& ids);

// Scan dataset CSV: `scan_id,subject_id,slice_index,label,f0,...,fK`.
// Confidence CSV: `scan_id,slice_index,p0,p1`.

void write_scans_csv(const std::filesystem::path& path, std::span<const ScanRecord> scans);
std::string scans_to_csv(std::span<const ScanRecord> scans);

/// Rows are grouped by scan_id in first-appearance order and slices sorted by
/// slice_index. Rows of one scan must agree on subject_id and label.
Dataset read_scans_csv(const std::filesystem::path& path);
Dataset parse_scans_csv(std::span<const std::string> lines, const std::string& source);

void write_confidences_csv(const std::filesystem::path& path,
                           std::span<const ScanRecord> scans);

/// Fills slice confidences from a confidence CSV. Every slice of every scan
/// must receive exactly one row; unknown (scan, slice) pairs are errors.
void attach_confidences(Dataset& scans, const std::filesystem::path& path);

}  // namespace fuzzfuse
