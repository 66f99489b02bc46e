#include "fuzzfuse/scancore.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <utility>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/random.hpp"
#include "fuzzfuse/textio.hpp"

namespace fuzzfuse {

namespace {

bool is_probability(double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; }

void check_identifier(const std::string& id, const char* what) {
  if (id.empty() || id.find_first_of(",\r\n") != std::string::npos) {
    fail(ErrorCode::kInvalidArgument,
         std::string(what) + " must be nonempty and free of commas/newlines: '" + id + "'");
  }
}

}  // namespace

ConfidenceVector::ConfidenceVector(double p_class0, double p_class1)
    : p0_(p_class0), p1_(p_class1) {
  if (!is_probability(p0_) || !is_probability(p1_)) {
    fail(ErrorCode::kInvalidArgument, "confidence entries must lie in [0,1]");
  }
  if (std::abs(p0_ + p1_ - 1.0) > kSumTolerance) {
    fail(ErrorCode::kInvalidArgument, "confidence entries must sum to 1");
  }
}

ConfidenceVector ConfidenceVector::from_positive(double p_class1) {
  if (!is_probability(p_class1)) {
    fail(ErrorCode::kInvalidArgument, "positive-class probability must lie in [0,1]");
  }
  return ConfidenceVector(1.0 - p_class1, p_class1);
}

void ScanRecord::validate() const {
  check_identifier(scan_id, "scan_id");
  check_identifier(subject_id, "subject_id");
  if (slices.empty()) {
    fail(ErrorCode::kInvalidArgument, "scan " + scan_id + " has no slices");
  }
  if (label != 0 && label != 1) {
    fail(ErrorCode::kInvalidArgument, "scan " + scan_id + " label must be 0 or 1");
  }
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (i > 0 && slices[i].slice_index <= slices[i - 1].slice_index) {
      fail(ErrorCode::kInvalidArgument,
           "scan " + scan_id + " slice indices must be strictly increasing");
    }
    if (slices[i].features.empty() && !slices[i].confidence) {
      fail(ErrorCode::kInvalidArgument,
           "scan " + scan_id + " slice " + std::to_string(slices[i].slice_index) +
               " carries neither features nor confidence");
    }
  }
}

void validate_dataset(std::span<const ScanRecord> scans) {
  std::set<std::string> seen;
  std::optional<std::size_t> dim;
  for (const auto& scan : scans) {
    scan.validate();
    if (!seen.insert(scan.scan_id).second) {
      fail(ErrorCode::kInvalidArgument, "duplicate scan_id " + scan.scan_id);
    }
    for (const auto& slice : scan.slices) {
      if (!dim) dim = slice.features.size();
      if (slice.features.size() != *dim) {
        fail(ErrorCode::kInvalidArgument,
             "feature length differs across slices (scan " + scan.scan_id + ")");
      }
    }
  }
}

std::size_t feature_dim(std::span<const ScanRecord> scans) {
  for (const auto& scan : scans) {
    if (!scan.slices.empty()) return scan.slices.front().features.size();
  }
  return 0;
}

std::size_t slice_count(std::span<const ScanRecord> scans) {
  std::size_t total = 0;
  for (const auto& scan : scans) total += scan.slices.size();
  return total;
}

DatasetSplit split_subject_independent(std::span<const ScanRecord> scans,
                                       double test_fraction, std::uint64_t seed) {
  if (scans.empty()) fail(ErrorCode::kInvalidArgument, "cannot split an empty dataset");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "test_fraction must lie in (0,1)");
  }

  // std::map keeps subjects in ascending subject_id order.
  std::map<std::string, std::size_t> slices_per_subject;
  std::size_t total = 0;
  for (const auto& scan : scans) {
    slices_per_subject[scan.subject_id] += scan.slices.size();
    total += scan.slices.size();
  }
  if (slices_per_subject.size() < 2) {
    fail(ErrorCode::kDegenerateInput,
         "subject-independent split needs at least 2 distinct subjects");
  }

  std::vector<std::pair<std::string, std::size_t>> order(slices_per_subject.begin(),
                                                         slices_per_subject.end());
  Rng rng(seed);
  rng.shuffle(std::span(order));

  const double target = test_fraction * static_cast<double>(total);
  std::set<std::string> test_subjects;
  double test_slices = 0.0;
  for (const auto& [subject, count] : order) {
    if (test_subjects.size() + 1 == order.size()) break;
    const double next = test_slices + static_cast<double>(count);
    if (std::abs(next - target) < std::abs(test_slices - target)) {
      test_subjects.insert(subject);
      test_slices = next;
    }
  }
  if (test_subjects.empty()) test_subjects.insert(order.front().first);

  DatasetSplit split;
  for (const auto& scan : scans) {
    if (test_subjects.contains(scan.subject_id)) {
      split.test_scan_ids.insert(scan.scan_id);
    } else {
      split.train_scan_ids.insert(scan.scan_id);
    }
  }
  return split;
}

Dataset select_scans(std::span<const ScanRecord> scans, const std::set<std::string>& ids) {
  Dataset out;
  for (const auto& scan : scans) {
    if (ids.contains(scan.scan_id)) out.push_back(scan);
  }
  return out;
}

std::string scans_to_csv(std::span<const ScanRecord> scans) {
  const std::size_t dim = feature_dim(scans);
  std::string out = "scan_id,subject_id,slice_index,label";
  for (std::size_t k = 0; k < dim; ++k) out += ",f" + std::to_string(k);
  out += '\n';
  for (const auto& scan : scans) {
    for (const auto& slice : scan.slices) {
      out += scan.scan_id;
      out += ',';
      out += scan.subject_id;
      out += ',';
      out += std::to_string(slice.slice_index);
      out += ',';
      out += std::to_string(scan.label);
      for (double f : slice.features) {
        out += ',';
        out += textio::format_double(f);
      }
      out += '\n';
    }
  }
  return out;
}

void write_scans_csv(const std::filesystem::path& path, std::span<const ScanRecord> scans) {
  textio::write_file(path, scans_to_csv(scans));
}

Dataset parse_scans_csv(std::span<const std::string> lines, const std::string& source) {
  if (lines.empty()) fail(ErrorCode::kParse, source + ": empty file");
  const auto header = textio::split_fields(lines.front());
  if (header.size() < 4 || header[0] != "scan_id" || header[1] != "subject_id" ||
      header[2] != "slice_index" || header[3] != "label") {
    fail(ErrorCode::kParse,
         source + ": header must start with scan_id,subject_id,slice_index,label");
  }
  const std::size_t dim = header.size() - 4;
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[4 + k] != "f" + std::to_string(k)) {
      fail(ErrorCode::kParse, source + ": feature column " + std::to_string(k) +
                                  " must be named f" + std::to_string(k));
    }
  }

  Dataset scans;
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const std::string where = source + ":" + std::to_string(row + 1);
    const auto fields = textio::split_fields(lines[row]);
    if (fields.size() != header.size()) {
      fail(ErrorCode::kParse, where + ": expected " + std::to_string(header.size()) +
                                  " fields, found " + std::to_string(fields.size()));
    }
    const std::string scan_id(fields[0]);
    const std::string subject_id(fields[1]);
    const auto label = textio::parse_int(fields[3], where);

    auto [it, inserted] = position.try_emplace(scan_id, scans.size());
    if (inserted) {
      ScanRecord scan;
      scan.scan_id = scan_id;
      scan.subject_id = subject_id;
      scan.label = static_cast<Label>(label);
      scans.push_back(std::move(scan));
    }
    ScanRecord& scan = scans[it->second];
    if (scan.subject_id != subject_id || scan.label != label) {
      fail(ErrorCode::kParse, where + ": rows of scan " + scan_id +
                                  " disagree on subject_id or label");
    }
    SliceRecord slice;
    slice.slice_index = static_cast<int>(textio::parse_int(fields[2], where));
    slice.features.reserve(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      const double value = textio::parse_double(fields[4 + k], where);
      if (!std::isfinite(value)) fail(ErrorCode::kParse, where + ": non-finite feature");
      slice.features.push_back(value);
    }
    scan.slices.push_back(std::move(slice));
  }

  for (auto& scan : scans) {
    std::stable_sort(scan.slices.begin(), scan.slices.end(),
                     [](const SliceRecord& a, const SliceRecord& b) {
                       return a.slice_index < b.slice_index;
                     });
  }
  // Feature-less datasets are only valid once confidences are attached.
  if (dim > 0) validate_dataset(scans);
  return scans;
}

Dataset read_scans_csv(const std::filesystem::path& path) {
  const auto lines = textio::read_lines(path);
  return parse_scans_csv(lines, path.string());
}

void write_confidences_csv(const std::filesystem::path& path,
                           std::span<const ScanRecord> scans) {
  std::string out = "scan_id,slice_index,p0,p1\n";
  for (const auto& scan : scans) {
    for (const auto& slice : scan.slices) {
      if (!slice.confidence) {
        fail(ErrorCode::kInvalidArgument, "scan " + scan.scan_id + " slice " +
                                              std::to_string(slice.slice_index) +
                                              " has no confidence to write");
      }
      out += scan.scan_id + ',' + std::to_string(slice.slice_index) + ',' +
             textio::format_double(slice.confidence->p0()) + ',' +
             textio::format_double(slice.confidence->p1()) + '\n';
    }
  }
  textio::write_file(path, out);
}

void attach_confidences(Dataset& scans, const std::filesystem::path& path) {
  const auto lines = textio::read_lines(path);
  const std::string source = path.string();
  if (lines.empty() || lines.front() != "scan_id,slice_index,p0,p1") {
    fail(ErrorCode::kParse, source + ": header must be scan_id,slice_index,p0,p1");
  }
  std::map<std::pair<std::string, int>, SliceRecord*> lookup;
  for (auto& scan : scans) {
    for (auto& slice : scan.slices) {
      slice.confidence.reset();
      lookup[{scan.scan_id, slice.slice_index}] = &slice;
    }
  }
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const std::string where = source + ":" + std::to_string(row + 1);
    const auto fields = textio::split_fields(lines[row]);
    if (fields.size() != 4) fail(ErrorCode::kParse, where + ": expected 4 fields");
    const int index = static_cast<int>(textio::parse_int(fields[1], where));
    const auto it = lookup.find({std::string(fields[0]), index});
    if (it == lookup.end()) {
      fail(ErrorCode::kParse, where + ": unknown scan/slice " + std::string(fields[0]) +
                                  "/" + std::to_string(index));
    }
    if (it->second->confidence) {
      fail(ErrorCode::kParse, where + ": duplicate confidence row");
    }
    const double p0 = textio::parse_double(fields[2], where);
    const double p1 = textio::parse_double(fields[3], where);
    try {
      it->second->confidence = ConfidenceVector(p0, p1);
    } catch (const Error& e) {
      fail(ErrorCode::kParse, where + ": " + e.what());
    }
  }
  for (const auto& [key, slice] : lookup) {
    if (!slice->confidence) {
      fail(ErrorCode::kParse, source + ": missing confidence for " + key.first + "/" +
                                  std::to_string(key.second));
    }
  }
  validate_dataset(scans);
}

}  // namespace fuzzfuse
