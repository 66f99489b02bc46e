#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fuzzfuse/scancore.hpp"

namespace fuzzfuse {

/// Gaussian multi-slice scans. Negative scans are pure background; positive
/// scans carry one contiguous run of lesion slices whose informative
/// dimensions are shifted by class_separation.
struct SynthConfig {
  int scans_per_class = 50;
  int slices_min = 25;
  int slices_max = 40;
  int feature_dim = 16;
  std::vector<int> informative_dims{0, 1, 2, 3};
  double lesion_run_fraction = 0.2;
  double class_separation = 2.0;
  double noise_scale = 1.0;
  int scans_per_subject = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground truth kept per generated scan.
struct SynthTruth {
  Label label = 0;
  int slice_count = 0;
  int run_start = -1;  // first lesion slice (position), -1 for negatives
  int run_length = 0;
};

struct SynthDataset {
  Dataset scans;
  std::map<std::string, SynthTruth> truth;
  SynthConfig config;
};

/// ceil(fraction * n), at least 1 and at most n.
int lesion_run_length(double lesion_run_fraction, int slice_count);

/// Negatives first, then positives, scan ids "scan0000"...; subject ids are
/// assigned in consecutive blocks of scans_per_subject scans.
SynthDataset generate_dataset(const SynthConfig& config);

/// Ground-truth label recorded by the generator. Throws kInvalidArgument when
/// the scan id is unknown or its slice count disagrees with the metadata.
Label brute_force_scan_label(const ScanRecord& scan, const SynthDataset& dataset);
Label brute_force_scan_label(const ScanRecord& scan,
                             const std::map<std::string, SynthTruth>& truth);

/// Sidecar JSON: config echo plus one truth entry per scan.
std::string synth_metadata_json(const SynthDataset& dataset);
std::map<std::string, SynthTruth> parse_synth_truth(const std::string& json_text);

SynthConfig synth_config_from_json(const std::string& json_text, const SynthConfig& defaults);

}  // namespace fuzzfuse
