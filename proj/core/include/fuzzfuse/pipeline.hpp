#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fuzzfuse/boostnet.hpp"
#include "fuzzfuse/choquet.hpp"
#include "fuzzfuse/error.hpp"
#include "fuzzfuse/imgprep.hpp"
#include "fuzzfuse/metrics.hpp"
#include "fuzzfuse/synth.hpp"

namespace fuzzfuse {

inline constexpr const char* kConfigSchema = "fuzzfuse-v1";

enum class LambdaMode { kExact, kGrid };

struct StageToggles {
  bool synth = true;
  bool preprocess = true;  // only runs when an image directory is configured
  bool screen = true;
  bool train = true;
  bool infer = true;
  bool fuse = true;
  bool evaluate = true;
  bool compare = true;
  bool report = true;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out_dir = "fuzzfuse-out";
  /// Existing scan dataset CSV; when empty the synth stage output is used.
  std::filesystem::path dataset_path;
  /// Directory of PGM slices (or of per-scan subdirectories) for preprocess.
  std::filesystem::path image_dir;
  bool quiet = false;
  StageToggles stages;

  SynthConfig synth;
  double test_fraction = 0.2;
  double validation_fraction = 0.2;
  PreprocessOptions preprocess;

  /// PCA on the concatenated features ("concatenated") or separately per
  /// column block of `pca_blocks` widths ("per_block").
  std::string pca_order = "concatenated";
  std::vector<int> pca_blocks;
  int pca_k = 50;
  bool screen_enabled = true;
  double screen_threshold_pct = 1.0;
  int forest_trees = 100;
  int forest_min_leaf = 5;
  int importance_repeats = 5;

  int ensemble_m = 10;
  double learning_rate = 0.1;
  int epochs = 100;
  double l2 = 1e-3;
  std::optional<double> early_stop_tolerance;

  LambdaMode lambda_mode = LambdaMode::kExact;
  LambdaGrid grid;

  /// Throws kConfig on any violated constraint.
  void validate() const;
};

/// Parses a "fuzzfuse-v1" config document on top of the defaults. Unknown
/// keys are rejected.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

/// Stable per-purpose seeds derived from the master seed.
enum class SeedStream : std::uint64_t {
  kSynth = 1,
  kSplit = 2,
  kValidation = 3,
  kForest = 4,
  kImportance = 5,
  kBoost = 6,
};
std::uint64_t stage_seed(const PipelineConfig& config, SeedStream stream);

// ---------------------------------------------------------------------------
// Fuser comparison

enum class FuserKind { kSingleBestSlice, kMeanPooling, kMajorityVote, kChoquetExact, kChoquetFixed };

struct FuserSpec {
  FuserKind kind = FuserKind::kChoquetExact;
  double lambda = 0.0;  // kChoquetFixed only

  std::string name() const;
};

/// Scan label from slice confidences. Ties go to class 1 for every fuser;
/// a Choquet fuser facing an all-uncertain scan also answers class 1 (the
/// fused vector would be (0.5, 0.5)).
Label fuse_label(std::span<const ConfidenceVector> slices, const FuserSpec& fuser);

struct FuserRow {
  std::string name;
  ConfusionMatrix cm;
  ClassificationMetrics metrics;
  std::size_t indeterminate = 0;
};

/// One row per fuser, in the given order.
std::vector<FuserRow> compare_fusers(std::span<const ScanRecord> scans,
                                     std::span<const FuserSpec> fusers);

/// The five standard rows: single best slice, mean pooling, majority vote,
/// Choquet exact-lambda, Choquet grid-lambda.
std::vector<FuserSpec> standard_fusers(double grid_lambda);

std::string compare_csv(std::span<const FuserRow> rows);

// ---------------------------------------------------------------------------
// Stages. Each reads its inputs from and writes its artifacts to out_dir, so
// any stage can be rerun from persisted intermediates.

struct DatasetSplits {
  std::set<std::string> train;       // fits screening and the ensemble
  std::set<std::string> validation;  // selects the grid lambda
  std::set<std::string> test;
};

void stage_synth(const PipelineConfig& config);
void stage_preprocess(const PipelineConfig& config);
void stage_screen(const PipelineConfig& config);
void stage_train(const PipelineConfig& config);
void stage_infer(const PipelineConfig& config);
void stage_fuse(const PipelineConfig& config);
void stage_evaluate(const PipelineConfig& config);
void stage_compare(const PipelineConfig& config);
void stage_report(const PipelineConfig& config);

struct PipelineReport {
  std::vector<std::string> stages_run;
  std::optional<double> slice_accuracy;
  std::optional<double> scan_accuracy;
  std::vector<FuserRow> comparison;
};

/// Runs the enabled stages in order. Stage failures are rethrown with the
/// stage name prefixed and the original error code kept.
PipelineReport run_pipeline(const PipelineConfig& config);

/// Runs a single named stage with the same error wrapping.
void run_stage(const std::string& name, const PipelineConfig& config);

/// CLI exit status for an error code: 2 missing/unreadable inputs,
/// 3 configuration or contract violations, 4 numeric failures.
int exit_code_for(ErrorCode code);

/// Split file helpers (split.json).
DatasetSplits read_splits(const std::filesystem::path& path);

/// Row-stacked slice features and per-slice labels (the scan label).
Eigen::MatrixXd slice_features(std::span<const ScanRecord> scans);
std::vector<Label> slice_labels(std::span<const ScanRecord> scans);

}  // namespace fuzzfuse
