#include "fuzzfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <iostream>
#include <map>

#include "fuzzfuse/random.hpp"
#include "fuzzfuse/screening.hpp"
#include "fuzzfuse/svg.hpp"
#include "fuzzfuse/textio.hpp"
#include "json.hpp"

namespace fuzzfuse {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Artifact names inside out_dir.
constexpr const char* kDatasetCsv = "dataset.csv";
constexpr const char* kDatasetMeta = "dataset.meta.json";
constexpr const char* kSplitJson = "split.json";
constexpr const char* kPcaJson = "pca.json";
constexpr const char* kScreenCsv = "screen_report.csv";
constexpr const char* kScreenSvg = "screen_report.svg";
constexpr const char* kSeparationCsv = "separation_index.csv";
constexpr const char* kModelJson = "model.json";
constexpr const char* kScalingJson = "input_scaling.json";
constexpr const char* kConfidencesCsv = "confidences.csv";
constexpr const char* kFusionCsv = "fusion.csv";
constexpr const char* kTracesJson = "fusion_traces.json";
constexpr const char* kLambdaCsv = "lambda_search.csv";
constexpr const char* kLambdaJson = "lambda.json";
constexpr const char* kClassMetricsCsv = "metrics_classification.csv";
constexpr const char* kProbMetricsCsv = "metrics_probabilistic.csv";
constexpr const char* kScanConfusionSvg = "confusion_scan.svg";
constexpr const char* kSliceConfusionSvg = "confusion_slice.svg";
constexpr const char* kEvaluationJson = "evaluation.json";
constexpr const char* kCompareCsv = "compare.csv";
constexpr const char* kReportMd = "report.md";
constexpr const char* kSummaryJson = "summary.json";
constexpr const char* kPreprocessCsv = "preprocess.csv";

void log(const PipelineConfig& config, const std::string& stage, const std::string& message) {
  if (!config.quiet) std::cerr << "[fuzzfuse] " << stage << ": " << message << '\n';
}

fs::path artifact(const PipelineConfig& config, const char* name) { return config.out_dir / name; }

fs::path dataset_file(const PipelineConfig& config) {
  return config.dataset_path.empty() ? artifact(config, kDatasetCsv) : config.dataset_path;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) {
    fail(ErrorCode::kIo, "missing " + what + " '" + path.string() + "'");
  }
}

json parse_json_file(const fs::path& path, const std::string& what) {
  require_file(path, what);
  try {
    return json::parse(textio::read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, what + " '" + path.string() + "': " + e.what());
  }
}

std::string fmt(double value) { return textio::format_double(value); }

std::string fixed(double value, int decimals) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
  return buffer;
}

// ---------------------------------------------------------------------------
// Config parsing

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) fail(ErrorCode::kConfig, where + " must be a JSON object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* key) { return item.key() == key; });
    if (!known) fail(ErrorCode::kConfig, "unknown config key '" + where + "." + item.key() + "'");
  }
}

template <typename T>
void read_key(const json& obj, const char* key, T& out, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::kConfig, "config key '" + where + "." + key + "' has the wrong type");
  }
}

const json* section(const json& root, const char* key) {
  const auto it = root.find(key);
  return it == root.end() || it->is_null() ? nullptr : &*it;
}

std::string mode_name(LambdaMode mode) { return mode == LambdaMode::kExact ? "exact" : "grid"; }

// ---------------------------------------------------------------------------
// Shared stage helpers

Dataset load_dataset(const PipelineConfig& config) {
  const fs::path path = dataset_file(config);
  require_file(path, "dataset");
  Dataset scans = read_scans_csv(path);
  if (scans.empty()) fail(ErrorCode::kIo, "dataset '" + path.string() + "' has no scans");
  return scans;
}

Dataset load_scored_dataset(const PipelineConfig& config) {
  Dataset scans = load_dataset(config);
  const fs::path path = artifact(config, kConfidencesCsv);
  require_file(path, "slice confidences (run infer first)");
  attach_confidences(scans, path);
  return scans;
}

std::string split_json(const DatasetSplits& splits) {
  ojson out;
  out["schema"] = kConfigSchema;
  out["train"] = std::vector<std::string>(splits.train.begin(), splits.train.end());
  out["validation"] = std::vector<std::string>(splits.validation.begin(), splits.validation.end());
  out["test"] = std::vector<std::string>(splits.test.begin(), splits.test.end());
  return out.dump(1) + "\n";
}

std::string split_of(const DatasetSplits& splits, const std::string& scan_id) {
  if (splits.train.count(scan_id)) return "train";
  if (splits.validation.count(scan_id)) return "validation";
  if (splits.test.count(scan_id)) return "test";
  return "none";
}

struct InputTransform {
  BlockPca pca;
  std::vector<std::size_t> retained;
  std::vector<double> scale;
};

Matrix transform_features(const InputTransform& t, const Matrix& raw) {
  const Matrix projected = project(t.pca, raw);
  Matrix out(projected.rows(), static_cast<Eigen::Index>(t.retained.size()));
  for (std::size_t j = 0; j < t.retained.size(); ++j) {
    const auto src = static_cast<Eigen::Index>(t.retained[j]);
    if (src >= projected.cols()) {
      fail(ErrorCode::kParse, "screen report retains component " + std::to_string(src) +
                                  " beyond the PCA output width");
    }
    const double s = t.scale.empty() ? 1.0 : t.scale[j];
    out.col(static_cast<Eigen::Index>(j)) = projected.col(src) / s;
  }
  return out;
}

InputTransform load_screening(const PipelineConfig& config) {
  InputTransform t;
  const fs::path pca_path = artifact(config, kPcaJson);
  require_file(pca_path, "PCA basis (run screen first)");
  t.pca = pca_from_json(textio::read_file(pca_path));
  const fs::path report_path = artifact(config, kScreenCsv);
  require_file(report_path, "screen report (run screen first)");
  const auto lines = textio::read_lines(report_path);
  t.retained = parse_screen_report_csv(lines, config.screen_threshold_pct).retained;
  if (t.retained.empty()) fail(ErrorCode::kParse, "screen report retains no features");
  return t;
}

void load_scaling(const PipelineConfig& config, InputTransform& t) {
  const json doc = parse_json_file(artifact(config, kScalingJson), "input scaling (run train first)");
  try {
    const auto retained = doc.at("retained").get<std::vector<std::size_t>>();
    t.scale = doc.at("scale").get<std::vector<double>>();
    if (retained != t.retained || t.scale.size() != retained.size()) {
      fail(ErrorCode::kParse, "input scaling does not match the screen report");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("input scaling: ") + e.what());
  }
}

bool all_uncertain(std::span<const ConfidenceVector> slices) {
  return std::all_of(slices.begin(), slices.end(),
                     [](const ConfidenceVector& cv) { return uncertainty_weight(cv) == 0.0; });
}

struct LambdaChoice {
  double grid_lambda = 0.0;
  double grid_accuracy = 0.0;
};

LambdaChoice load_lambda_choice(const PipelineConfig& config) {
  const json doc = parse_json_file(artifact(config, kLambdaJson), "lambda selection (run fuse first)");
  LambdaChoice c;
  try {
    c.grid_lambda = doc.at("grid_lambda").get<double>();
    c.grid_accuracy = doc.at("grid_validation_accuracy").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("lambda selection: ") + e.what());
  }
  return c;
}

std::vector<FuserRow> comparison_rows(const PipelineConfig& config) {
  const Dataset scans = load_scored_dataset(config);
  const DatasetSplits splits = read_splits(artifact(config, kSplitJson));
  const Dataset test = select_scans(scans, splits.test);
  const LambdaChoice choice = load_lambda_choice(config);
  const auto fusers = standard_fusers(choice.grid_lambda);
  return compare_fusers(test, fusers);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, what); };
  synth.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) bad("split.test_fraction must lie in (0,1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    bad("split.validation_fraction must lie in [0,1)");
  }
  if (!(preprocess.min_fraction >= 0.0 && preprocess.min_fraction <= 1.0)) {
    bad("preprocess.min_fraction must lie in [0,1]");
  }
  if (pca_order != "concatenated" && pca_order != "per_block") {
    bad("screening.pca_order must be 'concatenated' or 'per_block'");
  }
  if (pca_order == "per_block") {
    if (pca_blocks.empty()) bad("screening.blocks must list block widths for per_block PCA");
    for (int w : pca_blocks) {
      if (w < 1) bad("screening.blocks widths must be >= 1");
    }
  }
  if (pca_k < 1) bad("screening.pca_k must be >= 1");
  if (!(screen_threshold_pct >= 0.0 && screen_threshold_pct <= 100.0)) {
    bad("screening.threshold_pct must lie in [0,100]");
  }
  if (forest_trees < 1) bad("screening.trees must be >= 1");
  if (forest_min_leaf < 1) bad("screening.min_leaf must be >= 1");
  if (importance_repeats < 1) bad("screening.repeats must be >= 1");
  if (ensemble_m < 1) bad("boost.components must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("boost.learning_rate must be > 0");
  if (epochs < 1) bad("boost.epochs must be >= 1");
  if (!(l2 >= 0.0) || !std::isfinite(l2)) bad("boost.l2 must be >= 0");
  if (early_stop_tolerance && !(*early_stop_tolerance >= 0.0)) {
    bad("boost.early_stop_tolerance must be >= 0");
  }
  try {
    grid.validate();
  } catch (const Error& e) {
    bad(std::string("fusion.grid: ") + e.what());
  }
}

PipelineConfig config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"schema", "seed", "out", "quiet", "input", "stages", "synth", "split",
                    "preprocess", "screening", "boost", "fusion"},
             "config");
  const auto schema = root.find("schema");
  if (schema == root.end() || !schema->is_string() || schema->get<std::string>() != kConfigSchema) {
    fail(ErrorCode::kConfig, std::string("config schema must be \"") + kConfigSchema + "\"");
  }

  PipelineConfig c;
  read_key(root, "seed", c.seed, "config");
  read_key(root, "quiet", c.quiet, "config");
  std::string out;
  read_key(root, "out", out, "config");
  if (!out.empty()) c.out_dir = out;

  if (const json* s = section(root, "input")) {
    check_keys(*s, {"dataset", "images"}, "input");
    std::string dataset, images;
    read_key(*s, "dataset", dataset, "input");
    read_key(*s, "images", images, "input");
    c.dataset_path = dataset;
    c.image_dir = images;
  }
  if (const json* s = section(root, "stages")) {
    check_keys(*s, {"synth", "preprocess", "screen", "train", "infer", "fuse", "evaluate", "compare",
                    "report"},
               "stages");
    read_key(*s, "synth", c.stages.synth, "stages");
    read_key(*s, "preprocess", c.stages.preprocess, "stages");
    read_key(*s, "screen", c.stages.screen, "stages");
    read_key(*s, "train", c.stages.train, "stages");
    read_key(*s, "infer", c.stages.infer, "stages");
    read_key(*s, "fuse", c.stages.fuse, "stages");
    read_key(*s, "evaluate", c.stages.evaluate, "stages");
    read_key(*s, "compare", c.stages.compare, "stages");
    read_key(*s, "report", c.stages.report, "stages");
  }
  if (const json* s = section(root, "synth")) {
    check_keys(*s, {"scans_per_class", "slices_min", "slices_max", "feature_dim", "informative_dims",
                    "lesion_run_fraction", "class_separation", "noise_scale", "scans_per_subject"},
               "synth");
    read_key(*s, "scans_per_class", c.synth.scans_per_class, "synth");
    read_key(*s, "slices_min", c.synth.slices_min, "synth");
    read_key(*s, "slices_max", c.synth.slices_max, "synth");
    read_key(*s, "feature_dim", c.synth.feature_dim, "synth");
    read_key(*s, "informative_dims", c.synth.informative_dims, "synth");
    read_key(*s, "lesion_run_fraction", c.synth.lesion_run_fraction, "synth");
    read_key(*s, "class_separation", c.synth.class_separation, "synth");
    read_key(*s, "noise_scale", c.synth.noise_scale, "synth");
    read_key(*s, "scans_per_subject", c.synth.scans_per_subject, "synth");
  }
  if (const json* s = section(root, "split")) {
    check_keys(*s, {"test_fraction", "validation_fraction"}, "split");
    read_key(*s, "test_fraction", c.test_fraction, "split");
    read_key(*s, "validation_fraction", c.validation_fraction, "split");
  }
  if (const json* s = section(root, "preprocess")) {
    check_keys(*s, {"min_fraction", "connectivity"}, "preprocess");
    read_key(*s, "min_fraction", c.preprocess.min_fraction, "preprocess");
    int connectivity = static_cast<int>(c.preprocess.connectivity);
    read_key(*s, "connectivity", connectivity, "preprocess");
    if (connectivity != 4 && connectivity != 8) {
      fail(ErrorCode::kConfig, "preprocess.connectivity must be 4 or 8");
    }
    c.preprocess.connectivity = connectivity == 4 ? Connectivity::kFour : Connectivity::kEight;
  }
  if (const json* s = section(root, "screening")) {
    check_keys(*s, {"enabled", "pca_k", "pca_order", "blocks", "threshold_pct", "trees", "min_leaf",
                    "repeats"},
               "screening");
    read_key(*s, "enabled", c.screen_enabled, "screening");
    read_key(*s, "pca_k", c.pca_k, "screening");
    read_key(*s, "pca_order", c.pca_order, "screening");
    read_key(*s, "blocks", c.pca_blocks, "screening");
    read_key(*s, "threshold_pct", c.screen_threshold_pct, "screening");
    read_key(*s, "trees", c.forest_trees, "screening");
    read_key(*s, "min_leaf", c.forest_min_leaf, "screening");
    read_key(*s, "repeats", c.importance_repeats, "screening");
  }
  if (const json* s = section(root, "boost")) {
    check_keys(*s, {"components", "learning_rate", "epochs", "l2", "early_stop_tolerance"}, "boost");
    read_key(*s, "components", c.ensemble_m, "boost");
    read_key(*s, "learning_rate", c.learning_rate, "boost");
    read_key(*s, "epochs", c.epochs, "boost");
    read_key(*s, "l2", c.l2, "boost");
    if (const auto it = s->find("early_stop_tolerance"); it != s->end() && !it->is_null()) {
      double tol = 0.0;
      read_key(*s, "early_stop_tolerance", tol, "boost");
      c.early_stop_tolerance = tol;
    }
  }
  if (const json* s = section(root, "fusion")) {
    check_keys(*s, {"lambda_mode", "grid"}, "fusion");
    std::string mode = mode_name(c.lambda_mode);
    read_key(*s, "lambda_mode", mode, "fusion");
    if (mode == "exact") {
      c.lambda_mode = LambdaMode::kExact;
    } else if (mode == "grid") {
      c.lambda_mode = LambdaMode::kGrid;
    } else {
      fail(ErrorCode::kConfig, "fusion.lambda_mode must be 'exact' or 'grid'");
    }
    if (const json* g = section(*s, "grid")) {
      check_keys(*g, {"lo", "hi", "steps"}, "fusion.grid");
      read_key(*g, "lo", c.grid.lo, "fusion.grid");
      read_key(*g, "hi", c.grid.hi, "fusion.grid");
      read_key(*g, "steps", c.grid.steps, "fusion.grid");
    }
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kIo, "config file '" + path.string() + "' not found");
  return config_from_json(textio::read_file(path));
}

std::string config_to_json(const PipelineConfig& c) {
  ojson out;
  out["schema"] = kConfigSchema;
  out["seed"] = c.seed;
  out["input"] = {{"dataset", c.dataset_path.string()}, {"images", c.image_dir.string()}};
  out["stages"] = {{"synth", c.stages.synth},       {"preprocess", c.stages.preprocess},
                   {"screen", c.stages.screen},     {"train", c.stages.train},
                   {"infer", c.stages.infer},       {"fuse", c.stages.fuse},
                   {"evaluate", c.stages.evaluate}, {"compare", c.stages.compare},
                   {"report", c.stages.report}};
  out["synth"] = {{"scans_per_class", c.synth.scans_per_class},
                  {"slices_min", c.synth.slices_min},
                  {"slices_max", c.synth.slices_max},
                  {"feature_dim", c.synth.feature_dim},
                  {"informative_dims", c.synth.informative_dims},
                  {"lesion_run_fraction", c.synth.lesion_run_fraction},
                  {"class_separation", c.synth.class_separation},
                  {"noise_scale", c.synth.noise_scale},
                  {"scans_per_subject", c.synth.scans_per_subject}};
  out["split"] = {{"test_fraction", c.test_fraction}, {"validation_fraction", c.validation_fraction}};
  out["preprocess"] = {{"min_fraction", c.preprocess.min_fraction},
                       {"connectivity", static_cast<int>(c.preprocess.connectivity)}};
  out["screening"] = {{"enabled", c.screen_enabled},
                      {"pca_k", c.pca_k},
                      {"pca_order", c.pca_order},
                      {"blocks", c.pca_blocks},
                      {"threshold_pct", c.screen_threshold_pct},
                      {"trees", c.forest_trees},
                      {"min_leaf", c.forest_min_leaf},
                      {"repeats", c.importance_repeats}};
  ojson boost = {{"components", c.ensemble_m},
                 {"learning_rate", c.learning_rate},
                 {"epochs", c.epochs},
                 {"l2", c.l2}};
  boost["early_stop_tolerance"] =
      c.early_stop_tolerance ? ojson(*c.early_stop_tolerance) : ojson(nullptr);
  out["boost"] = std::move(boost);
  out["fusion"] = {{"lambda_mode", mode_name(c.lambda_mode)},
                   {"grid", {{"lo", c.grid.lo}, {"hi", c.grid.hi}, {"steps", c.grid.steps}}}};
  return out.dump(2) + "\n";
}

std::uint64_t stage_seed(const PipelineConfig& config, SeedStream stream) {
  return derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

// ---------------------------------------------------------------------------
// Fusers

std::string FuserSpec::name() const {
  switch (kind) {
    case FuserKind::kSingleBestSlice: return "single_best_slice";
    case FuserKind::kMeanPooling: return "mean_pooling";
    case FuserKind::kMajorityVote: return "majority_vote";
    case FuserKind::kChoquetExact: return "choquet_exact";
    case FuserKind::kChoquetFixed: return "choquet_grid";
  }
  return "unknown";
}

Label fuse_label(std::span<const ConfidenceVector> slices, const FuserSpec& fuser) {
  if (slices.empty()) fail(ErrorCode::kInvalidArgument, "cannot fuse a scan without slices");
  switch (fuser.kind) {
    case FuserKind::kSingleBestSlice: {
      std::size_t best = 0;
      for (std::size_t i = 1; i < slices.size(); ++i) {
        if (uncertainty_weight(slices[i]) > uncertainty_weight(slices[best])) best = i;
      }
      return slices[best].p1() >= slices[best].p0() ? 1 : 0;
    }
    case FuserKind::kMeanPooling: {
      double sum = 0.0;
      for (const auto& cv : slices) sum += cv.p1();
      return sum / static_cast<double>(slices.size()) >= 0.5 ? 1 : 0;
    }
    case FuserKind::kMajorityVote: {
      std::size_t positive = 0;
      for (const auto& cv : slices) positive += cv.p1() >= cv.p0() ? 1 : 0;
      return 2 * positive >= slices.size() ? 1 : 0;
    }
    case FuserKind::kChoquetExact:
    case FuserKind::kChoquetFixed: {
      if (all_uncertain(slices)) return 1;
      const LambdaSpec spec = fuser.kind == FuserKind::kChoquetExact ? LambdaSpec::exact()
                                                                      : LambdaSpec::fixed(fuser.lambda);
      return fuse_scan(slices, spec).predicted_label;
    }
  }
  fail(ErrorCode::kInvalidArgument, "unknown fuser");
}

std::vector<FuserRow> compare_fusers(std::span<const ScanRecord> scans,
                                     std::span<const FuserSpec> fusers) {
  if (scans.empty()) fail(ErrorCode::kInvalidArgument, "compare_fusers needs at least one scan");
  if (fusers.empty()) fail(ErrorCode::kInvalidArgument, "compare_fusers needs at least one fuser");
  std::vector<std::vector<ConfidenceVector>> slices;
  std::vector<Label> labels;
  slices.reserve(scans.size());
  for (const auto& scan : scans) {
    slices.push_back(scan_confidences(scan));
    labels.push_back(scan.label);
  }
  std::vector<FuserRow> rows;
  for (const auto& fuser : fusers) {
    FuserRow row;
    row.name = fuser.name();
    std::vector<Label> predictions;
    predictions.reserve(scans.size());
    const bool choquet =
        fuser.kind == FuserKind::kChoquetExact || fuser.kind == FuserKind::kChoquetFixed;
    for (const auto& s : slices) {
      if (choquet && all_uncertain(s)) ++row.indeterminate;
      predictions.push_back(fuse_label(s, fuser));
    }
    row.cm = confusion(labels, predictions);
    row.metrics = classification_metrics(row.cm);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<FuserSpec> standard_fusers(double grid_lambda) {
  return {{FuserKind::kSingleBestSlice, 0.0},
          {FuserKind::kMeanPooling, 0.0},
          {FuserKind::kMajorityVote, 0.0},
          {FuserKind::kChoquetExact, 0.0},
          {FuserKind::kChoquetFixed, grid_lambda}};
}

std::string compare_csv(std::span<const FuserRow> rows) {
  // classification header with "stage" renamed to "fuser", plus indeterminate count
  std::string out = "fuser" + classification_csv_header().substr(5) + ",indeterminate\n";
  for (const auto& row : rows) {
    out += classification_csv_row(row.name, row.cm) + "," + std::to_string(row.indeterminate) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Helpers shared with tests

Eigen::MatrixXd slice_features(std::span<const ScanRecord> scans) {
  const std::size_t d = feature_dim(scans);
  if (d == 0) fail(ErrorCode::kInvalidArgument, "dataset carries no slice features");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(slice_count(scans)), static_cast<Eigen::Index>(d));
  Eigen::Index row = 0;
  for (const auto& scan : scans) {
    for (const auto& slice : scan.slices) {
      if (slice.features.size() != d) {
        fail(ErrorCode::kInvalidArgument, "scan " + scan.scan_id + " has inconsistent feature length");
      }
      for (std::size_t j = 0; j < d; ++j) out(row, static_cast<Eigen::Index>(j)) = slice.features[j];
      ++row;
    }
  }
  return out;
}

std::vector<Label> slice_labels(std::span<const ScanRecord> scans) {
  std::vector<Label> out;
  out.reserve(slice_count(scans));
  for (const auto& scan : scans) out.insert(out.end(), scan.slices.size(), scan.label);
  return out;
}

DatasetSplits read_splits(const fs::path& path) {
  const json doc = parse_json_file(path, "split file (run screen first)");
  DatasetSplits s;
  try {
    for (const auto& id : doc.at("train")) s.train.insert(id.get<std::string>());
    for (const auto& id : doc.at("validation")) s.validation.insert(id.get<std::string>());
    for (const auto& id : doc.at("test")) s.test.insert(id.get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "split file '" + path.string() + "': " + e.what());
  }
  return s;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo:
    case ErrorCode::kParse:
      return 2;
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return 3;
    case ErrorCode::kNumeric:
    case ErrorCode::kDegenerateInput:
    case ErrorCode::kIndeterminate:
      return 4;
  }
  return 4;
}

// ---------------------------------------------------------------------------
// Stages

void stage_synth(const PipelineConfig& config) {
  SynthConfig sc = config.synth;
  sc.seed = stage_seed(config, SeedStream::kSynth);
  const SynthDataset data = generate_dataset(sc);
  write_scans_csv(artifact(config, kDatasetCsv), data.scans);
  textio::write_file(artifact(config, kDatasetMeta), synth_metadata_json(data) + "\n");
  log(config, "synth", std::to_string(data.scans.size()) + " scans, " +
                           std::to_string(slice_count(data.scans)) + " slices");
}

void stage_preprocess(const PipelineConfig& config) {
  if (config.image_dir.empty()) {
    fail(ErrorCode::kIo, "no image directory configured (input.images or --input)");
  }
  if (!fs::is_directory(config.image_dir)) {
    fail(ErrorCode::kIo, "image directory '" + config.image_dir.string() + "' not found");
  }
  // Either PGM files directly (one scan) or one subdirectory of PGMs per scan.
  std::map<std::string, std::vector<fs::path>> scans;
  for (const auto& entry : fs::directory_iterator(config.image_dir)) {
    if (entry.is_directory()) {
      auto& files = scans[entry.path().filename().string()];
      for (const auto& inner : fs::directory_iterator(entry.path())) {
        if (inner.is_regular_file() && inner.path().extension() == ".pgm") files.push_back(inner.path());
      }
    } else if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
      scans[config.image_dir.filename().string()].push_back(entry.path());
    }
  }
  std::size_t total = 0;
  std::size_t kept = 0;
  std::string csv =
      "scan_id,file,threshold,degenerate,foreground_fraction,informative,row,col,height,width\n";
  for (auto& [scan_id, files] : scans) {
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const GrayImage img = read_pgm(file);
      const PreprocessResult r = preprocess_slice(img, config.preprocess);
      ++total;
      csv += scan_id + "," + file.filename().string() + "," + std::to_string(r.otsu.threshold) + "," +
             (r.otsu.degenerate ? "1" : "0") + "," + fmt(r.foreground_fraction) + "," +
             (r.informative ? "1" : "0");
      if (r.box) {
        csv += "," + std::to_string(r.box->row) + "," + std::to_string(r.box->col) + "," +
               std::to_string(r.box->height) + "," + std::to_string(r.box->width);
      } else {
        csv += ",,,,";
      }
      csv += "\n";
      if (r.informative && r.cropped) {
        ++kept;
        write_pgm(config.out_dir / "preprocessed" / scan_id / file.filename(), *r.cropped);
      }
    }
  }
  if (total == 0) {
    fail(ErrorCode::kIo, "image directory '" + config.image_dir.string() + "' holds no .pgm slices");
  }
  textio::write_file(artifact(config, kPreprocessCsv), csv);
  log(config, "preprocess", std::to_string(kept) + " of " + std::to_string(total) + " slices informative");
}

void stage_screen(const PipelineConfig& config) {
  const Dataset scans = load_dataset(config);
  validate_dataset(scans);

  const DatasetSplit outer =
      split_subject_independent(scans, config.test_fraction, stage_seed(config, SeedStream::kSplit));
  DatasetSplits splits;
  splits.test = outer.test_scan_ids;
  if (config.validation_fraction > 0.0) {
    const Dataset train_all = select_scans(scans, outer.train_scan_ids);
    const DatasetSplit inner = split_subject_independent(train_all, config.validation_fraction,
                                                         stage_seed(config, SeedStream::kValidation));
    splits.train = inner.train_scan_ids;
    splits.validation = inner.test_scan_ids;
  } else {
    splits.train = outer.train_scan_ids;
  }
  textio::write_file(artifact(config, kSplitJson), split_json(splits));

  const Dataset train = select_scans(scans, splits.train);
  const Matrix x = slice_features(train);
  const std::vector<Label> y = slice_labels(train);

  std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks;
  if (config.pca_order == "per_block") {
    Eigen::Index begin = 0;
    for (int w : config.pca_blocks) {
      blocks.emplace_back(begin, begin + w);
      begin += w;
    }
    if (begin != x.cols()) {
      fail(ErrorCode::kConfig, "screening.blocks widths sum to " + std::to_string(begin) +
                                   " but the dataset has " + std::to_string(x.cols()) + " features");
    }
  } else {
    blocks.emplace_back(0, x.cols());
  }
  const BlockPca pca = fit_block_pca(x, blocks, config.pca_k);
  textio::write_file(artifact(config, kPcaJson), pca_to_json(pca) + "\n");
  const Matrix z = project(pca, x);

  FeatureScreenReport report;
  if (config.screen_enabled) {
    ForestConfig fc;
    fc.trees = config.forest_trees;
    fc.min_leaf = config.forest_min_leaf;
    fc.seed = stage_seed(config, SeedStream::kForest);
    const Forest forest = fit_forest(z, y, fc);
    report = permutation_importance(forest, z, y, config.importance_repeats,
                                    stage_seed(config, SeedStream::kImportance),
                                    config.screen_threshold_pct);
    if (report.retained.empty()) {
      // No component carries measurable signal; keep all of them.
      for (Eigen::Index j = 0; j < z.cols(); ++j) report.retained.push_back(static_cast<std::size_t>(j));
      log(config, "screen", "no component passed the threshold; retaining all");
    }
  } else {
    const std::vector<double> zeros(static_cast<std::size_t>(z.cols()), 0.0);
    report = make_screen_report(zeros, 0.0);
  }
  textio::write_file(artifact(config, kScreenCsv), screen_report_csv(report));
  textio::write_file(artifact(config, kScreenSvg),
                     svg::importance_chart(report, "Component contribution (OOB permutation)"));

  std::string sep = "feature,separation_index,infinite\n";
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const std::vector<double> column(z.col(j).data(), z.col(j).data() + z.rows());
    const SeparationIndex si = separation_index(column, y);
    sep += std::to_string(j) + "," + (si.infinite ? std::string("inf") : fmt(si.value)) + "," +
           (si.infinite ? "1" : "0") + "\n";
  }
  textio::write_file(artifact(config, kSeparationCsv), sep);
  log(config, "screen", std::to_string(report.retained.size()) + " of " + std::to_string(z.cols()) +
                            " components retained; " + std::to_string(splits.train.size()) + "/" +
                            std::to_string(splits.validation.size()) + "/" +
                            std::to_string(splits.test.size()) + " train/validation/test scans");
}

void stage_train(const PipelineConfig& config) {
  const Dataset scans = load_dataset(config);
  const DatasetSplits splits = read_splits(artifact(config, kSplitJson));
  InputTransform t = load_screening(config);
  const Dataset train = select_scans(scans, splits.train);
  if (train.empty()) fail(ErrorCode::kParse, "split file lists no training scans present in the dataset");

  Matrix x = transform_features(t, slice_features(train));
  // Unit-variance inputs keep the fixed learning rate meaningful across datasets.
  t.scale.assign(static_cast<std::size_t>(x.cols()), 1.0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    const double var = (x.col(j).array() - mean).square().sum() / static_cast<double>(x.rows());
    const double s = var > 0.0 ? std::sqrt(var) : 1.0;
    t.scale[static_cast<std::size_t>(j)] = s;
    x.col(j) /= s;
  }
  ojson scaling;
  scaling["retained"] = t.retained;
  scaling["scale"] = t.scale;
  textio::write_file(artifact(config, kScalingJson), scaling.dump(1) + "\n");

  BoostConfig bc;
  bc.components = config.ensemble_m;
  bc.train.learning_rate = config.learning_rate;
  bc.train.epochs = config.epochs;
  bc.train.l2 = config.l2;
  bc.seed = stage_seed(config, SeedStream::kBoost);
  bc.early_stop_tolerance = config.early_stop_tolerance;
  const BoostEnsemble ensemble = train_ensemble(x, slice_labels(train), bc);
  textio::write_file(artifact(config, kModelJson), ensemble_to_json(ensemble) + "\n");
  const double acc = ensemble.train_log.empty() ? 0.0 : ensemble.train_log.back().ensemble_accuracy;
  log(config, "train", std::to_string(ensemble.components.size()) +
                           " components, training slice accuracy " + fixed(acc, 4));
}

void stage_infer(const PipelineConfig& config) {
  Dataset scans = load_dataset(config);
  InputTransform t = load_screening(config);
  load_scaling(config, t);
  const json model_doc = parse_json_file(artifact(config, kModelJson), "model (run train first)");
  const BoostEnsemble ensemble = ensemble_from_json(model_doc.dump());
  const Matrix x = transform_features(t, slice_features(scans));
  if (x.cols() != ensemble.input_dim()) {
    fail(ErrorCode::kParse, "model input width does not match the screened features");
  }
  const Eigen::VectorXd p = ensemble_positive(ensemble, x);
  Eigen::Index row = 0;
  for (auto& scan : scans) {
    for (auto& slice : scan.slices) {
      const double p1 = p(row++);
      if (!std::isfinite(p1)) fail(ErrorCode::kNumeric, "non-finite slice confidence in " + scan.scan_id);
      slice.confidence = ConfidenceVector::from_positive(std::clamp(p1, 0.0, 1.0));
    }
  }
  write_confidences_csv(artifact(config, kConfidencesCsv), scans);
  log(config, "infer", std::to_string(row) + " slice confidences written");
}

void stage_fuse(const PipelineConfig& config) {
  const Dataset scans = load_scored_dataset(config);
  const DatasetSplits splits = read_splits(artifact(config, kSplitJson));

  // Grid lambda from validation scans (training scans when none were carved out).
  const Dataset selection = select_scans(scans, splits.validation.empty() ? splits.train : splits.validation);
  if (selection.empty()) fail(ErrorCode::kParse, "no scans available for lambda selection");
  const GridSearchResult grid = grid_search_lambda(selection, config.grid);
  std::string grid_csv = "lambda,valid,accuracy\n";
  for (const auto& point : grid.evaluated) {
    grid_csv += fmt(point.lambda) + "," + (point.valid ? "1" : "0") + "," + fmt(point.accuracy) + "\n";
  }
  textio::write_file(artifact(config, kLambdaCsv), grid_csv);
  ojson choice;
  choice["lambda_mode"] = mode_name(config.lambda_mode);
  choice["grid_lambda"] = grid.best_lambda;
  choice["grid_validation_accuracy"] = grid.best_accuracy;
  choice["selection_scans"] = selection.size();
  choice["selection_split"] = splits.validation.empty() ? "train" : "validation";
  textio::write_file(artifact(config, kLambdaJson), choice.dump(1) + "\n");

  const LambdaSpec spec = config.lambda_mode == LambdaMode::kExact ? LambdaSpec::exact()
                                                                   : LambdaSpec::fixed(grid.best_lambda);
  std::string csv = "scan_id,split,label,status,lambda,p0,p1,predicted\n";
  std::string traces = "[\n";
  bool first = true;
  for (const auto& scan : scans) {
    const auto slices = scan_confidences(scan);
    const std::string prefix = scan.scan_id + "," + split_of(splits, scan.scan_id) + "," +
                               std::to_string(scan.label) + ",";
    if (all_uncertain(slices)) {
      csv += prefix + "indeterminate,NA,0.5,0.5,1\n";
      continue;
    }
    const FusionTrace trace = fuse_scan_traced(slices, spec);
    const auto& r = trace.result;
    csv += prefix + "ok," + fmt(r.lambda) + "," + fmt(r.fused.p0()) + "," + fmt(r.fused.p1()) + "," +
           std::to_string(r.predicted_label) + "\n";
    traces += (first ? "" : ",\n") + fusion_trace_json(scan.scan_id, trace);
    first = false;
  }
  traces += "\n]\n";
  textio::write_file(artifact(config, kFusionCsv), csv);
  textio::write_file(artifact(config, kTracesJson), traces);
  log(config, "fuse", std::to_string(scans.size()) + " scans fused (" + spec.describe() +
                          "); grid lambda " + fmt(grid.best_lambda));
}

void stage_evaluate(const PipelineConfig& config) {
  const Dataset scans = load_scored_dataset(config);
  const DatasetSplits splits = read_splits(artifact(config, kSplitJson));
  const Dataset test = select_scans(scans, splits.test);
  if (test.empty()) fail(ErrorCode::kParse, "split file lists no test scans present in the dataset");

  std::vector<Label> slice_y, slice_pred;
  std::vector<double> slice_p;
  for (const auto& scan : test) {
    for (const auto& cv : scan_confidences(scan)) {
      slice_y.push_back(scan.label);
      slice_p.push_back(cv.p1());
      slice_pred.push_back(cv.p1() >= 0.5 ? 1 : 0);
    }
  }

  const fs::path fusion_path = artifact(config, kFusionCsv);
  require_file(fusion_path, "fusion results (run fuse first)");
  const auto lines = textio::read_lines(fusion_path);
  if (lines.empty() || lines.front() != "scan_id,split,label,status,lambda,p0,p1,predicted") {
    fail(ErrorCode::kParse, "fusion.csv has an unexpected header");
  }
  std::map<std::string, std::pair<double, Label>> fused;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = textio::split_fields(lines[i]);
    if (f.size() != 8) fail(ErrorCode::kParse, "fusion.csv line " + std::to_string(i + 1) + ": expected 8 fields");
    const std::string where = "fusion.csv line " + std::to_string(i + 1);
    fused[std::string(f[0])] = {textio::parse_double(f[6], where),
                                static_cast<Label>(textio::parse_int(f[7], where))};
  }
  std::vector<Label> scan_y, scan_pred;
  std::vector<double> scan_p;
  for (const auto& scan : test) {
    const auto it = fused.find(scan.scan_id);
    if (it == fused.end()) fail(ErrorCode::kParse, "fusion.csv lacks scan " + scan.scan_id);
    scan_y.push_back(scan.label);
    scan_p.push_back(it->second.first);
    scan_pred.push_back(it->second.second);
  }

  const ConfusionMatrix slice_cm = confusion(slice_y, slice_pred);
  const ConfusionMatrix scan_cm = confusion(scan_y, scan_pred);
  const std::string scan_stage = "scan_test_" + mode_name(config.lambda_mode);
  textio::write_file(artifact(config, kClassMetricsCsv),
                     classification_csv_header() + "\n" + classification_csv_row("slice_test", slice_cm) +
                         "\n" + classification_csv_row(scan_stage, scan_cm) + "\n");
  textio::write_file(artifact(config, kProbMetricsCsv),
                     probabilistic_csv_header() + "\n" +
                         probabilistic_csv_row("slice_test", probabilistic_metrics(slice_y, slice_p)) + "\n" +
                         probabilistic_csv_row(scan_stage, probabilistic_metrics(scan_y, scan_p)) + "\n");
  const std::array<std::string, 2> names{"class 0", "class 1"};
  textio::write_file(artifact(config, kScanConfusionSvg),
                     svg::confusion_matrix(scan_cm, "Scan-level (fused, test)", names));
  textio::write_file(artifact(config, kSliceConfusionSvg),
                     svg::confusion_matrix(slice_cm, "Slice-level (test)", names));

  const auto slice_m = classification_metrics(slice_cm);
  const auto scan_m = classification_metrics(scan_cm);
  ojson eval;
  eval["test_scans"] = scan_y.size();
  eval["test_slices"] = slice_y.size();
  eval["lambda_mode"] = mode_name(config.lambda_mode);
  eval["slice_accuracy"] = slice_m.accuracy ? ojson(*slice_m.accuracy) : ojson(nullptr);
  eval["scan_accuracy"] = scan_m.accuracy ? ojson(*scan_m.accuracy) : ojson(nullptr);
  textio::write_file(artifact(config, kEvaluationJson), eval.dump(1) + "\n");
  log(config, "evaluate", "slice accuracy " + format_metric(slice_m.accuracy) + ", scan accuracy " +
                              format_metric(scan_m.accuracy));
}

void stage_compare(const PipelineConfig& config) {
  const auto rows = comparison_rows(config);
  textio::write_file(artifact(config, kCompareCsv), compare_csv(rows));
  std::string summary;
  for (const auto& row : rows) {
    summary += (summary.empty() ? "" : ", ") + row.name + " " + format_metric(row.metrics.accuracy);
  }
  log(config, "compare", summary);
}

void stage_report(const PipelineConfig& config) {
  const json eval = parse_json_file(artifact(config, kEvaluationJson), "evaluation (run evaluate first)");
  const LambdaChoice choice = load_lambda_choice(config);
  const InputTransform t = load_screening(config);
  const fs::path compare_path = artifact(config, kCompareCsv);
  require_file(compare_path, "comparison table (run compare first)");
  const auto compare_lines = textio::read_lines(compare_path);
  const auto class_lines = textio::read_lines(artifact(config, kClassMetricsCsv));
  const auto prob_lines = textio::read_lines(artifact(config, kProbMetricsCsv));

  auto table = [](const std::vector<std::string>& lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string row = "|";
      for (auto field : textio::split_fields(lines[i])) row += " " + std::string(field) + " |";
      out += row + "\n";
      if (i == 0) {
        std::string sep = "|";
        for (std::size_t k = 0; k < textio::split_fields(lines[0]).size(); ++k) sep += "---|";
        out += sep + "\n";
      }
    }
    return out;
  };
  auto value_or_na = [](const json& v) { return v.is_null() ? std::string("NA") : fmt(v.get<double>()); };

  std::string md = "# fuzzfuse run report\n\n";
  md += "- seed: " + std::to_string(config.seed) + "\n";
  md += "- lambda mode: " + mode_name(config.lambda_mode) + "\n";
  md += "- grid lambda (selection accuracy " + fmt(choice.grid_accuracy) + "): " + fmt(choice.grid_lambda) + "\n";
  md += "- retained components: " + std::to_string(t.retained.size()) + "\n";
  md += "- test scans: " + std::to_string(eval.value("test_scans", 0)) +
        ", test slices: " + std::to_string(eval.value("test_slices", 0)) + "\n";
  md += "- slice accuracy: " + value_or_na(eval["slice_accuracy"]) + "\n";
  md += "- scan accuracy: " + value_or_na(eval["scan_accuracy"]) + "\n\n";
  md += "## Classification\n\n" + table(class_lines) + "\n";
  md += "## Probabilistic fit\n\n" + table(prob_lines) + "\n";
  md += "## Fuser comparison (test scans)\n\n" + table(compare_lines) + "\n";
  md += "Artifacts: screen_report.svg, confusion_scan.svg, confusion_slice.svg, fusion_traces.json.\n";
  textio::write_file(artifact(config, kReportMd), md);

  ojson summary;
  summary["schema"] = kConfigSchema;
  summary["seed"] = config.seed;
  summary["lambda_mode"] = mode_name(config.lambda_mode);
  summary["grid_lambda"] = choice.grid_lambda;
  summary["retained_components"] = t.retained.size();
  summary["slice_accuracy"] = eval["slice_accuracy"];
  summary["scan_accuracy"] = eval["scan_accuracy"];
  ojson fusers = ojson::object();
  for (std::size_t i = 1; i < compare_lines.size(); ++i) {
    const auto f = textio::split_fields(compare_lines[i]);
    if (f.size() < 7) continue;
    fusers[std::string(f[0])] = std::string(f[6]);
  }
  summary["fuser_accuracy"] = std::move(fusers);
  textio::write_file(artifact(config, kSummaryJson), summary.dump(1) + "\n");
  log(config, "report", "wrote " + artifact(config, kReportMd).string());
}

// ---------------------------------------------------------------------------
// Orchestration

void run_stage(const std::string& name, const PipelineConfig& config) {
  using StageFn = void (*)(const PipelineConfig&);
  static const std::map<std::string, StageFn> stages = {
      {"synth", stage_synth},       {"preprocess", stage_preprocess}, {"screen", stage_screen},
      {"train", stage_train},       {"infer", stage_infer},           {"fuse", stage_fuse},
      {"evaluate", stage_evaluate}, {"compare", stage_compare},       {"report", stage_report}};
  const auto it = stages.find(name);
  if (it == stages.end()) fail(ErrorCode::kConfig, "unknown stage '" + name + "'");
  try {
    it->second(config);
  } catch (const Error& e) {
    fail(e.code(), "stage " + name + ": " + e.what());
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "stage " + name + ": " + e.what());
  }
}

PipelineReport run_pipeline(const PipelineConfig& config) {
  config.validate();
  PipelineReport report;
  const std::vector<std::pair<std::string, bool>> plan = {
      {"synth", config.stages.synth && config.dataset_path.empty()},
      {"preprocess", config.stages.preprocess && !config.image_dir.empty()},
      {"screen", config.stages.screen},
      {"train", config.stages.train},
      {"infer", config.stages.infer},
      {"fuse", config.stages.fuse},
      {"evaluate", config.stages.evaluate},
      {"compare", config.stages.compare},
      {"report", config.stages.report}};
  textio::write_file(artifact(config, "config.resolved.json"), config_to_json(config));
  for (const auto& [name, enabled] : plan) {
    if (!enabled) continue;
    run_stage(name, config);
    report.stages_run.push_back(name);
  }
  if (fs::exists(artifact(config, kEvaluationJson))) {
    const json eval = parse_json_file(artifact(config, kEvaluationJson), "evaluation");
    if (eval.contains("slice_accuracy") && !eval["slice_accuracy"].is_null()) {
      report.slice_accuracy = eval["slice_accuracy"].get<double>();
    }
    if (eval.contains("scan_accuracy") && !eval["scan_accuracy"].is_null()) {
      report.scan_accuracy = eval["scan_accuracy"].get<double>();
    }
  }
  if (config.stages.compare) {
    try {
      report.comparison = comparison_rows(config);
    } catch (const Error& e) {
      fail(e.code(), std::string("stage compare: ") + e.what());
    }
  }
  return report;
}

}  // namespace fuzzfuse
