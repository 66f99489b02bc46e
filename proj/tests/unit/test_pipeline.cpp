#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "expect_error.hpp"
#include "fuzzfuse/pipeline.hpp"
#include "fuzzfuse/textio.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace fuzzfuse;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const fs::path& out) {
  PipelineConfig c;
  c.out_dir = out;
  c.quiet = true;
  c.synth.scans_per_class = 15;
  c.synth.slices_min = 12;
  c.synth.slices_max = 18;
  c.forest_trees = 20;
  c.importance_repeats = 2;
  c.ensemble_m = 3;
  c.epochs = 40;
  c.grid.steps = 9;
  return c;
}

ScanRecord scored_scan(const std::string& id, Label label, const std::vector<double>& p1) {
  ScanRecord scan;
  scan.scan_id = id;
  scan.subject_id = id;
  scan.label = label;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    SliceRecord s;
    s.slice_index = static_cast<int>(i);
    s.confidence = ConfidenceVector::from_positive(p1[i]);
    scan.slices.push_back(s);
  }
  return scan;
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_same_tree(const fs::path& a, const fs::path& b) {
  const auto files = files_under(a);
  CHECK(files == files_under(b));
  for (const auto& f : files) {
    INFO("artifact " << f.string());
    CHECK(textio::read_file(a / f) == textio::read_file(b / f));
  }
}

}  // namespace

TEST_CASE("config defaults follow the published hyperparameters") {
  const PipelineConfig c;
  CHECK(c.pca_k == 50);
  CHECK(c.screen_threshold_pct == 1.0);
  CHECK(c.ensemble_m == 10);
  CHECK(c.learning_rate == 0.1);
  CHECK(c.epochs == 100);
  CHECK(c.lambda_mode == LambdaMode::kExact);
  CHECK(c.validation_fraction == 0.2);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config JSON parsing") {
  const auto c = config_from_json(R"({
    "schema": "fuzzfuse-v1", "seed": 42,
    "synth": {"scans_per_class": 8, "class_separation": 1.5},
    "screening": {"pca_k": 12, "pca_order": "per_block", "blocks": [8, 8]},
    "boost": {"components": 4, "early_stop_tolerance": 0.001},
    "fusion": {"lambda_mode": "grid", "grid": {"lo": -0.9, "hi": -0.1, "steps": 9}},
    "preprocess": {"connectivity": 8},
    "stages": {"report": false}
  })");
  CHECK(c.seed == 42);
  CHECK(c.synth.scans_per_class == 8);
  CHECK(c.pca_k == 12);
  CHECK(c.pca_blocks == std::vector<int>{8, 8});
  CHECK(c.ensemble_m == 4);
  CHECK(*c.early_stop_tolerance == 0.001);
  CHECK(c.lambda_mode == LambdaMode::kGrid);
  CHECK(c.grid.steps == 9);
  CHECK(c.preprocess.connectivity == Connectivity::kEight);
  CHECK_FALSE(c.stages.report);

  const auto echoed = config_from_json(config_to_json(c));
  CHECK(config_to_json(echoed) == config_to_json(c));
}

TEST_CASE("config violations are config errors") {
  CHECK(code_of([] { config_from_json(R"({"seed": 1})"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json(R"({"schema": "fuzzfuse-v0"})"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json(R"({"schema": "fuzzfuse-v1", "bogus": 1})"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json(R"({"schema": "fuzzfuse-v1", "boost": {"epochs": "ten"}})"); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json(R"({"schema": "fuzzfuse-v1", "boost": {"learning_rate": 0}})"); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json(R"({"schema": "fuzzfuse-v1", "fusion": {"lambda_mode": "x"}})"); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json(R"({"schema": "fuzzfuse-v1", "fusion": {"grid": {"lo": -1.5}}})"); }) ==
        ErrorCode::kConfig);
  CHECK(code_of([] { config_from_json("{not json"); }) == ErrorCode::kConfig);
  CHECK(code_of([] { load_config("/nonexistent/config.json"); }) == ErrorCode::kIo);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorCode::kIo) == 2);
  CHECK(exit_code_for(ErrorCode::kParse) == 2);
  CHECK(exit_code_for(ErrorCode::kConfig) == 3);
  CHECK(exit_code_for(ErrorCode::kInvalidArgument) == 3);
  CHECK(exit_code_for(ErrorCode::kNumeric) == 4);
  CHECK(exit_code_for(ErrorCode::kIndeterminate) == 4);
  CHECK(exit_code_for(ErrorCode::kDegenerateInput) == 4);
}

TEST_CASE("unanimous confident scans give identical rows for every fuser") {
  Dataset scans{scored_scan("a", 1, {1.0, 1.0, 1.0}), scored_scan("b", 0, {0.0, 0.0}),
                scored_scan("c", 1, {1.0, 1.0})};
  const auto fusers = standard_fusers(-0.5);
  const auto rows = compare_fusers(scans, fusers);
  REQUIRE(rows.size() == 5);
  for (const auto& row : rows) CHECK(row.cm == rows.front().cm);
  CHECK(rows[0].name == "single_best_slice");
  CHECK(rows[1].name == "mean_pooling");
  CHECK(rows[2].name == "majority_vote");
  CHECK(rows[3].name == "choquet_exact");
  CHECK(rows[4].name == "choquet_grid");
}

TEST_CASE("one-slice scans: every fuser returns the slice decision") {
  Dataset scans{scored_scan("a", 1, {0.7}), scored_scan("b", 0, {0.2}), scored_scan("c", 0, {0.9}),
                scored_scan("d", 1, {0.4})};
  for (const auto& fuser : standard_fusers(-0.3)) {
    for (const auto& scan : scans) {
      const auto cv = scan_confidences(scan);
      CHECK(fuse_label(cv, fuser) == (cv[0].p1() >= 0.5 ? 1 : 0));
    }
  }
}

TEST_CASE("Choquet beats majority vote when lesion slices are a confident minority") {
  // Positives: 20% confident lesion slices among ambiguous slightly-negative ones.
  Dataset scans;
  for (int s = 0; s < 20; ++s) {
    std::vector<double> p(30, 0.45);
    if (s % 2 == 1) {
      for (int i = 10; i < 16; ++i) p[static_cast<std::size_t>(i)] = 0.95;
    } else {
      for (int i = 0; i < 30; i += 3) p[static_cast<std::size_t>(i)] = 0.2;
    }
    scans.push_back(scored_scan("s" + std::to_string(s), s % 2, p));
  }
  const auto rows = compare_fusers(scans, standard_fusers(-0.5));
  CHECK(*rows[2].metrics.accuracy == 0.5);  // majority vote calls every scan negative
  CHECK(*rows[3].metrics.accuracy >= *rows[2].metrics.accuracy);
  CHECK(*rows[3].metrics.accuracy == 1.0);
}

TEST_CASE("all-uncertain scans are counted and called positive by Choquet fusers") {
  Dataset scans{scored_scan("a", 0, {0.5, 0.5}), scored_scan("b", 1, {0.9, 0.8})};
  const auto rows = compare_fusers(scans, standard_fusers(-0.5));
  CHECK(rows[3].indeterminate == 1);
  CHECK(rows[3].cm.fp == 1);
  CHECK(rows[0].indeterminate == 0);
  const Dataset none;
  CHECK(code_of([&] { compare_fusers(none, standard_fusers(-0.5)); }) == ErrorCode::kInvalidArgument);
  CHECK(compare_csv(rows).rfind("fuser,n,tp,fp,tn,fn,accuracy,", 0) == 0);
}

TEST_CASE("full run writes every artifact and reruns byte-identically") {
  const auto a = oracle::scratch_dir("pipeline-a");
  const auto b = oracle::scratch_dir("pipeline-b");
  const auto report = run_pipeline(small_config(a));
  CHECK(report.stages_run ==
        std::vector<std::string>{"synth", "screen", "train", "infer", "fuse", "evaluate", "compare", "report"});
  for (const char* name : {"dataset.csv", "dataset.meta.json", "split.json", "pca.json", "screen_report.csv",
                           "screen_report.svg", "model.json", "confidences.csv", "fusion.csv",
                           "fusion_traces.json", "metrics_classification.csv", "metrics_probabilistic.csv",
                           "confusion_scan.svg", "compare.csv", "report.md", "summary.json"}) {
    CHECK_MESSAGE(fs::exists(a / name), name);
  }
  REQUIRE(report.scan_accuracy.has_value());
  REQUIRE(report.comparison.size() == 5);

  run_pipeline(small_config(b));
  check_same_tree(a, b);
}

TEST_CASE("rerunning downstream stages from persisted intermediates reproduces the full run") {
  const auto full = oracle::scratch_dir("pipeline-full");
  const auto staged = oracle::scratch_dir("pipeline-staged");
  run_pipeline(small_config(full));
  auto config = small_config(staged);
  for (const char* name : {"synth", "screen"}) run_stage(name, config);
  // Later stages read only what earlier stages persisted.
  for (const char* name : {"train", "infer", "fuse", "evaluate", "compare", "report"}) run_stage(name, config);
  fs::remove(full / "config.resolved.json");
  check_same_tree(full, staged);

  // Downstream rerun in place leaves the artifacts unchanged.
  const auto before = textio::read_file(staged / "metrics_classification.csv");
  run_stage("fuse", config);
  run_stage("evaluate", config);
  CHECK(textio::read_file(staged / "metrics_classification.csv") == before);
}

TEST_CASE("grid mode selects lambda on validation scans") {
  const auto dir = oracle::scratch_dir("pipeline-grid");
  auto config = small_config(dir);
  config.lambda_mode = LambdaMode::kGrid;
  run_pipeline(config);
  const auto choice = nlohmann::json::parse(textio::read_file(dir / "lambda.json"));
  CHECK(choice["selection_split"] == "validation");
  const auto lambda = choice["grid_lambda"].get<double>();
  CHECK(lambda >= config.grid.lo);
  CHECK(lambda <= config.grid.hi);
  const auto fusion = textio::read_lines(dir / "fusion.csv");
  CHECK(fusion[1].find("," + textio::format_double(lambda) + ",") != std::string::npos);
}

TEST_CASE("missing inputs name the stage and map to exit code 2") {
  const auto dir = oracle::scratch_dir("pipeline-missing");
  try {
    run_stage("fuse", small_config(dir));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(exit_code_for(e.code()) == 2);
    CHECK(std::string(e.what()).rfind("stage fuse:", 0) == 0);
  }
  CHECK(code_of([&] { run_stage("bogus", small_config(dir)); }) == ErrorCode::kConfig);
}

TEST_CASE("null experiment: no signal gives near-chance scan accuracy") {
  double total = 0.0;
  const int runs = 3;
  for (int seed = 1; seed <= runs; ++seed) {
    const auto dir = oracle::scratch_dir("pipeline-null");
    auto config = small_config(dir);
    config.seed = static_cast<std::uint64_t>(seed);
    config.synth.scans_per_class = 40;
    config.synth.class_separation = 0.0;
    total += *run_pipeline(config).scan_accuracy;
  }
  const double mean = total / runs;
  CHECK(mean >= 0.35);
  CHECK(mean <= 0.65);
}

#ifdef FUZZFUSE_CLI_PATH
namespace {
int run_cli(const std::string& args) {
  const std::string cmd = std::string(FUZZFUSE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST_CASE("CLI exit statuses") {
  const auto dir = oracle::scratch_dir("pipeline-cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("evaluate --out " + (dir / "empty").string()) == 2);
  CHECK(run_cli("run --config " + (dir / "absent.json").string()) == 2);
  textio::write_file(dir / "bad.json", R"({"schema": "fuzzfuse-v1", "boost": {"epochs": 0}})");
  CHECK(run_cli("run --config " + (dir / "bad.json").string()) == 3);
  CHECK(run_cli("fuse --lambda-mode sideways --out " + dir.string()) == 3);
  CHECK(run_cli("--no-such-flag synth") == 3);

  textio::write_file(dir / "tiny.json", R"({"schema": "fuzzfuse-v1",
    "synth": {"scans_per_class": 6, "slices_min": 5, "slices_max": 8},
    "screening": {"trees": 10, "repeats": 1}, "boost": {"components": 1, "epochs": 5}})");
  const std::string common = "--config " + (dir / "tiny.json").string() + " --out " + (dir / "out").string() + " --quiet";
  CHECK(run_cli("synth " + common) == 0);
  CHECK(run_cli("screen " + common) == 0);
  textio::write_file(dir / "diverge.json", R"({"schema": "fuzzfuse-v1",
    "synth": {"scans_per_class": 6, "slices_min": 5, "slices_max": 8},
    "boost": {"components": 1, "epochs": 5, "learning_rate": 1e300}})");
  CHECK(run_cli("train --config " + (dir / "diverge.json").string() + " --out " + (dir / "out").string() +
                " --quiet") == 4);
  CHECK(run_cli("run --seed 5 " + common) == 0);
  CHECK(fs::exists(dir / "out" / "report.md"));
}
#endif
