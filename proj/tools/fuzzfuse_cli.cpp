// fuzzfuse: command line front end for the scan fusion pipeline.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fuzzfuse/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
};

struct StageOverrides {
  std::string input_images;
  std::string dataset;
  std::string lambda_mode;
  std::optional<int> scans_per_class;
  std::optional<double> class_separation;
  std::optional<double> lesion_run_fraction;
};

fuzzfuse::PipelineConfig resolve(const GlobalOptions& g, const StageOverrides& o) {
  using fuzzfuse::ErrorCode;
  fuzzfuse::PipelineConfig config =
      g.config_path.empty() ? fuzzfuse::PipelineConfig{} : fuzzfuse::load_config(g.config_path);
  if (g.seed) config.seed = *g.seed;
  if (!g.out_dir.empty()) config.out_dir = g.out_dir;
  if (g.quiet) config.quiet = true;
  if (!o.input_images.empty()) config.image_dir = o.input_images;
  if (!o.dataset.empty()) config.dataset_path = o.dataset;
  if (o.scans_per_class) config.synth.scans_per_class = *o.scans_per_class;
  if (o.class_separation) config.synth.class_separation = *o.class_separation;
  if (o.lesion_run_fraction) config.synth.lesion_run_fraction = *o.lesion_run_fraction;
  if (!o.lambda_mode.empty()) {
    if (o.lambda_mode == "exact") {
      config.lambda_mode = fuzzfuse::LambdaMode::kExact;
    } else if (o.lambda_mode == "grid") {
      config.lambda_mode = fuzzfuse::LambdaMode::kGrid;
    } else {
      fuzzfuse::fail(ErrorCode::kConfig, "--lambda-mode must be 'exact' or 'grid'");
    }
  }
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fuzzfuse: slice classification with fuzzy-measure scan fusion"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalOptions g;
  StageOverrides o;
  app.add_option("--config", g.config_path, "JSON config (schema fuzzfuse-v1)");
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--out", g.out_dir, "Output directory for artifacts");
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");

  const char* stages[][2] = {
      {"synth", "Generate the synthetic scan dataset"},
      {"preprocess", "Otsu mask, largest component and crop for a directory of PGM slices"},
      {"screen", "Split by subject, fit PCA and screen components by OOB permutation importance"},
      {"train", "Train the boosted network ensemble on screened slice features"},
      {"infer", "Write per-slice confidences for every scan"},
      {"fuse", "Fuse slice confidences into scan decisions"},
      {"evaluate", "Slice- and scan-level metrics on the test split"},
      {"compare", "Compare scan-level fusers on the test split"},
      {"report", "Summarize artifacts into report.md and summary.json"},
      {"run", "Run all enabled stages in order"},
  };
  for (const auto& stage : stages) {
    CLI::App* sub = app.add_subcommand(stage[0], stage[1]);
    const std::string name = stage[0];
    if (name == "preprocess" || name == "run") {
      sub->add_option("--input", o.input_images, "Directory of PGM slices or per-scan subdirectories");
    }
    if (name != "synth" && name != "preprocess") {
      sub->add_option("--dataset", o.dataset, "Scan dataset CSV (default: <out>/dataset.csv)");
    }
    if (name == "synth" || name == "run") {
      sub->add_option("--scans-per-class", o.scans_per_class, "Scans generated per class");
      sub->add_option("--class-separation", o.class_separation, "Lesion feature shift");
      sub->add_option("--lesion-run-fraction", o.lesion_run_fraction, "Fraction of lesion slices");
    }
    if (name == "fuse" || name == "evaluate" || name == "report" || name == "run") {
      sub->add_option("--lambda-mode", o.lambda_mode, "exact or grid");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const fuzzfuse::PipelineConfig config = resolve(g, o);
    if (command == "run") {
      const auto report = fuzzfuse::run_pipeline(config);
      if (!config.quiet && report.scan_accuracy) {
        std::cerr << "[fuzzfuse] done: scan accuracy " << *report.scan_accuracy << '\n';
      }
    } else {
      fuzzfuse::run_stage(command, config);
    }
  } catch (const fuzzfuse::Error& e) {
    std::cerr << "fuzzfuse " << command << ": error: " << e.what() << '\n';
    return fuzzfuse::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "fuzzfuse " << command << ": error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
