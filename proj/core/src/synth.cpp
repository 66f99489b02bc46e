#include "fuzzfuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/random.hpp"
#include "json.hpp"

namespace fuzzfuse {

void SynthConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kConfig, "synth: " + what); };
  if (scans_per_class < 1) bad("scans_per_class must be >= 1");
  if (slices_min < 1 || slices_min > slices_max) bad("need 1 <= slices_min <= slices_max");
  if (feature_dim < 1) bad("feature_dim must be >= 1");
  for (int d : informative_dims) {
    if (d < 0 || d >= feature_dim) bad("informative_dims must lie in [0, feature_dim)");
  }
  if (!(lesion_run_fraction > 0.0 && lesion_run_fraction <= 1.0)) {
    bad("lesion_run_fraction must lie in (0,1]");
  }
  if (!std::isfinite(class_separation) || class_separation < 0.0) {
    bad("class_separation must be finite and >= 0");
  }
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale)) bad("noise_scale must be > 0");
  if (scans_per_subject < 1) bad("scans_per_subject must be >= 1");
}

int lesion_run_length(double lesion_run_fraction, int slice_count) {
  // Guard against 0.2 * 30 = 6.000000000000001 rounding up to 7.
  const double raw = lesion_run_fraction * slice_count;
  int length = static_cast<int>(std::ceil(raw - 1e-9));
  return std::clamp(length, 1, slice_count);
}

SynthDataset generate_dataset(const SynthConfig& config) {
  config.validate();
  SynthDataset out;
  out.config = config;
  Rng rng(config.seed);

  const int total = 2 * config.scans_per_class;
  for (int s = 0; s < total; ++s) {
    const Label label = s < config.scans_per_class ? 0 : 1;
    char id[32];
    std::snprintf(id, sizeof(id), "scan%04d", s);
    char subject[32];
    std::snprintf(subject, sizeof(subject), "subj%04d", s / config.scans_per_subject);

    ScanRecord scan;
    scan.scan_id = id;
    scan.subject_id = subject;
    scan.label = label;
    const int n = config.slices_min +
                  static_cast<int>(rng.index(static_cast<std::size_t>(
                      config.slices_max - config.slices_min + 1)));

    SynthTruth truth;
    truth.label = label;
    truth.slice_count = n;
    if (label == 1) {
      truth.run_length = lesion_run_length(config.lesion_run_fraction, n);
      truth.run_start =
          static_cast<int>(rng.index(static_cast<std::size_t>(n - truth.run_length + 1)));
    }

    scan.slices.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      SliceRecord& slice = scan.slices[static_cast<std::size_t>(i)];
      slice.slice_index = i;
      slice.features.resize(static_cast<std::size_t>(config.feature_dim));
      for (double& f : slice.features) f = config.noise_scale * rng.normal();
      const bool lesion = label == 1 && i >= truth.run_start &&
                          i < truth.run_start + truth.run_length;
      if (lesion) {
        for (int d : config.informative_dims) {
          slice.features[static_cast<std::size_t>(d)] += config.class_separation;
        }
      }
    }
    out.truth.emplace(scan.scan_id, truth);
    out.scans.push_back(std::move(scan));
  }
  return out;
}

Label brute_force_scan_label(const ScanRecord& scan,
                             const std::map<std::string, SynthTruth>& truth) {
  const auto it = truth.find(scan.scan_id);
  if (it == truth.end()) {
    fail(ErrorCode::kInvalidArgument, "scan " + scan.scan_id + " was not produced by the generator");
  }
  if (static_cast<int>(scan.slices.size()) != it->second.slice_count) {
    fail(ErrorCode::kInvalidArgument, "scan " + scan.scan_id +
                                          " slice count differs from generator metadata");
  }
  return it->second.label;
}

Label brute_force_scan_label(const ScanRecord& scan, const SynthDataset& dataset) {
  return brute_force_scan_label(scan, dataset.truth);
}

namespace {

nlohmann::ordered_json config_json(const SynthConfig& c) {
  return {{"scans_per_class", c.scans_per_class},
          {"slices_min", c.slices_min},
          {"slices_max", c.slices_max},
          {"feature_dim", c.feature_dim},
          {"informative_dims", c.informative_dims},
          {"lesion_run_fraction", c.lesion_run_fraction},
          {"class_separation", c.class_separation},
          {"noise_scale", c.noise_scale},
          {"scans_per_subject", c.scans_per_subject},
          {"seed", c.seed}};
}

}  // namespace

std::string synth_metadata_json(const SynthDataset& dataset) {
  nlohmann::ordered_json out;
  out["generator"] = "fuzzfuse-synth";
  out["config"] = config_json(dataset.config);
  nlohmann::ordered_json truth = nlohmann::ordered_json::array();
  for (const auto& scan : dataset.scans) {
    const auto& t = dataset.truth.at(scan.scan_id);
    truth.push_back({{"scan_id", scan.scan_id},
                     {"subject_id", scan.subject_id},
                     {"label", t.label},
                     {"slice_count", t.slice_count},
                     {"run_start", t.run_start},
                     {"run_length", t.run_length}});
  }
  out["truth"] = std::move(truth);
  return out.dump(1);
}

std::map<std::string, SynthTruth> parse_synth_truth(const std::string& json_text) {
  std::map<std::string, SynthTruth> truth;
  try {
    const auto doc = nlohmann::json::parse(json_text);
    for (const auto& entry : doc.at("truth")) {
      SynthTruth t;
      t.label = entry.at("label").get<int>();
      t.slice_count = entry.at("slice_count").get<int>();
      t.run_start = entry.at("run_start").get<int>();
      t.run_length = entry.at("run_length").get<int>();
      truth.emplace(entry.at("scan_id").get<std::string>(), t);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("synth metadata: ") + e.what());
  }
  return truth;
}

SynthConfig synth_config_from_json(const std::string& json_text, const SynthConfig& defaults) {
  SynthConfig c = defaults;
  try {
    const auto j = nlohmann::json::parse(json_text);
    c.scans_per_class = j.value("scans_per_class", c.scans_per_class);
    c.slices_min = j.value("slices_min", c.slices_min);
    c.slices_max = j.value("slices_max", c.slices_max);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.informative_dims = j.value("informative_dims", c.informative_dims);
    c.lesion_run_fraction = j.value("lesion_run_fraction", c.lesion_run_fraction);
    c.class_separation = j.value("class_separation", c.class_separation);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.scans_per_subject = j.value("scans_per_subject", c.scans_per_subject);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kConfig, std::string("synth config: ") + e.what());
  }
  return c;
}

}  // namespace fuzzfuse
