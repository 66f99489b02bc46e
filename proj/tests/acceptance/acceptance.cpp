// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fuzzfuse/boostnet.hpp"
#include "fuzzfuse/choquet.hpp"
#include "fuzzfuse/fuzzmeasure.hpp"
#include "fuzzfuse/imgprep.hpp"
#include "fuzzfuse/metrics.hpp"
#include "fuzzfuse/pipeline.hpp"
#include "fuzzfuse/random.hpp"
#include "fuzzfuse/screening.hpp"
#include "fuzzfuse/textio.hpp"
#include "oracles.hpp"

using namespace fuzzfuse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first few failures and keeps the verdict.
class Check {
 public:
  void require(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " violation(s): " + notes_};
  }

 private:
  int failures_ = 0;
  std::string notes_;
};

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::vector<double> random_weights(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  for (auto& v : w) v = rng.uniform(0.01, 0.99);
  return w;
}

std::vector<double> random_probs(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  for (auto& v : p) {
    // Mix in exact repeats so ties are exercised.
    v = rng.index(4) == 0 ? 0.5 : rng.uniform();
  }
  return p;
}

Outcome measure_axioms() {
  Check check;
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.index(39);
    const auto w = random_weights(rng, n);
    const auto fm = FuzzyMeasure::build(w, LambdaSpec::exact());
    const double res = lambda_residual(w, fm.lambda());
    worst = std::max(worst, res);
    check.require(res < 1e-10, "residual " + num(res) + " at n=" + std::to_string(n));
    if (n > 10) continue;
    std::vector<double> g(std::size_t{1} << n);
    for (std::size_t mask = 0; mask < g.size(); ++mask) {
      std::vector<std::size_t> subset;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask >> i & 1U) subset.push_back(i);
      }
      g[mask] = fm.measure(subset);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask >> i & 1U) {
          const double below = g[mask & ~(std::size_t{1} << i)];
          check.require(below <= g[mask] + 1e-12, "monotonicity at n=" + std::to_string(n));
        }
      }
    }
    check.require(std::abs(g.front()) <= 1e-9, "g(empty) != 0");
    check.require(std::abs(g.back() - 1.0) <= 1e-9, "g(S) != 1");
  }
  return check.done("max residual " + num(worst));
}

Outcome choquet_oracle() {
  Check check;
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    const auto w = random_weights(rng, n);
    const auto p = random_probs(rng, n);
    const auto spec = trial % 2 == 0 ? LambdaSpec::exact() : LambdaSpec::fixed(rng.uniform(-0.9, 3.0));
    const auto fm = FuzzyMeasure::build(w, spec);
    const double got = choquet_aggregate(p, fm);
    const double want = oracle::rectangle_sum_choquet(p, w, fm.lambda());
    worst = std::max(worst, std::abs(got - want));
    check.require(std::abs(got - want) <= 1e-9, "diff " + num(got - want) + " at n=" + std::to_string(n));
  }
  return check.done("max diff " + num(worst));
}

Outcome choquet_properties() {
  Check check;
  Rng rng(303);
  const int cases = 1000;
  for (int trial = 0; trial < cases; ++trial) {
    const std::size_t n = 1 + rng.index(12);
    const auto w = random_weights(rng, n);
    const auto spec = trial % 2 == 0 ? LambdaSpec::exact() : LambdaSpec::fixed(rng.uniform(-0.9, 3.0));
    const auto fm = FuzzyMeasure::build(w, spec);

    const double level = rng.uniform();
    const std::vector<double> flat(n, level);
    check.require(std::abs(choquet_aggregate(flat, fm) - level) <= 1e-12, "idempotency");

    const auto p = random_probs(rng, n);
    const double v = choquet_aggregate(p, fm);
    const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
    check.require(v >= *lo && v <= *hi, "boundedness");

    auto raised = p;
    raised[rng.index(n)] += rng.uniform(0.0, 1.0 - *hi);
    check.require(choquet_aggregate(raised, fm) >= v - 1e-12, "monotonicity");

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<double> pw(n), pp(n);
    for (std::size_t i = 0; i < n; ++i) {
      pw[i] = w[perm[i]];
      pp[i] = p[perm[i]];
    }
    const double permuted = choquet_aggregate(pp, FuzzyMeasure::build(pw, spec));
    check.require(std::abs(permuted - v) <= 1e-12, "permutation invariance");

    const double additive = choquet_aggregate(p, FuzzyMeasure::build(w, LambdaSpec::fixed(0.0)));
    double num_sum = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num_sum += w[i] * p[i];
      den += w[i];
    }
    check.require(std::abs(additive - num_sum / den) <= 1e-12, "additive case");
  }
  return check.done(std::to_string(cases) + " cases per property");
}

Outcome lambda_examples() {
  Check check;
  const struct {
    double w;
    double expected;
  } examples[] = {{0.6, -5.0 / 9.0}, {0.4, 1.25}};
  std::string summary;
  for (const auto& ex : examples) {
    const std::vector<double> w{ex.w, ex.w};
    const double lambda = solve_lambda(w);
    check.require(std::abs(lambda - ex.expected) <= 1e-9, "lambda " + num(lambda));
    const double lhs = 1.0 + lambda;
    const double rhs = (1.0 + lambda * ex.w) * (1.0 + lambda * ex.w);
    check.require(std::abs(lhs - rhs) <= 1e-9, "substitution");
    summary += (summary.empty() ? "" : ", ") + std::string("lambda=") + std::to_string(lambda);
  }
  return check.done(summary);
}

Outcome boosting() {
  Check check;
  Rng rng(404);
  Eigen::MatrixXd x(5, 3);
  for (Eigen::Index i = 0; i < 5; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
  }
  const std::vector<Label> y{0, 1, 1, 0, 1};
  const std::vector<double> s{0.2, 0.2, 0.2, 0.2, 0.2};
  const auto net = init_component(3, 9);
  const auto analytic = loss_gradient(net, x, y, s, 1e-3).flatten();
  auto params = net.flatten();
  auto probe = ComponentNet::zeros(3);
  double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double keep = params[k];
    params[k] = keep + 1e-6;
    probe.assign(params);
    const double up = weighted_loss(probe, x, y, s, 1e-3);
    params[k] = keep - 1e-6;
    probe.assign(params);
    const double down = weighted_loss(probe, x, y, s, 1e-3);
    params[k] = keep;
    const double numeric = (up - down) / 2e-6;
    diff += (analytic[k] - numeric) * (analytic[k] - numeric);
    norm_a += analytic[k] * analytic[k];
    norm_n += numeric * numeric;
  }
  const double rel = std::sqrt(diff) / std::sqrt(std::max(norm_a, norm_n));
  check.require(rel < 1e-4, "gradient relative error " + num(rel));

  Eigen::MatrixXd sx(80, 2);
  std::vector<Label> sy;
  for (int i = 0; i < 80; ++i) {
    const Label label = i % 2;
    sx(i, 0) = (label ? 1.0 : -1.0) * rng.uniform(0.5, 2.0);
    sx(i, 1) = rng.normal();
    sy.push_back(label);
  }
  BoostConfig bc;
  bc.components = 10;
  bc.seed = 5;
  const auto ens = train_ensemble(sx, sy, bc);
  const double alpha_sum = std::accumulate(ens.alphas.begin(), ens.alphas.end(), 0.0);
  check.require(std::abs(alpha_sum - 1.0) <= 1e-12, "alphas sum to " + num(alpha_sum));
  double best = 0.0;
  for (const auto& log : ens.train_log) best = std::max(best, log.ensemble_accuracy);
  check.require(best == 1.0, "separable training accuracy " + num(best));
  check.require(ensemble_to_json(ens) == ensemble_to_json(train_ensemble(sx, sy, bc)), "retraining differs");
  return check.done("gradient rel err " + num(rel) + ", training accuracy " + num(best));
}

Outcome screening() {
  Check check;
  Rng rng(505);
  const int n = 400, d = 10;
  Matrix x(n, d);
  std::vector<Label> y;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
    y.push_back(x(i, 0) > 0 ? 1 : 0);
  }
  ForestConfig fc;
  fc.seed = 6;
  const auto forest = fit_forest(x, y, fc);
  const auto report = permutation_importance(forest, x, y, 5, 7, 1.0);
  const double informative = report.contribution_pct[0];
  double worst_noise = 0.0;
  for (int j = 1; j < d; ++j) worst_noise = std::max(worst_noise, report.contribution_pct[static_cast<std::size_t>(j)]);
  check.require(informative >= 50.0, "feature 0 contributes " + num(informative) + "%");
  check.require(worst_noise < 10.0, "noise feature contributes " + num(worst_noise) + "%");
  check.require(std::find(report.retained.begin(), report.retained.end(), 0) != report.retained.end(),
                "feature 0 screened out");
  return check.done("feature 0 " + num(informative) + "%, max noise " + num(worst_noise) + "%");
}

Outcome metrics() {
  Check check;
  const std::vector<Label> y{1, 0, 0, 1, 1, 0, 1, 0};
  const std::vector<double> base(y.size(), 0.5);
  const auto r = probabilistic_metrics(y, base);
  check.require(r.entropy_r2 && std::abs(*r.entropy_r2) <= 1e-9, "base-rate entropy_r2");
  check.require(r.generalized_r2 && std::abs(*r.generalized_r2) <= 1e-9, "base-rate generalized_r2");

  std::vector<double> perfect;
  for (Label v : y) perfect.push_back(v);
  const auto p = probabilistic_metrics(y, perfect);
  check.require(p.rase < 1e-6 && p.mad < 1e-6, "perfect predictor errors");

  // Hand counts: predictions vs labels.
  const std::vector<Label> pred{1, 1, 0, 0, 1, 0, 1, 1};
  const auto cm = confusion(y, pred);
  check.require(cm == ConfusionMatrix{3, 2, 2, 1}, "confusion counts");
  const auto m = classification_metrics(cm);
  check.require(*m.accuracy == 5.0 / 8.0, "accuracy");
  check.require(*m.precision == 3.0 / 5.0, "precision");
  check.require(*m.sensitivity == 3.0 / 4.0, "sensitivity");
  check.require(*m.specificity == 2.0 / 4.0, "specificity");
  check.require(std::abs(*m.f1 - 2.0 * 3.0 / (2.0 * 3.0 + 2.0 + 1.0)) <= 1e-15, "f1");
  return check.done("base-rate and perfect predictors, hand-counted confusion");
}

Outcome preprocessing() {
  Check check;
  Rng rng(606);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<std::uint64_t, 256> hist{};
    const std::size_t occupied = 1 + rng.index(trial % 2 == 0 ? 8 : 256);
    for (std::size_t k = 0; k < occupied; ++k) hist[rng.index(256)] += 1 + rng.index(40);
    check.require(otsu_threshold(hist).threshold == oracle::exhaustive_otsu(hist), "otsu mismatch");
  }

  for (int trial = 0; trial < 50; ++trial) {
    const int w = 1 + static_cast<int>(rng.index(30)), h = 1 + static_cast<int>(rng.index(30));
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w * h));
    for (auto& v : px) v = static_cast<std::uint8_t>(rng.index(256));
    const GrayImage img(w, h, px);
    check.require(crop_to_mask(img, BinaryMask(w, h, true)) == img, "full mask crop");
    const int r = static_cast<int>(rng.index(static_cast<std::size_t>(h)));
    const int c = static_cast<int>(rng.index(static_cast<std::size_t>(w)));
    BinaryMask one(w, h);
    one.set(r, c, true);
    const auto pixel = crop_to_mask(img, one);
    check.require(pixel.width() == 1 && pixel.height() == 1 && pixel.at(0, 0) == img.at(r, c), "single pixel crop");
    BinaryMask box(w, h);
    const int r1 = r + static_cast<int>(rng.index(static_cast<std::size_t>(h - r)));
    const int c1 = c + static_cast<int>(rng.index(static_cast<std::size_t>(w - c)));
    for (int i = r; i <= r1; ++i) {
      for (int j = c; j <= c1; ++j) box.set(i, j, true);
    }
    const auto cropped = crop_to_mask(img, box);
    check.require(cropped.width() == c1 - c + 1 && cropped.height() == r1 - r + 1, "box crop size");
    check.require(cropped.at(0, 0) == img.at(r, c) && cropped.at(r1 - r, c1 - c) == img.at(r1, c1),
                  "box crop corners");
    const auto bytes = encode_pgm(img);
    check.require(decode_pgm(bytes) == img && encode_pgm(decode_pgm(bytes)) == bytes, "PGM round trip");
  }
  return check.done("1000 histograms, 50 crop/PGM images");
}

PipelineConfig benchmark_config(const fs::path& out) {
  PipelineConfig c;
  c.out_dir = out;
  c.quiet = true;
  c.synth.scans_per_class = 50;
  c.synth.class_separation = 2.0;
  c.synth.lesion_run_fraction = 0.2;
  return c;
}

Outcome end_to_end() {
  Check check;
  const auto dir = oracle::scratch_dir("acceptance-e2e");
  const auto report = run_pipeline(benchmark_config(dir));
  const double slice = report.slice_accuracy.value_or(-1.0);
  const double scan = report.scan_accuracy.value_or(-1.0);
  check.require(scan >= slice, "scan " + num(scan) + " < slice " + num(slice));
  check.require(scan >= 0.95, "scan accuracy " + num(scan));
  const FuserRow* choquet = nullptr;
  const FuserRow* vote = nullptr;
  for (const auto& row : report.comparison) {
    if (row.name == "choquet_exact") choquet = &row;
    if (row.name == "majority_vote") vote = &row;
  }
  check.require(choquet && vote, "compare rows missing");
  double choquet_acc = -1.0, vote_acc = -1.0;
  if (choquet && vote) {
    choquet_acc = choquet->metrics.accuracy.value_or(-1.0);
    vote_acc = vote->metrics.accuracy.value_or(-1.0);
    check.require(choquet_acc >= vote_acc, "choquet " + num(choquet_acc) + " < vote " + num(vote_acc));
  }
  return check.done("slice " + num(slice) + ", scan " + num(scan) + ", choquet " + num(choquet_acc) +
                    " vs vote " + num(vote_acc));
}

Outcome determinism() {
  Check check;
  const auto a = oracle::scratch_dir("acceptance-det-a");
  const auto b = oracle::scratch_dir("acceptance-det-b");
  run_pipeline(benchmark_config(a));
  run_pipeline(benchmark_config(b));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    check.require(fs::exists(b / rel) && textio::read_file(e.path()) == textio::read_file(b / rel),
                  rel.string() + " differs");
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file() ? 1 : 0;
  check.require(files == files_b, "file counts differ");
  return check.done(std::to_string(files) + " artifacts identical");
}

}  // namespace

int main() {
  const struct {
    int id;
    const char* name;
    double budget_s;  // 0: no runtime bound
    std::function<Outcome()> run;
  } criteria[] = {
      {1, "fuzzy-measure axioms", 10.0, measure_axioms},
      {2, "Choquet oracle equivalence", 30.0, choquet_oracle},
      {3, "Choquet functional properties", 0.0, choquet_properties},
      {4, "lambda worked examples", 0.0, lambda_examples},
      {5, "boosting", 0.0, boosting},
      {6, "screening", 20.0, screening},
      {7, "metrics", 0.0, metrics},
      {8, "preprocessing", 0.0, preprocessing},
      {9, "end-to-end slice to scan", 120.0, end_to_end},
      {10, "pipeline determinism", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0.0 && secs >= c.budget_s) {
      out.pass = false;
      out.detail += ", over the " + num(c.budget_s) + " s budget";
    }
    if (!out.pass) ++failed;
    std::printf("criterion %d: %s %s (%s; %.2f s)\n", c.id, out.pass ? "PASS" : "FAIL", c.name,
                out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
