#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "doctest.h"
#include "expect_error.hpp"
#include "fuzzfuse/random.hpp"
#include "fuzzfuse/screening.hpp"

using namespace fuzzfuse;

namespace {

struct Labeled {
  Matrix x;
  std::vector<Label> y;
};

// Column 0 decides the label; the rest is noise.
Labeled indicator_set(int n, int noise_cols, std::uint64_t seed) {
  Rng rng(seed);
  Labeled d{Matrix(n, 1 + noise_cols), {}};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= noise_cols; ++j) d.x(i, j) = rng.normal();
    d.y.push_back(d.x(i, 0) > 0.0 ? 1 : 0);
  }
  return d;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t pos; (pos = text.find('\n', start)) != std::string::npos; start = pos + 1) {
    out.push_back(text.substr(start, pos - start));
  }
  return out;
}

}  // namespace

TEST_CASE("rank-one data along y = x") {
  Matrix x(5, 2);
  for (int i = 0; i < 5; ++i) x.row(i) << i, i;
  const auto basis = fit_pca(x, 1);
  CHECK(basis.components(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(basis.components(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(basis.explained_variance(0) / basis.total_variance == doctest::Approx(1.0));
}

TEST_CASE("three collinear points: hand covariance") {
  Matrix x(3, 2);
  x << 0, 0, 1, 0, 2, 0;
  const auto basis = fit_pca(x, 1);
  CHECK(basis.mean(0) == doctest::Approx(1.0));
  CHECK(basis.mean(1) == doctest::Approx(0.0));
  // sum of squared deviations 2 over n - 1 = 2
  CHECK(basis.explained_variance(0) == doctest::Approx(1.0));
  CHECK(basis.components(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(basis.components(0, 1)) < 1e-12);
}

TEST_CASE("isotropic sample gives near-equal variances") {
  Rng rng(3);
  Matrix x(4000, 3);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
  }
  const auto basis = fit_pca(x, 3);
  CHECK(basis.explained_variance(0) / basis.explained_variance(2) < 1.15);
  for (Eigen::Index k = 1; k < 3; ++k) {
    CHECK(basis.explained_variance(k) <= basis.explained_variance(k - 1));
  }
}

TEST_CASE("projection identities") {
  Rng rng(4);
  Matrix x(30, 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = rng.normal() * (j + 1);
  }
  const auto basis = fit_pca(x, 4);
  const Matrix mean_row = basis.mean.transpose();
  CHECK(project(basis, mean_row).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix shifted = (basis.mean + basis.components.row(0).transpose()).transpose();
  const Matrix z = project(basis, shifted);
  CHECK(z(0, 0) == doctest::Approx(1.0));
  CHECK(z.rightCols(3).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((reconstruct(basis, project(basis, x)) - x).cwiseAbs().maxCoeff() < 1e-8);
  // Orthonormal rows, sign convention: largest-magnitude entry positive.
  CHECK((basis.components * basis.components.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index k = 0; k < 4; ++k) {
    Eigen::Index idx = 0;
    basis.components.row(k).cwiseAbs().maxCoeff(&idx);
    CHECK(basis.components(k, idx) > 0.0);
  }
}

TEST_CASE("PCA argument checks") {
  Matrix one(1, 3);
  one.setZero();
  CHECK(code_of([&] { fit_pca(one, 1); }) == ErrorCode::kInvalidArgument);
  Matrix x(4, 2);
  x.setRandom();
  CHECK(code_of([&] { fit_pca(x, 3); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { fit_pca(x, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("block PCA projects blocks independently and round-trips through JSON") {
  Rng rng(6);
  Matrix x(40, 5);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < 5; ++j) x(i, j) = rng.normal();
  }
  const std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks{{0, 2}, {2, 5}};
  const auto pca = fit_block_pca(x, blocks, 2);
  CHECK(pca.output_dim() == 4);
  const Matrix z = project(pca, x);
  const Matrix first = project(fit_pca(x.leftCols(2), 2), x.leftCols(2));
  CHECK((z.leftCols(2) - first).cwiseAbs().maxCoeff() < 1e-12);

  const auto back = pca_from_json(pca_to_json(pca));
  CHECK((project(back, x) - z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forest separates indicator(x0 > 0) out of bag") {
  const auto d = indicator_set(200, 4, 1);
  ForestConfig fc;
  fc.trees = 50;
  fc.seed = 2;
  const auto forest = fit_forest(d.x, d.y, fc);
  CHECK(oob_accuracy(forest, d.x, d.y) >= 0.95);
}

TEST_CASE("forest on pure-noise labels is near chance") {
  Rng rng(7);
  auto d = indicator_set(400, 4, 3);
  for (auto& y : d.y) y = static_cast<Label>(rng.index(2));
  ForestConfig fc;
  fc.trees = 50;
  fc.seed = 5;
  const double acc = oob_accuracy(fit_forest(d.x, d.y, fc), d.x, d.y);
  CHECK(acc > 0.4);
  CHECK(acc < 0.6);
}

TEST_CASE("forest is deterministic and independent of thread count") {
  const auto d = indicator_set(120, 3, 9);
  ForestConfig fc;
  fc.trees = 12;
  fc.seed = 77;
  const auto a = fit_forest(d.x, d.y, fc);
  const auto b = fit_forest(d.x, d.y, fc);
  fc.threads = 3;
  const auto c = fit_forest(d.x, d.y, fc);
  CHECK(a.trees == b.trees);
  CHECK(a.trees == c.trees);
  CHECK(a.oob_indices == c.oob_indices);
  // Every OOB sample is absent from the bootstrap draw.
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    for (std::size_t i : a.oob_indices[t]) {
      CHECK(std::find(a.inbag_indices[t].begin(), a.inbag_indices[t].end(), i) == a.inbag_indices[t].end());
    }
  }
}

TEST_CASE("leaves respect min_leaf") {
  const auto d = indicator_set(150, 2, 10);
  ForestConfig fc;
  fc.trees = 5;
  fc.min_leaf = 7;
  const auto forest = fit_forest(d.x, d.y, fc);
  for (const auto& tree : forest.trees) {
    for (const auto& node : tree.nodes()) {
      if (node.feature < 0) CHECK(node.samples >= 7);
    }
  }
}

TEST_CASE("forest rejects single-class and tiny inputs") {
  auto d = indicator_set(50, 2, 11);
  std::fill(d.y.begin(), d.y.end(), 1);
  CHECK(code_of([&] { fit_forest(d.x, d.y, ForestConfig{}); }) == ErrorCode::kDegenerateInput);
  const auto tiny = indicator_set(5, 1, 12);
  CHECK(code_of([&] { fit_forest(tiny.x, tiny.y, ForestConfig{}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("permutation importance concentrates on the informative column") {
  const auto d = indicator_set(200, 9, 13);
  ForestConfig fc;
  fc.trees = 60;
  fc.seed = 14;
  const auto forest = fit_forest(d.x, d.y, fc);
  const auto report = permutation_importance(forest, d.x, d.y, 3, 15);
  CHECK(report.contribution_pct[0] >= 50.0);
  for (std::size_t j = 1; j < 10; ++j) CHECK(report.contribution_pct[j] < 10.0);
  CHECK(std::find(report.retained.begin(), report.retained.end(), 0u) != report.retained.end());
  CHECK(std::accumulate(report.contribution_pct.begin(), report.contribution_pct.end(), 0.0) ==
        doctest::Approx(100.0));
}

TEST_CASE("duplicated informative column still normalizes to 100") {
  auto d = indicator_set(200, 3, 16);
  Matrix x(d.x.rows(), d.x.cols() + 1);
  x << d.x, d.x.col(0);
  ForestConfig fc;
  fc.trees = 40;
  const auto report = permutation_importance(fit_forest(x, d.y, fc), x, d.y, 2, 17);
  CHECK(std::accumulate(report.contribution_pct.begin(), report.contribution_pct.end(), 0.0) ==
        doctest::Approx(100.0));
}

TEST_CASE("threshold arithmetic") {
  const std::vector<double> pct{99.5, 0.5};
  CHECK(screen_features(pct, 1.0) == std::vector<std::size_t>{0});
  const std::vector<double> edge{1.0, 0.999};
  CHECK(screen_features(edge, 1.0) == std::vector<std::size_t>{0});
  const std::vector<double> raw{-0.2, 0.3, 0.1};
  const auto report = make_screen_report(raw, 1.0);
  CHECK(report.importance[0] == 0.0);
  CHECK(report.contribution_pct[1] == doctest::Approx(75.0));
  CHECK(report.retained == std::vector<std::size_t>{1, 2});
}

TEST_CASE("screen report CSV round trip") {
  const std::vector<double> raw{0.5, 0.0, 0.25};
  const auto report = make_screen_report(raw, 1.0);
  const auto back = parse_screen_report_csv(lines_of(screen_report_csv(report)), 1.0);
  CHECK(back.importance == report.importance);
  CHECK(back.contribution_pct == report.contribution_pct);
  CHECK(back.retained == report.retained);
  const std::vector<std::string> bad{"feature,importance"};
  CHECK(code_of([&] { parse_screen_report_csv(bad, 1.0); }) == ErrorCode::kParse);
}

TEST_CASE("separation index hand computation") {
  // means 0.5 and 3.5 around 2: between = 2.25; within = 0.25
  const std::vector<double> v{0, 1, 3, 4};
  const std::vector<Label> y{0, 0, 1, 1};
  const auto si = separation_index(v, y);
  CHECK_FALSE(si.infinite);
  CHECK(si.value == doctest::Approx(9.0));
}

TEST_CASE("separation index extremes") {
  const std::vector<Label> y{0, 0, 1, 1};
  const std::vector<double> split{0, 0, 1, 1};
  const auto inf = separation_index(split, y);
  CHECK(inf.infinite);
  CHECK(std::isinf(inf.value));

  Rng rng(18);
  std::vector<double> same;
  std::vector<Label> labels;
  for (int i = 0; i < 20000; ++i) {
    same.push_back(rng.normal());
    labels.push_back(i % 2);
  }
  CHECK(separation_index(same, labels).value < 0.01);

  const std::vector<double> constant{2, 2, 2, 2};
  CHECK(separation_index(constant, y).value == 0.0);
}
