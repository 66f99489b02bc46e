#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fuzzfuse/scancore.hpp"

namespace fuzzfuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// PCA

/// Principal basis of a feature matrix. Rows of `components` are orthonormal
/// principal directions ordered by decreasing explained variance; each row's
/// largest-magnitude entry is positive.
struct PcaBasis {
  Vector mean;                 // length d
  Matrix components;           // k x d
  Vector explained_variance;   // length k, nonincreasing
  double total_variance = 0.0; // trace of the sample covariance

  Eigen::Index input_dim() const { return mean.size(); }
  Eigen::Index output_dim() const { return components.rows(); }
};

/// Eigendecomposition of the sample covariance (divisor n - 1), keeping the
/// top k directions. Requires n >= 2 and 1 <= k <= min(n - 1, d).
PcaBasis fit_pca(const Matrix& features, Eigen::Index k);

/// Centered rows expressed in component coordinates (m x k).
Matrix project(const PcaBasis& basis, const Matrix& features);
/// Inverse of project for the retained subspace (m x d).
Matrix reconstruct(const PcaBasis& basis, const Matrix& scores);

/// PCA applied separately to contiguous column blocks (one per upstream
/// feature extractor) with outputs concatenated in block order.
struct BlockPca {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> blocks;  // [begin, end)
  std::vector<PcaBasis> bases;

  Eigen::Index output_dim() const;
};

/// Fits one basis per block with k = min(k_per_block, n - 1, block width).
BlockPca fit_block_pca(const Matrix& features,
                       std::span<const std::pair<Eigen::Index, Eigen::Index>> blocks,
                       Eigen::Index k_per_block);
Matrix project(const BlockPca& pca, const Matrix& features);

// ---------------------------------------------------------------------------
// Bootstrap forest

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double positive_fraction = 0.0;
  int samples = 0;

  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Axis-aligned binary classification tree with Gini splits. Rows go left
/// when row[feature] <= threshold.
class DecisionTree {
 public:
  DecisionTree() = default;
  explicit DecisionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
  double predict_proba(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  std::size_t depth() const;

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

 private:
  std::vector<TreeNode> nodes_;
};

struct ForestConfig {
  int trees = 100;
  int min_leaf = 5;
  int max_features = 0;  // 0: ceil(sqrt(d))
  std::uint64_t seed = 0;
  int threads = 1;
};

struct Forest {
  std::vector<DecisionTree> trees;
  std::vector<std::vector<std::size_t>> inbag_indices;  // bootstrap draw per tree
  std::vector<std::vector<std::size_t>> oob_indices;    // sorted, per tree
  std::uint64_t seed = 0;
  Eigen::Index n_features = 0;
  std::size_t n_samples = 0;
};

/// Trains each tree on n draws with replacement, considering max_features
/// randomly chosen columns per node and growing until the node is pure or
/// cannot be split into two children of at least min_leaf samples. Tree t
/// draws from stream derive_seed(seed, t), so the result is independent of
/// the thread count. Requires n >= 10 and both classes present.
Forest fit_forest(const Matrix& features, std::span<const Label> labels,
                  const ForestConfig& config);

/// Out-of-bag class-1 probability per sample: the mean leaf probability over
/// trees that did not see the sample. Samples never out of bag get -1.
std::vector<double> oob_probabilities(const Forest& forest, const Matrix& features);

/// Accuracy of the OOB majority (probability >= 0.5 is class 1) over samples
/// with at least one OOB tree.
double oob_accuracy(const Forest& forest, const Matrix& features,
                    std::span<const Label> labels);

// ---------------------------------------------------------------------------
// Screening

struct FeatureScreenReport {
  std::vector<double> importance;        // floored at 0
  std::vector<double> contribution_pct;  // sums to 100 unless all importance is 0
  std::vector<std::size_t> retained;     // ascending feature indices
  double threshold_pct = 1.0;
  double baseline_oob_accuracy = 0.0;
};

/// Features whose contribution is at least `threshold_pct`.
std::vector<std::size_t> screen_features(std::span<const double> contribution_pct,
                                         double threshold_pct);

/// Builds a report from raw (possibly negative) importances: floors at 0,
/// normalizes to percentages, and applies the threshold.
FeatureScreenReport make_screen_report(std::span<const double> raw_importance,
                                       double threshold_pct);

/// Importance of feature j is the mean drop in OOB accuracy when column j is
/// permuted (others kept), over `repeats` permutations.
FeatureScreenReport permutation_importance(const Forest& forest, const Matrix& features,
                                           std::span<const Label> labels, int repeats,
                                           std::uint64_t seed, double threshold_pct = 1.0);

/// Between-class variance of the class means over the pooled within-class
/// variance. `infinite` is set (and value is +inf) when the within-class
/// variance is zero while the means differ.
struct SeparationIndex {
  double value = 0.0;
  bool infinite = false;
};

SeparationIndex separation_index(std::span<const double> column, std::span<const Label> labels);

/// CSV `feature,importance,contribution_pct,retained`.
std::string screen_report_csv(const FeatureScreenReport& report);
FeatureScreenReport parse_screen_report_csv(std::span<const std::string> lines,
                                            double threshold_pct);

/// PCA basis as JSON (mean, components, explained variance).
std::string pca_to_json(const BlockPca& pca);
BlockPca pca_from_json(const std::string& text);

}  // namespace fuzzfuse
