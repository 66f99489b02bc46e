#include "fuzzfuse/screening.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/random.hpp"
#include "fuzzfuse/textio.hpp"
#include "json.hpp"

namespace fuzzfuse {

// ---------------------------------------------------------------------------
// PCA

PcaBasis fit_pca(const Matrix& features, Eigen::Index k) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (n < 2) fail(ErrorCode::kInvalidArgument, "PCA needs at least 2 rows");
  if (k < 1 || k > std::min(n - 1, d)) {
    fail(ErrorCode::kInvalidArgument,
         "PCA k=" + std::to_string(k) + " outside [1, min(n-1, d)] = [1, " +
             std::to_string(std::min(n - 1, d)) + "]");
  }
  if (!features.allFinite()) fail(ErrorCode::kInvalidArgument, "PCA input is not finite");

  PcaBasis basis;
  basis.mean = features.colwise().mean().transpose();
  const Matrix centered = features.rowwise() - basis.mean.transpose();
  const Matrix covariance =
      (centered.transpose() * centered) / static_cast<double>(n - 1);
  basis.total_variance = covariance.trace();
  if (!(basis.total_variance > 0.0)) {
    fail(ErrorCode::kDegenerateInput, "PCA input has zero variance");
  }

  Eigen::SelfAdjointEigenSolver<Matrix> solver(covariance);
  if (solver.info() != Eigen::Success) {
    fail(ErrorCode::kNumeric, "covariance eigendecomposition failed");
  }
  // Eigen returns ascending eigenvalues; take them from the top.
  basis.components.resize(k, d);
  basis.explained_variance.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const Eigen::Index src = d - 1 - c;
    Vector direction = solver.eigenvectors().col(src);
    Eigen::Index pivot = 0;
    for (Eigen::Index j = 1; j < d; ++j) {
      if (std::abs(direction(j)) > std::abs(direction(pivot))) pivot = j;
    }
    if (direction(pivot) < 0.0) direction = -direction;
    basis.components.row(c) = direction.transpose();
    basis.explained_variance(c) = std::max(solver.eigenvalues()(src), 0.0);
  }
  return basis;
}

Matrix project(const PcaBasis& basis, const Matrix& features) {
  if (features.cols() != basis.input_dim()) {
    fail(ErrorCode::kInvalidArgument, "project: expected " +
                                          std::to_string(basis.input_dim()) +
                                          " columns, got " + std::to_string(features.cols()));
  }
  return (features.rowwise() - basis.mean.transpose()) * basis.components.transpose();
}

Matrix reconstruct(const PcaBasis& basis, const Matrix& scores) {
  if (scores.cols() != basis.output_dim()) {
    fail(ErrorCode::kInvalidArgument, "reconstruct: score width mismatch");
  }
  Matrix out = scores * basis.components;
  out.rowwise() += basis.mean.transpose();
  return out;
}

Eigen::Index BlockPca::output_dim() const {
  Eigen::Index total = 0;
  for (const auto& b : bases) total += b.output_dim();
  return total;
}

BlockPca fit_block_pca(const Matrix& features,
                       std::span<const std::pair<Eigen::Index, Eigen::Index>> blocks,
                       Eigen::Index k_per_block) {
  if (blocks.empty()) fail(ErrorCode::kInvalidArgument, "block PCA needs at least one block");
  BlockPca pca;
  Eigen::Index expected_begin = 0;
  for (const auto& [begin, end] : blocks) {
    if (begin != expected_begin || end <= begin || end > features.cols()) {
      fail(ErrorCode::kInvalidArgument, "PCA blocks must tile the feature columns in order");
    }
    expected_begin = end;
    const Eigen::Index width = end - begin;
    const Eigen::Index k = std::min({k_per_block, features.rows() - 1, width});
    pca.blocks.emplace_back(begin, end);
    pca.bases.push_back(fit_pca(features.middleCols(begin, width), k));
  }
  if (expected_begin != features.cols()) {
    fail(ErrorCode::kInvalidArgument, "PCA blocks must cover every feature column");
  }
  return pca;
}

Matrix project(const BlockPca& pca, const Matrix& features) {
  const Eigen::Index expected = pca.blocks.empty() ? 0 : pca.blocks.back().second;
  if (features.cols() != expected) {
    fail(ErrorCode::kInvalidArgument, "project: expected " + std::to_string(expected) +
                                          " columns, got " + std::to_string(features.cols()));
  }
  Matrix out(features.rows(), pca.output_dim());
  Eigen::Index column = 0;
  for (std::size_t b = 0; b < pca.bases.size(); ++b) {
    const auto [begin, end] = pca.blocks[b];
    const auto& basis = pca.bases[b];
    out.middleCols(column, basis.output_dim()) =
        project(basis, features.middleCols(begin, end - begin));
    column += basis.output_dim();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bootstrap forest

double DecisionTree::predict_proba(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (nodes_.empty()) fail(ErrorCode::kInvalidArgument, "empty decision tree");
  int node = 0;
  while (nodes_[node].feature >= 0) {
    const auto& n = nodes_[node];
    node = row(n.feature) <= n.threshold ? n.left : n.right;
  }
  return nodes_[node].positive_fraction;
}

std::size_t DecisionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<std::pair<int, std::size_t>> stack{{0, 1}};
  std::size_t deepest = 0;
  while (!stack.empty()) {
    const auto [node, level] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, level);
    if (nodes_[node].feature >= 0) {
      stack.emplace_back(nodes_[node].left, level + 1);
      stack.emplace_back(nodes_[node].right, level + 1);
    }
  }
  return deepest;
}

namespace {

double gini(double positives, double total) {
  if (total <= 0.0) return 0.0;
  const double p = positives / total;
  return 2.0 * p * (1.0 - p);
}

class TreeGrower {
 public:
  TreeGrower(const Matrix& x, std::span<const Label> y, int min_leaf, int max_features,
             Rng& rng)
      : x_(x), y_(y), min_leaf_(min_leaf), max_features_(max_features), rng_(rng),
        candidates_(static_cast<std::size_t>(x.cols())) {
    std::iota(candidates_.begin(), candidates_.end(), 0);
  }

  DecisionTree grow(std::vector<std::size_t> samples) {
    nodes_.clear();
    grow_node(samples);
    return DecisionTree(std::move(nodes_));
  }

 private:
  int grow_node(std::vector<std::size_t>& samples) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const std::size_t n = samples.size();
    std::size_t positives = 0;
    for (std::size_t s : samples) positives += static_cast<std::size_t>(y_[s] == 1);
    nodes_[id].samples = static_cast<int>(n);
    nodes_[id].positive_fraction = static_cast<double>(positives) / static_cast<double>(n);
    if (positives == 0 || positives == n || n < 2 * static_cast<std::size_t>(min_leaf_)) {
      return id;
    }

    // Partial Fisher-Yates: the first max_features entries are the draw.
    const std::size_t d = candidates_.size();
    for (std::size_t i = 0; i < static_cast<std::size_t>(max_features_); ++i) {
      std::swap(candidates_[i], candidates_[i + rng_.index(d - i)]);
    }

    const double parent = gini(static_cast<double>(positives), static_cast<double>(n));
    double best_score = parent - 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, Label>> column(n);
    for (int f = 0; f < max_features_; ++f) {
      const int feature = candidates_[static_cast<std::size_t>(f)];
      for (std::size_t i = 0; i < n; ++i) {
        column[i] = {x_(static_cast<Eigen::Index>(samples[i]), feature), y_[samples[i]]};
      }
      std::sort(column.begin(), column.end());
      double left_pos = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_pos += column[i].second == 1 ? 1.0 : 0.0;
        if (column[i].first == column[i + 1].first) continue;
        const std::size_t left_n = i + 1;
        const std::size_t right_n = n - left_n;
        if (left_n < static_cast<std::size_t>(min_leaf_) ||
            right_n < static_cast<std::size_t>(min_leaf_)) {
          continue;
        }
        const double ln = static_cast<double>(left_n);
        const double rn = static_cast<double>(right_n);
        const double score =
            (ln * gini(left_pos, ln) +
             rn * gini(static_cast<double>(positives) - left_pos, rn)) /
            static_cast<double>(n);
        if (score < best_score) {
          best_score = score;
          best_feature = feature;
          const double a = column[i].first;
          const double b = column[i + 1].first;
          const double mid = a + 0.5 * (b - a);
          best_threshold = mid < b ? mid : a;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left;
    std::vector<std::size_t> right;
    for (std::size_t s : samples) {
      (x_(static_cast<Eigen::Index>(s), best_feature) <= best_threshold ? left : right)
          .push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();
    const int left_id = grow_node(left);
    const int right_id = grow_node(right);
    nodes_[id].feature = best_feature;
    nodes_[id].threshold = best_threshold;
    nodes_[id].left = left_id;
    nodes_[id].right = right_id;
    return id;
  }

  const Matrix& x_;
  std::span<const Label> y_;
  int min_leaf_;
  int max_features_;
  Rng& rng_;
  std::vector<int> candidates_;
  std::vector<TreeNode> nodes_;
};

void check_labels(std::span<const Label> labels, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    fail(ErrorCode::kInvalidArgument, "label count does not match feature rows");
  }
  for (Label y : labels) {
    if (y != 0 && y != 1) fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
  }
}

}  // namespace

Forest fit_forest(const Matrix& features, std::span<const Label> labels,
                  const ForestConfig& config) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  check_labels(labels, n);
  if (n < 10) fail(ErrorCode::kInvalidArgument, "forest needs at least 10 samples");
  if (d < 1) fail(ErrorCode::kInvalidArgument, "forest needs at least one feature");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == n) {
    fail(ErrorCode::kDegenerateInput, "forest needs both classes present");
  }
  if (config.trees < 1 || config.min_leaf < 1) {
    fail(ErrorCode::kInvalidArgument, "forest needs trees >= 1 and min_leaf >= 1");
  }
  if (!features.allFinite()) fail(ErrorCode::kInvalidArgument, "forest input is not finite");

  int max_features = config.max_features;
  if (max_features <= 0) {
    max_features = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
  }
  max_features = std::min<int>(max_features, static_cast<int>(d));

  Forest forest;
  forest.seed = config.seed;
  forest.n_features = d;
  forest.n_samples = static_cast<std::size_t>(n);
  const auto trees = static_cast<std::size_t>(config.trees);
  forest.trees.resize(trees);
  forest.inbag_indices.resize(trees);
  forest.oob_indices.resize(trees);

  auto train_tree = [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, t));
    std::vector<std::size_t> bag(static_cast<std::size_t>(n));
    std::vector<bool> drawn(static_cast<std::size_t>(n), false);
    for (auto& s : bag) {
      s = rng.index(static_cast<std::size_t>(n));
      drawn[s] = true;
    }
    std::vector<std::size_t> oob;
    for (std::size_t s = 0; s < drawn.size(); ++s) {
      if (!drawn[s]) oob.push_back(s);
    }
    TreeGrower grower(features, labels, config.min_leaf, max_features, rng);
    forest.inbag_indices[t] = bag;
    forest.trees[t] = grower.grow(std::move(bag));
    forest.oob_indices[t] = std::move(oob);
  };

  const auto workers = static_cast<std::size_t>(std::max(1, config.threads));
  if (workers == 1) {
    for (std::size_t t = 0; t < trees; ++t) train_tree(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < trees; t += workers) train_tree(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return forest;
}

std::vector<double> oob_probabilities(const Forest& forest, const Matrix& features) {
  if (features.cols() != forest.n_features ||
      static_cast<std::size_t>(features.rows()) != forest.n_samples) {
    fail(ErrorCode::kInvalidArgument, "OOB evaluation needs the training matrix shape");
  }
  std::vector<double> sum(forest.n_samples, 0.0);
  std::vector<int> votes(forest.n_samples, 0);
  for (std::size_t t = 0; t < forest.trees.size(); ++t) {
    for (std::size_t s : forest.oob_indices[t]) {
      sum[s] += forest.trees[t].predict_proba(features.row(static_cast<Eigen::Index>(s)));
      ++votes[s];
    }
  }
  for (std::size_t s = 0; s < sum.size(); ++s) {
    sum[s] = votes[s] > 0 ? sum[s] / votes[s] : -1.0;
  }
  return sum;
}

double oob_accuracy(const Forest& forest, const Matrix& features,
                    std::span<const Label> labels) {
  check_labels(labels, features.rows());
  const auto probs = oob_probabilities(forest, features);
  std::size_t counted = 0;
  std::size_t correct = 0;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    if (probs[s] < 0.0) continue;
    ++counted;
    const Label predicted = probs[s] >= 0.5 ? 1 : 0;
    correct += static_cast<std::size_t>(predicted == labels[s]);
  }
  if (counted == 0) fail(ErrorCode::kDegenerateInput, "no sample is out of bag");
  return static_cast<double>(correct) / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Screening

std::vector<std::size_t> screen_features(std::span<const double> contribution_pct,
                                         double threshold_pct) {
  std::vector<std::size_t> retained;
  for (std::size_t j = 0; j < contribution_pct.size(); ++j) {
    if (contribution_pct[j] >= threshold_pct) retained.push_back(j);
  }
  return retained;
}

FeatureScreenReport make_screen_report(std::span<const double> raw_importance,
                                       double threshold_pct) {
  if (!std::isfinite(threshold_pct) || threshold_pct < 0.0) {
    fail(ErrorCode::kInvalidArgument, "screen threshold must be a nonnegative percentage");
  }
  FeatureScreenReport report;
  report.threshold_pct = threshold_pct;
  report.importance.reserve(raw_importance.size());
  double total = 0.0;
  for (double v : raw_importance) {
    report.importance.push_back(std::max(v, 0.0));
    total += report.importance.back();
  }
  report.contribution_pct.assign(raw_importance.size(), 0.0);
  if (total > 0.0) {
    for (std::size_t j = 0; j < raw_importance.size(); ++j) {
      report.contribution_pct[j] = 100.0 * report.importance[j] / total;
    }
    report.retained = screen_features(report.contribution_pct, threshold_pct);
  }
  return report;
}

FeatureScreenReport permutation_importance(const Forest& forest, const Matrix& features,
                                           std::span<const Label> labels, int repeats,
                                           std::uint64_t seed, double threshold_pct) {
  if (repeats < 1) fail(ErrorCode::kInvalidArgument, "permutation repeats must be >= 1");
  if (features.cols() != forest.n_features) {
    fail(ErrorCode::kInvalidArgument, "permutation importance: feature dimension mismatch");
  }
  const double baseline = oob_accuracy(forest, features, labels);
  Matrix work = features;
  std::vector<double> raw(static_cast<std::size_t>(features.cols()), 0.0);
  std::vector<std::size_t> perm(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index j = 0; j < features.cols(); ++j) {
    double drop = 0.0;
    for (int r = 0; r < repeats; ++r) {
      Rng rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(j)),
                          static_cast<std::uint64_t>(r)));
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      rng.shuffle(std::span(perm));
      for (Eigen::Index i = 0; i < features.rows(); ++i) {
        work(i, j) = features(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(i)]), j);
      }
      drop += baseline - oob_accuracy(forest, work, labels);
    }
    work.col(j) = features.col(j);
    raw[static_cast<std::size_t>(j)] = drop / repeats;
  }
  FeatureScreenReport report = make_screen_report(raw, threshold_pct);
  report.baseline_oob_accuracy = baseline;
  return report;
}

SeparationIndex separation_index(std::span<const double> column, std::span<const Label> labels) {
  if (column.size() != labels.size()) {
    fail(ErrorCode::kInvalidArgument, "separation_index: length mismatch");
  }
  double sum[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
    }
    sum[labels[i]] += column[i];
    count[labels[i]] += 1.0;
  }
  if (count[0] == 0.0 || count[1] == 0.0) {
    fail(ErrorCode::kDegenerateInput, "separation_index needs both classes");
  }
  const double n = count[0] + count[1];
  const double mean[2] = {sum[0] / count[0], sum[1] / count[1]};
  const double overall = (sum[0] + sum[1]) / n;
  const double between = (count[0] * (mean[0] - overall) * (mean[0] - overall) +
                          count[1] * (mean[1] - overall) * (mean[1] - overall)) /
                         n;
  double within = 0.0;
  for (std::size_t i = 0; i < column.size(); ++i) {
    const double dev = column[i] - mean[labels[i]];
    within += dev * dev;
  }
  within /= n;
  if (within == 0.0) {
    if (between == 0.0) return {0.0, false};
    return {std::numeric_limits<double>::infinity(), true};
  }
  return {between / within, false};
}

std::string screen_report_csv(const FeatureScreenReport& report) {
  std::vector<bool> kept(report.importance.size(), false);
  for (std::size_t j : report.retained) kept[j] = true;
  std::string out = "feature,importance,contribution_pct,retained\n";
  for (std::size_t j = 0; j < report.importance.size(); ++j) {
    out += std::to_string(j) + ',' + textio::format_double(report.importance[j]) + ',' +
           textio::format_double(report.contribution_pct[j]) + ',' + (kept[j] ? "1" : "0") +
           '\n';
  }
  return out;
}

FeatureScreenReport parse_screen_report_csv(std::span<const std::string> lines,
                                            double threshold_pct) {
  if (lines.empty() || lines.front() != "feature,importance,contribution_pct,retained") {
    fail(ErrorCode::kParse, "screen report header must be feature,importance,contribution_pct,retained");
  }
  FeatureScreenReport report;
  report.threshold_pct = threshold_pct;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const auto fields = textio::split_fields(lines[row]);
    const std::string where = "screen report line " + std::to_string(row + 1);
    if (fields.size() != 4) fail(ErrorCode::kParse, where + ": expected 4 fields");
    const auto feature = textio::parse_int(fields[0], where);
    if (feature != static_cast<long long>(report.importance.size())) {
      fail(ErrorCode::kParse, where + ": features must be listed in order");
    }
    report.importance.push_back(textio::parse_double(fields[1], where));
    report.contribution_pct.push_back(textio::parse_double(fields[2], where));
    if (fields[3] == "1") report.retained.push_back(static_cast<std::size_t>(feature));
  }
  return report;
}

std::string pca_to_json(const BlockPca& pca) {
  nlohmann::ordered_json out;
  out["blocks"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < pca.bases.size(); ++b) {
    const auto& basis = pca.bases[b];
    nlohmann::ordered_json block;
    block["begin"] = pca.blocks[b].first;
    block["end"] = pca.blocks[b].second;
    block["mean"] = std::vector<double>(basis.mean.data(), basis.mean.data() + basis.mean.size());
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < basis.components.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(basis.components.cols()));
      for (Eigen::Index c = 0; c < basis.components.cols(); ++c) {
        row[static_cast<std::size_t>(c)] = basis.components(r, c);
      }
      rows.push_back(row);
    }
    block["components"] = std::move(rows);
    block["explained_variance"] =
        std::vector<double>(basis.explained_variance.data(),
                            basis.explained_variance.data() + basis.explained_variance.size());
    block["total_variance"] = basis.total_variance;
    out["blocks"].push_back(std::move(block));
  }
  return out.dump(1);
}

BlockPca pca_from_json(const std::string& text) {
  BlockPca pca;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& block : doc.at("blocks")) {
      PcaBasis basis;
      const auto mean = block.at("mean").get<std::vector<double>>();
      basis.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
      const auto rows = block.at("components").get<std::vector<std::vector<double>>>();
      basis.components.resize(static_cast<Eigen::Index>(rows.size()), basis.mean.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != mean.size()) {
          fail(ErrorCode::kParse, "PCA component width mismatch");
        }
        for (std::size_t c = 0; c < mean.size(); ++c) {
          basis.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
              rows[r][c];
        }
      }
      const auto ev = block.at("explained_variance").get<std::vector<double>>();
      basis.explained_variance =
          Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
      basis.total_variance = block.at("total_variance").get<double>();
      pca.blocks.emplace_back(block.at("begin").get<Eigen::Index>(),
                              block.at("end").get<Eigen::Index>());
      pca.bases.push_back(std::move(basis));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("PCA JSON: ") + e.what());
  }
  return pca;
}

}  // namespace fuzzfuse
