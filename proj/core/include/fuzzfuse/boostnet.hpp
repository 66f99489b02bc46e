#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fuzzfuse/scancore.hpp"

namespace fuzzfuse {

/// Unit counts of one hidden layer, laid out in this order:
/// sigmoid 1/(1+e^-x), identity x, radial e^(-x^2).
struct ActivationLayout {
  int sigmoid;
  int identity;
  int radial;

  constexpr int width() const { return sigmoid + identity + radial; }
};

inline constexpr ActivationLayout kHiddenLayer1{25, 10, 15};
inline constexpr ActivationLayout kHiddenLayer2{10, 5, 10};

/// Two mixed-activation hidden layers (d -> 50 -> 25) and a logistic head.
struct ComponentNet {
  Eigen::MatrixXd w1;  // 50 x d
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // 25 x 50
  Eigen::VectorXd b2;
  Eigen::VectorXd w3;  // 25
  double b3 = 0.0;

  Eigen::Index input_dim() const { return w1.cols(); }
  std::size_t parameter_count() const;

  /// w1 (row-major), b1, w2 (row-major), b2, w3, b3.
  std::vector<double> flatten() const;
  void assign(std::span<const double> parameters);

  /// Same shape, all parameters zero.
  static ComponentNet zeros(Eigen::Index input_dim);

  bool operator==(const ComponentNet& other) const;
};

/// Weights ~ N(0, 1/fan_in), biases zero; deterministic per seed.
ComponentNet init_component(Eigen::Index input_dim, std::uint64_t seed);

/// Probability of class 1 for one feature vector.
double forward(const ComponentNet& net, std::span<const double> features);
/// Probability of class 1 for every row.
Eigen::VectorXd forward_batch(const ComponentNet& net, const Eigen::MatrixXd& features);

/// sum_i s_i * logloss_i / sum_i s_i + l2 * ||theta||^2 over all parameters.
double weighted_loss(const ComponentNet& net, const Eigen::MatrixXd& features,
                     std::span<const Label> labels, std::span<const double> sample_weights,
                     double l2);

/// Analytic gradient of weighted_loss, shaped like the network.
ComponentNet loss_gradient(const ComponentNet& net, const Eigen::MatrixXd& features,
                           std::span<const Label> labels,
                           std::span<const double> sample_weights, double l2);

struct TrainOptions {
  double learning_rate = 0.1;
  int epochs = 100;
  double l2 = 1e-3;
};

/// Full-batch gradient descent for exactly `epochs` steps. `loss_history`, if
/// given, receives the loss evaluated before each step. Throws kNumeric as
/// soon as the loss or parameters stop being finite.
ComponentNet train_component(ComponentNet net, const Eigen::MatrixXd& features,
                             std::span<const Label> labels,
                             std::span<const double> sample_weights,
                             const TrainOptions& options,
                             std::vector<double>* loss_history = nullptr);

struct BoostConfig {
  int components = 10;
  TrainOptions train;
  std::uint64_t seed = 0;
  /// Stop once adding a component improves ensemble training accuracy by
  /// less than this; the non-improving component is dropped.
  std::optional<double> early_stop_tolerance;
  /// Test hooks: disable error reweighting, reuse one init seed for every
  /// component.
  bool reweight = true;
  bool reuse_seed = false;
};

struct ComponentLog {
  std::vector<double> loss;
  double train_accuracy = 0.0;
  double ensemble_accuracy = 0.0;
};

struct BoostEnsemble {
  std::vector<ComponentNet> components;
  std::vector<double> alphas;
  std::vector<ComponentLog> train_log;
  BoostConfig config;

  Eigen::Index input_dim() const {
    return components.empty() ? 0 : components.front().input_dim();
  }
};

/// Component k is trained with sample weights proportional to the current
/// ensemble's absolute error |y - p_hat| (uniform for the first). Each alpha
/// is proportional to its component's training accuracy; alphas sum to 1.
BoostEnsemble train_ensemble(const Eigen::MatrixXd& features, std::span<const Label> labels,
                             const BoostConfig& config);

/// sum_k alpha_k * forward_k for every row.
Eigen::VectorXd ensemble_positive(const BoostEnsemble& ensemble, const Eigen::MatrixXd& features);

ConfidenceVector predict_confidence(const BoostEnsemble& ensemble,
                                    std::span<const double> features);

/// Model file, version "boostnet-v1".
std::string ensemble_to_json(const BoostEnsemble& ensemble);
BoostEnsemble ensemble_from_json(const std::string& text);

}  // namespace fuzzfuse
