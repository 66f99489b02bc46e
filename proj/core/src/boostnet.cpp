#include "fuzzfuse/boostnet.hpp"

#include <cmath>
#include <numeric>

#include "fuzzfuse/error.hpp"
#include "fuzzfuse/random.hpp"
#include "json.hpp"

namespace fuzzfuse {

namespace {

using Eigen::ArrayXXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Applies the layer's activations in place; returns the derivative w.r.t. the
// pre-activation when `derivative` is non-null.
void activate(MatrixXd& z, const ActivationLayout& layout, MatrixXd* derivative) {
  if (derivative) derivative->resize(z.rows(), z.cols());
  for (Index c = 0; c < z.cols(); ++c) {
    for (Index r = 0; r < z.rows(); ++r) {
      const double x = z(r, c);
      double y = x;
      double dy = 1.0;
      if (c < layout.sigmoid) {
        y = sigmoid(x);
        dy = y * (1.0 - y);
      } else if (c >= layout.sigmoid + layout.identity) {
        y = std::exp(-x * x);
        dy = -2.0 * x * y;
      }
      z(r, c) = y;
      if (derivative) (*derivative)(r, c) = dy;
    }
  }
}

struct ForwardPass {
  MatrixXd h1;
  MatrixXd d1;
  MatrixXd h2;
  MatrixXd d2;
  VectorXd logits;
};

ForwardPass run_forward(const ComponentNet& net, const MatrixXd& x, bool keep_derivatives) {
  ForwardPass pass;
  pass.h1 = x * net.w1.transpose();
  pass.h1.rowwise() += net.b1.transpose();
  activate(pass.h1, kHiddenLayer1, keep_derivatives ? &pass.d1 : nullptr);
  pass.h2 = pass.h1 * net.w2.transpose();
  pass.h2.rowwise() += net.b2.transpose();
  activate(pass.h2, kHiddenLayer2, keep_derivatives ? &pass.d2 : nullptr);
  pass.logits = pass.h2 * net.w3;
  pass.logits.array() += net.b3;
  return pass;
}

void check_training_inputs(const ComponentNet& net, const MatrixXd& x,
                           std::span<const Label> labels, std::span<const double> weights) {
  if (x.cols() != net.input_dim()) {
    fail(ErrorCode::kInvalidArgument, "feature width " + std::to_string(x.cols()) +
                                          " does not match network input " +
                                          std::to_string(net.input_dim()));
  }
  if (static_cast<Index>(labels.size()) != x.rows() ||
      static_cast<Index>(weights.size()) != x.rows()) {
    fail(ErrorCode::kInvalidArgument, "labels/sample weights must match feature rows");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      fail(ErrorCode::kInvalidArgument, "sample weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) fail(ErrorCode::kInvalidArgument, "sample weights sum to zero");
  for (Label y : labels) {
    if (y != 0 && y != 1) fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
  }
}

VectorXd normalized_weights(std::span<const double> weights) {
  VectorXd s = Eigen::Map<const VectorXd>(weights.data(), static_cast<Index>(weights.size()));
  return s / s.sum();
}

double squared_norm(const ComponentNet& net) {
  return net.w1.squaredNorm() + net.b1.squaredNorm() + net.w2.squaredNorm() +
         net.b2.squaredNorm() + net.w3.squaredNorm() + net.b3 * net.b3;
}

double accuracy(const VectorXd& probs, std::span<const Label> labels) {
  std::size_t correct = 0;
  for (Index i = 0; i < probs.size(); ++i) {
    const Label predicted = probs(i) >= 0.5 ? 1 : 0;
    correct += static_cast<std::size_t>(predicted == labels[static_cast<std::size_t>(i)]);
  }
  return static_cast<double>(correct) / static_cast<double>(probs.size());
}

}  // namespace

std::size_t ComponentNet::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1);
}

std::vector<double> ComponentNet::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  auto push_matrix = [&](const MatrixXd& m) {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    }
  };
  push_matrix(w1);
  out.insert(out.end(), b1.data(), b1.data() + b1.size());
  push_matrix(w2);
  out.insert(out.end(), b2.data(), b2.data() + b2.size());
  out.insert(out.end(), w3.data(), w3.data() + w3.size());
  out.push_back(b3);
  return out;
}

void ComponentNet::assign(std::span<const double> parameters) {
  if (parameters.size() != parameter_count()) {
    fail(ErrorCode::kInvalidArgument, "parameter vector length " +
                                          std::to_string(parameters.size()) + " != " +
                                          std::to_string(parameter_count()));
  }
  std::size_t k = 0;
  auto take_matrix = [&](MatrixXd& m) {
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = parameters[k++];
    }
  };
  auto take_vector = [&](VectorXd& v) {
    for (Index i = 0; i < v.size(); ++i) v(i) = parameters[k++];
  };
  take_matrix(w1);
  take_vector(b1);
  take_matrix(w2);
  take_vector(b2);
  take_vector(w3);
  b3 = parameters[k];
}

ComponentNet ComponentNet::zeros(Index input_dim) {
  if (input_dim < 1) fail(ErrorCode::kInvalidArgument, "network input_dim must be >= 1");
  ComponentNet net;
  net.w1 = MatrixXd::Zero(kHiddenLayer1.width(), input_dim);
  net.b1 = VectorXd::Zero(kHiddenLayer1.width());
  net.w2 = MatrixXd::Zero(kHiddenLayer2.width(), kHiddenLayer1.width());
  net.b2 = VectorXd::Zero(kHiddenLayer2.width());
  net.w3 = VectorXd::Zero(kHiddenLayer2.width());
  net.b3 = 0.0;
  return net;
}

bool ComponentNet::operator==(const ComponentNet& other) const {
  return w1.rows() == other.w1.rows() && w1.cols() == other.w1.cols() && w1 == other.w1 &&
         b1 == other.b1 && w2 == other.w2 && b2 == other.b2 && w3 == other.w3 &&
         b3 == other.b3;
}

ComponentNet init_component(Index input_dim, std::uint64_t seed) {
  ComponentNet net = ComponentNet::zeros(input_dim);
  Rng rng(seed);
  auto fill = [&](MatrixXd& m) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = scale * rng.normal();
    }
  };
  fill(net.w1);
  fill(net.w2);
  const double head_scale = 1.0 / std::sqrt(static_cast<double>(net.w3.size()));
  for (Index i = 0; i < net.w3.size(); ++i) net.w3(i) = head_scale * rng.normal();
  return net;
}

VectorXd forward_batch(const ComponentNet& net, const MatrixXd& features) {
  if (features.cols() != net.input_dim()) {
    fail(ErrorCode::kInvalidArgument, "feature width " + std::to_string(features.cols()) +
                                          " does not match network input " +
                                          std::to_string(net.input_dim()));
  }
  if (!features.allFinite()) fail(ErrorCode::kInvalidArgument, "non-finite network input");
  const ForwardPass pass = run_forward(net, features, false);
  return pass.logits.unaryExpr([](double z) { return sigmoid(z); });
}

double forward(const ComponentNet& net, std::span<const double> features) {
  const Eigen::Map<const Eigen::RowVectorXd> row(features.data(),
                                                  static_cast<Index>(features.size()));
  return forward_batch(net, MatrixXd(row))(0);
}

double weighted_loss(const ComponentNet& net, const MatrixXd& features,
                     std::span<const Label> labels, std::span<const double> sample_weights,
                     double l2) {
  check_training_inputs(net, features, labels, sample_weights);
  const VectorXd s = normalized_weights(sample_weights);
  const ForwardPass pass = run_forward(net, features, false);
  double loss = 0.0;
  for (Index i = 0; i < features.rows(); ++i) {
    const double z = pass.logits(i);
    loss += s(i) * (softplus(z) - labels[static_cast<std::size_t>(i)] * z);
  }
  return loss + l2 * squared_norm(net);
}

ComponentNet loss_gradient(const ComponentNet& net, const MatrixXd& features,
                           std::span<const Label> labels,
                           std::span<const double> sample_weights, double l2) {
  check_training_inputs(net, features, labels, sample_weights);
  const VectorXd s = normalized_weights(sample_weights);
  const ForwardPass pass = run_forward(net, features, true);

  VectorXd dz3(features.rows());
  for (Index i = 0; i < features.rows(); ++i) {
    dz3(i) = s(i) * (sigmoid(pass.logits(i)) - labels[static_cast<std::size_t>(i)]);
  }

  ComponentNet grad;
  grad.w3 = pass.h2.transpose() * dz3 + 2.0 * l2 * net.w3;
  grad.b3 = dz3.sum() + 2.0 * l2 * net.b3;

  const MatrixXd dz2 = ((dz3 * net.w3.transpose()).array() * pass.d2.array()).matrix();
  grad.w2 = dz2.transpose() * pass.h1 + 2.0 * l2 * net.w2;
  grad.b2 = dz2.colwise().sum().transpose() + 2.0 * l2 * net.b2;

  const MatrixXd dz1 = ((dz2 * net.w2).array() * pass.d1.array()).matrix();
  grad.w1 = dz1.transpose() * features + 2.0 * l2 * net.w1;
  grad.b1 = dz1.colwise().sum().transpose() + 2.0 * l2 * net.b1;
  return grad;
}

ComponentNet train_component(ComponentNet net, const MatrixXd& features,
                             std::span<const Label> labels,
                             std::span<const double> sample_weights,
                             const TrainOptions& options, std::vector<double>* loss_history) {
  if (options.epochs < 0 || !std::isfinite(options.learning_rate) ||
      options.learning_rate < 0.0 || !std::isfinite(options.l2) || options.l2 < 0.0) {
    fail(ErrorCode::kInvalidArgument, "invalid training options");
  }
  if (loss_history) loss_history->clear();
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double loss = weighted_loss(net, features, labels, sample_weights, options.l2);
    if (!std::isfinite(loss)) {
      fail(ErrorCode::kNumeric, "training diverged at epoch " + std::to_string(epoch) +
                                    " (loss is not finite; lower the learning rate)");
    }
    if (loss_history) loss_history->push_back(loss);
    const ComponentNet grad = loss_gradient(net, features, labels, sample_weights, options.l2);
    const double lr = options.learning_rate;
    net.w1 -= lr * grad.w1;
    net.b1 -= lr * grad.b1;
    net.w2 -= lr * grad.w2;
    net.b2 -= lr * grad.b2;
    net.w3 -= lr * grad.w3;
    net.b3 -= lr * grad.b3;
  }
  return net;
}

BoostEnsemble train_ensemble(const MatrixXd& features, std::span<const Label> labels,
                             const BoostConfig& config) {
  if (config.components < 1) fail(ErrorCode::kInvalidArgument, "ensemble needs m >= 1");
  const Index n = features.rows();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "ensemble needs training data");
  if (static_cast<Index>(labels.size()) != n) {
    fail(ErrorCode::kInvalidArgument, "label count does not match feature rows");
  }
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == n) {
    fail(ErrorCode::kDegenerateInput, "ensemble training needs both classes");
  }

  BoostEnsemble ensemble;
  ensemble.config = config;
  std::vector<double> weights(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
  std::vector<double> accuracies;
  std::vector<VectorXd> outputs;
  double previous_ensemble_accuracy = 0.0;

  auto refresh_alphas = [&] {
    const double total = std::accumulate(accuracies.begin(), accuracies.end(), 0.0);
    ensemble.alphas.assign(accuracies.size(), 1.0 / static_cast<double>(accuracies.size()));
    if (total > 0.0) {
      for (std::size_t k = 0; k < accuracies.size(); ++k) {
        ensemble.alphas[k] = accuracies[k] / total;
      }
    }
  };
  auto combined = [&] {
    VectorXd p = VectorXd::Zero(n);
    for (std::size_t k = 0; k < outputs.size(); ++k) p += ensemble.alphas[k] * outputs[k];
    return p;
  };

  for (int k = 0; k < config.components; ++k) {
    const std::uint64_t stream = config.reuse_seed ? 0 : static_cast<std::uint64_t>(k);
    ComponentLog log;
    ComponentNet net = train_component(init_component(features.cols(),
                                                      derive_seed(config.seed, stream)),
                                       features, labels, weights, config.train, &log.loss);
    VectorXd out = forward_batch(net, features);
    log.train_accuracy = accuracy(out, labels);

    ensemble.components.push_back(std::move(net));
    accuracies.push_back(log.train_accuracy);
    outputs.push_back(std::move(out));
    refresh_alphas();
    const VectorXd p_hat = combined();
    log.ensemble_accuracy = accuracy(p_hat, labels);

    if (config.early_stop_tolerance && k > 0 &&
        log.ensemble_accuracy - previous_ensemble_accuracy < *config.early_stop_tolerance) {
      ensemble.components.pop_back();
      accuracies.pop_back();
      outputs.pop_back();
      refresh_alphas();
      break;
    }
    previous_ensemble_accuracy = log.ensemble_accuracy;
    ensemble.train_log.push_back(std::move(log));

    if (config.reweight) {
      double total = 0.0;
      for (Index i = 0; i < n; ++i) {
        weights[static_cast<std::size_t>(i)] =
            std::abs(labels[static_cast<std::size_t>(i)] - p_hat(i));
        total += weights[static_cast<std::size_t>(i)];
      }
      if (total > 0.0) {
        for (auto& w : weights) w /= total;
      } else {
        std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(n));
      }
    }
  }
  return ensemble;
}

VectorXd ensemble_positive(const BoostEnsemble& ensemble, const MatrixXd& features) {
  if (ensemble.components.empty()) fail(ErrorCode::kInvalidArgument, "empty ensemble");
  VectorXd p = VectorXd::Zero(features.rows());
  for (std::size_t k = 0; k < ensemble.components.size(); ++k) {
    p += ensemble.alphas[k] * forward_batch(ensemble.components[k], features);
  }
  return p.cwiseMax(0.0).cwiseMin(1.0);
}

ConfidenceVector predict_confidence(const BoostEnsemble& ensemble,
                                    std::span<const double> features) {
  const Eigen::Map<const Eigen::RowVectorXd> row(features.data(),
                                                  static_cast<Index>(features.size()));
  return ConfidenceVector::from_positive(ensemble_positive(ensemble, MatrixXd(row))(0));
}

namespace {

nlohmann::ordered_json layout_json(const ActivationLayout& layout) {
  return {{"sigmoid", layout.sigmoid}, {"identity", layout.identity}, {"radial", layout.radial}};
}

}  // namespace

std::string ensemble_to_json(const BoostEnsemble& ensemble) {
  const Index d = ensemble.input_dim();
  nlohmann::ordered_json out;
  out["version"] = "boostnet-v1";
  out["input_dim"] = d;
  out["layers"] = nlohmann::ordered_json::array(
      {{{"inputs", d}, {"outputs", kHiddenLayer1.width()},
        {"activations", layout_json(kHiddenLayer1)}},
       {{"inputs", kHiddenLayer1.width()}, {"outputs", kHiddenLayer2.width()},
        {"activations", layout_json(kHiddenLayer2)}},
       {{"inputs", kHiddenLayer2.width()}, {"outputs", 1}, {"activations", {{"logistic", 1}}}}});
  out["parameter_order"] = "w1 row-major, b1, w2 row-major, b2, w3, b3";
  out["alphas"] = ensemble.alphas;
  nlohmann::ordered_json components = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < ensemble.components.size(); ++k) {
    nlohmann::ordered_json c;
    c["parameters"] = ensemble.components[k].flatten();
    if (k < ensemble.train_log.size()) {
      const auto& log = ensemble.train_log[k];
      c["train_accuracy"] = log.train_accuracy;
      c["ensemble_accuracy"] = log.ensemble_accuracy;
      c["loss"] = log.loss;
    }
    components.push_back(std::move(c));
  }
  out["components"] = std::move(components);
  const auto& cfg = ensemble.config;
  out["config"] = {{"components", cfg.components},
                   {"learning_rate", cfg.train.learning_rate},
                   {"epochs", cfg.train.epochs},
                   {"l2", cfg.train.l2},
                   {"seed", cfg.seed},
                   {"early_stop_tolerance", cfg.early_stop_tolerance
                                                ? nlohmann::ordered_json(*cfg.early_stop_tolerance)
                                                : nlohmann::ordered_json(nullptr)},
                   {"reweight", cfg.reweight},
                   {"reuse_seed", cfg.reuse_seed}};
  return out.dump();
}

BoostEnsemble ensemble_from_json(const std::string& text) {
  BoostEnsemble ensemble;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.at("version").get<std::string>() != "boostnet-v1") {
      fail(ErrorCode::kParse, "unsupported model version " + doc.at("version").dump());
    }
    const Index d = doc.at("input_dim").get<Index>();
    const auto& layers = doc.at("layers");
    if (layers.size() != 3 ||
        layers[0].at("activations").at("sigmoid").get<int>() != kHiddenLayer1.sigmoid ||
        layers[0].at("activations").at("identity").get<int>() != kHiddenLayer1.identity ||
        layers[0].at("activations").at("radial").get<int>() != kHiddenLayer1.radial ||
        layers[1].at("activations").at("sigmoid").get<int>() != kHiddenLayer2.sigmoid ||
        layers[1].at("activations").at("identity").get<int>() != kHiddenLayer2.identity ||
        layers[1].at("activations").at("radial").get<int>() != kHiddenLayer2.radial) {
      fail(ErrorCode::kParse, "model layer layout does not match boostnet-v1");
    }
    ensemble.alphas = doc.at("alphas").get<std::vector<double>>();
    for (const auto& c : doc.at("components")) {
      ComponentNet net = ComponentNet::zeros(d);
      net.assign(c.at("parameters").get<std::vector<double>>());
      ensemble.components.push_back(std::move(net));
      ComponentLog log;
      if (c.contains("train_accuracy")) {
        log.train_accuracy = c.at("train_accuracy").get<double>();
        log.ensemble_accuracy = c.at("ensemble_accuracy").get<double>();
        log.loss = c.at("loss").get<std::vector<double>>();
        ensemble.train_log.push_back(std::move(log));
      }
    }
    const auto& cfg = doc.at("config");
    ensemble.config.components = cfg.at("components").get<int>();
    ensemble.config.train.learning_rate = cfg.at("learning_rate").get<double>();
    ensemble.config.train.epochs = cfg.at("epochs").get<int>();
    ensemble.config.train.l2 = cfg.at("l2").get<double>();
    ensemble.config.seed = cfg.at("seed").get<std::uint64_t>();
    if (!cfg.at("early_stop_tolerance").is_null()) {
      ensemble.config.early_stop_tolerance = cfg.at("early_stop_tolerance").get<double>();
    }
    ensemble.config.reweight = cfg.at("reweight").get<bool>();
    ensemble.config.reuse_seed = cfg.at("reuse_seed").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("model JSON: ") + e.what());
  }
  if (ensemble.components.empty() || ensemble.alphas.size() != ensemble.components.size()) {
    fail(ErrorCode::kParse, "model JSON: alphas must match components");
  }
  const double total = std::accumulate(ensemble.alphas.begin(), ensemble.alphas.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::kParse, "model JSON: alphas must sum to 1");
  return ensemble;
}

}  // namespace fuzzfuse
