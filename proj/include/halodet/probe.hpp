#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace halodet {

// Per-example answer-token hidden states, T x d.
using TokenStates = Eigen::MatrixXd;

struct ProbeParams {
  int epochs = 200;
  double step = 1e-3;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  bool freeze_query = false;
  int patience = 20;  // only used when a validation split is given
};

// Attention-pooling probe:
//   alpha = softmax_t(query . h_t / sqrt(d))
//   score = sigmoid(out_weights . sum_t alpha_t h_t + out_bias)
struct ProbeModel {
  Eigen::VectorXd query;
  Eigen::VectorXd out_weights;
  double out_bias = 0.0;
};

Eigen::VectorXd probe_attention(const ProbeModel& model, const TokenStates& tokens);
Eigen::VectorXd probe_predict(const ProbeModel& model, std::span<const TokenStates> examples);

// Mean cross-entropy + (l2 / 2) (|query|^2 + |out_weights|^2).
double probe_loss(const ProbeModel& model, std::span<const TokenStates> examples, const Eigen::VectorXd& y,
                  double l2);

struct ProbeGradient {
  Eigen::VectorXd query;
  Eigen::VectorXd out_weights;
  double out_bias = 0.0;
};

ProbeGradient probe_gradient(const ProbeModel& model, std::span<const TokenStates> examples,
                             const Eigen::VectorXd& y, double l2);

struct ProbeValidation {
  std::span<const TokenStates> examples;
  const Eigen::VectorXd& y;
};

struct ProbeFit {
  ProbeModel model;
  std::vector<double> train_loss;       // loss before each step, then the final loss
  std::vector<double> validation_loss;  // per epoch, when validation ran
  int epochs_run = 0;
};

// Full-batch gradient descent from query = 0, out_weights = 0 and
// out_bias = log-odds of the base rate. With validation, the epoch with the
// lowest validation loss is kept (patience as configured).
ProbeFit probe_fit(std::span<const TokenStates> examples, const Eigen::VectorXd& y, const ProbeParams& params = {},
                   std::optional<ProbeValidation> validation = std::nullopt);

// Reference trajectory: logistic regression on mean-pooled token states
// trained with the same optimizer (same init, step, l2 on the weights).
// `loss` holds the starting loss and the loss after every step.
struct PooledLogisticTrace {
  Eigen::VectorXd weights;
  double bias = 0.0;
  std::vector<double> loss;
};

PooledLogisticTrace pooled_logistic_gd(const Eigen::MatrixXd& pooled, const Eigen::VectorXd& y,
                                       const ProbeParams& params);

nlohmann::json probe_to_json(const ProbeModel& model);
ProbeModel probe_from_json(const nlohmann::json& doc);

}  // namespace halodet
