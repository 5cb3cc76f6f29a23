#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace halodet {

struct LogRegParams {
  double l2_lambda = 1e-2;
  int max_iter = 1000;
  double tol = 1e-6;
};

// L2-regularized logistic regression on internally standardized features.
// Scores are P(label = 1) = sigmoid(w . x_std + bias).
struct LogRegModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double l2_lambda = 0.0;
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_scale;
  int iterations = 0;
  bool converged = false;
};

double sigmoid(double z);
// log(1 + exp(z)) without overflow.
double softplus(double z);

// mean_i [softplus(z_i) - y_i z_i] + (lambda / 2) |w|^2, z = X w + b.
// The bias is not penalized.
double logreg_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b,
                        double lambda);

struct LogRegGradient {
  Eigen::VectorXd w;
  double b = 0.0;
};

LogRegGradient logreg_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                               double b, double lambda);

// Damped Newton with backtracking. Converged when the gradient's infinity
// norm drops below tol. Throws Error(DegenerateLabels) for single-class y
// and Error(NonFinite) for NaN/Inf input.
LogRegModel logreg_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LogRegParams& params = {});

Eigen::VectorXd logreg_predict(const LogRegModel& model, const Eigen::MatrixXd& x);

// Applies the model's stored standardization.
Eigen::MatrixXd logreg_standardize(const LogRegModel& model, const Eigen::MatrixXd& x);

// Mean negative log-likelihood of probabilities against 0/1 labels, with
// probabilities clipped to [1e-15, 1 - 1e-15].
double log_loss(const Eigen::VectorXd& probs, const Eigen::VectorXd& y);

// Fits one model per lambda on the training split and keeps the one with the
// lowest validation log loss (first in grid order on ties).
LogRegModel logreg_fit_select(const Eigen::MatrixXd& x_train, const Eigen::VectorXd& y_train,
                              const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val,
                              std::span<const double> lambdas, const LogRegParams& base = {});

inline const std::vector<double> kDefaultLambdaGrid = {1e-3, 1e-2, 1e-1};

// Shared precondition checks for binary classifiers.
void require_binary_labels(const Eigen::VectorXd& y);

}  // namespace halodet
