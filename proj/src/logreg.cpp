#include "halodet/logreg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "halodet/error.hpp"

namespace halodet {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) {
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

void require_binary_labels(const Eigen::VectorXd& y) {
  bool has0 = false, has1 = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) has0 = true;
    else if (y[i] == 1.0) has1 = true;
    else throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
  }
  if (!has0 || !has1) throw Error(ErrorCode::DegenerateLabels, "degenerate labels: need both classes");
}

double logreg_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double b,
                        double lambda) {
  const Eigen::VectorXd z = (x * w).array() + b;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) loss += softplus(z[i]) - y[i] * z[i];
  return loss / static_cast<double>(z.size()) + 0.5 * lambda * w.squaredNorm();
}

LogRegGradient logreg_gradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                               double b, double lambda) {
  const auto n = static_cast<double>(x.rows());
  Eigen::VectorXd residual = (x * w).array() + b;
  for (Eigen::Index i = 0; i < residual.size(); ++i) residual[i] = sigmoid(residual[i]) - y[i];
  LogRegGradient g;
  g.w = x.transpose() * residual / n + lambda * w;
  g.b = residual.sum() / n;
  return g;
}

Eigen::MatrixXd logreg_standardize(const LogRegModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.weights.size()) {
    throw Error(ErrorCode::DimensionMismatch, "logreg expects " + std::to_string(model.weights.size()) +
                                                  " features, got " + std::to_string(x.cols()));
  }
  Eigen::MatrixXd z = x.rowwise() - model.feature_mean.transpose();
  return z.array().rowwise() / model.feature_scale.transpose().array();
}

LogRegModel logreg_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const LogRegParams& params) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "logreg: need at least 2 rows");
  if (y.size() != n) throw Error(ErrorCode::Misaligned, "logreg: labels and rows differ in length");
  if (!x.allFinite()) throw Error(ErrorCode::NonFinite, "logreg: input contains NaN or Inf");
  if (!(params.l2_lambda >= 0) || !std::isfinite(params.l2_lambda)) {
    throw Error(ErrorCode::InvalidArgument, "logreg: l2_lambda must be finite and >= 0");
  }
  require_binary_labels(y);

  LogRegModel model;
  model.l2_lambda = params.l2_lambda;
  model.feature_mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - model.feature_mean.transpose();
  model.feature_scale = (centered.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt().transpose();
  // Constant columns are centred but left unscaled.
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(model.feature_scale[j] > 1e-12)) model.feature_scale[j] = 1.0;
  }
  model.weights = Eigen::VectorXd::Zero(p);
  const Eigen::MatrixXd xs = logreg_standardize(model, x);

  const double lambda = params.l2_lambda;
  const double base_rate = y.mean();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
  double b = std::log(base_rate / (1.0 - base_rate));
  double f = logreg_objective(xs, y, w, b, lambda);

  for (int iter = 0; iter < params.max_iter; ++iter) {
    const auto g = logreg_gradient(xs, y, w, b, lambda);
    const double gnorm = std::max(g.w.size() ? g.w.cwiseAbs().maxCoeff() : 0.0, std::abs(g.b));
    model.iterations = iter;
    if (gnorm < params.tol) {
      model.converged = true;
      break;
    }
    // Hessian over (w, b); bias sits in the last row/column.
    Eigen::VectorXd s = (xs * w).array() + b;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = sigmoid(s[i]);
      s[i] = pi * (1.0 - pi);
    }
    Eigen::MatrixXd hess(p + 1, p + 1);
    hess.topLeftCorner(p, p) = xs.transpose() * s.asDiagonal() * xs / static_cast<double>(n);
    hess.topLeftCorner(p, p).diagonal().array() += lambda;
    hess.topRightCorner(p, 1) = xs.transpose() * s / static_cast<double>(n);
    hess.bottomLeftCorner(1, p) = hess.topRightCorner(p, 1).transpose();
    hess(p, p) = s.sum() / static_cast<double>(n);
    hess.diagonal().array() += 1e-12;
    Eigen::VectorXd grad(p + 1);
    grad << g.w, g.b;
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite() || step.dot(grad) <= 0) step = grad;

    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Eigen::VectorXd w_new = w - t * step.head(p);
      const double b_new = b - t * step[p];
      const double f_new = logreg_objective(xs, y, w_new, b_new, lambda);
      if (f_new <= f - 1e-4 * t * step.dot(grad)) {
        w = w_new;
        b = b_new;
        f = f_new;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) {
      // No representable decrease left; the gradient is as small as it gets.
      model.iterations = iter + 1;
      break;
    }
    model.iterations = iter + 1;
  }
  if (!model.converged) {
    const auto g = logreg_gradient(xs, y, w, b, lambda);
    const double gnorm = std::max(g.w.size() ? g.w.cwiseAbs().maxCoeff() : 0.0, std::abs(g.b));
    model.converged = gnorm < params.tol;
  }
  model.weights = w;
  model.bias = b;
  return model;
}

Eigen::VectorXd logreg_predict(const LogRegModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd xs = logreg_standardize(model, x);
  Eigen::VectorXd z = (xs * model.weights).array() + model.bias;
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = sigmoid(z[i]);
  return z;
}

double log_loss(const Eigen::VectorXd& probs, const Eigen::VectorXd& y) {
  constexpr double kEps = 1e-15;
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kEps, 1.0 - kEps);
    total -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(probs.size());
}

LogRegModel logreg_fit_select(const Eigen::MatrixXd& x_train, const Eigen::VectorXd& y_train,
                              const Eigen::MatrixXd& x_val, const Eigen::VectorXd& y_val,
                              std::span<const double> lambdas, const LogRegParams& base) {
  if (lambdas.empty()) throw Error(ErrorCode::InvalidArgument, "logreg: empty lambda grid");
  LogRegModel best;
  double best_loss = std::numeric_limits<double>::infinity();
  bool have = false;
  for (double lambda : lambdas) {
    LogRegParams params = base;
    params.l2_lambda = lambda;
    auto model = logreg_fit(x_train, y_train, params);
    if (x_val.rows() == 0) return model;
    const double loss = log_loss(logreg_predict(model, x_val), y_val);
    if (!have || loss < best_loss) {
      best = std::move(model);
      best_loss = loss;
      have = true;
    }
  }
  return best;
}

}  // namespace halodet
