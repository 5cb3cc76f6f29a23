#include "halodet/probe.hpp"

#include <cmath>

#include "halodet/error.hpp"
#include "halodet/logreg.hpp"

namespace halodet {

namespace {

void check_examples(std::span<const TokenStates> examples, Eigen::Index d) {
  for (const auto& h : examples) {
    if (h.rows() < 1) throw Error(ErrorCode::InvalidArgument, "probe: every example needs at least one token");
    if (h.cols() != d) {
      throw Error(ErrorCode::DimensionMismatch, "probe expects hidden width " + std::to_string(d) + ", got " +
                                                    std::to_string(h.cols()));
    }
    if (!h.allFinite()) throw Error(ErrorCode::NonFinite, "probe: hidden states contain NaN or Inf");
  }
}

struct Forward {
  Eigen::VectorXd alpha;
  Eigen::VectorXd pooled;
  double logit = 0.0;
};

Forward forward(const ProbeModel& model, const TokenStates& h) {
  Forward f;
  f.alpha = probe_attention(model, h);
  f.pooled = h.transpose() * f.alpha;
  f.logit = model.out_weights.dot(f.pooled) + model.out_bias;
  return f;
}

double base_log_odds(const Eigen::VectorXd& y) {
  const double rate = y.mean();
  return std::log(rate / (1.0 - rate));
}

}  // namespace

Eigen::VectorXd probe_attention(const ProbeModel& model, const TokenStates& tokens) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(tokens.cols()));
  Eigen::VectorXd s = tokens * model.query * inv_sqrt_d;
  const double top = s.maxCoeff();
  s = (s.array() - top).exp();
  return s / s.sum();
}

Eigen::VectorXd probe_predict(const ProbeModel& model, std::span<const TokenStates> examples) {
  check_examples(examples, model.query.size());
  Eigen::VectorXd out(static_cast<Eigen::Index>(examples.size()));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = sigmoid(forward(model, examples[i]).logit);
  }
  return out;
}

double probe_loss(const ProbeModel& model, std::span<const TokenStates> examples, const Eigen::VectorXd& y,
                  double l2) {
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const double u = forward(model, examples[i]).logit;
    total += softplus(u) - y[static_cast<Eigen::Index>(i)] * u;
  }
  return total / static_cast<double>(examples.size()) +
         0.5 * l2 * (model.query.squaredNorm() + model.out_weights.squaredNorm());
}

ProbeGradient probe_gradient(const ProbeModel& model, std::span<const TokenStates> examples,
                             const Eigen::VectorXd& y, double l2) {
  const auto d = model.query.size();
  const double n = static_cast<double>(examples.size());
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  ProbeGradient g;
  g.query = Eigen::VectorXd::Zero(d);
  g.out_weights = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& h = examples[i];
    const auto f = forward(model, h);
    const double r = (sigmoid(f.logit) - y[static_cast<Eigen::Index>(i)]) / n;
    g.out_weights += r * f.pooled;
    g.out_bias += r;
    // d loss / d alpha_t = r * w . h_t; back through the softmax.
    const Eigen::VectorXd d_alpha = r * (h * model.out_weights);
    const double mean_d = f.alpha.dot(d_alpha);
    const Eigen::VectorXd d_score = f.alpha.array() * (d_alpha.array() - mean_d);
    g.query += h.transpose() * d_score * inv_sqrt_d;
  }
  g.query += l2 * model.query;
  g.out_weights += l2 * model.out_weights;
  return g;
}

ProbeFit probe_fit(std::span<const TokenStates> examples, const Eigen::VectorXd& y, const ProbeParams& params,
                   std::optional<ProbeValidation> validation) {
  if (examples.empty()) throw Error(ErrorCode::InvalidArgument, "probe: no training examples");
  if (static_cast<Eigen::Index>(examples.size()) != y.size()) {
    throw Error(ErrorCode::Misaligned, "probe: labels and examples differ in length");
  }
  if (params.epochs < 0 || !(params.step > 0) || !(params.l2 >= 0)) {
    throw Error(ErrorCode::InvalidArgument, "probe: epochs >= 0, step > 0 and l2 >= 0 required");
  }
  require_binary_labels(y);
  const auto d = examples.front().cols();
  check_examples(examples, d);
  if (validation) check_examples(validation->examples, d);

  ProbeFit fit;
  fit.model.query = Eigen::VectorXd::Zero(d);
  fit.model.out_weights = Eigen::VectorXd::Zero(d);
  fit.model.out_bias = base_log_odds(y);

  ProbeModel best = fit.model;
  double best_val = 0.0;
  int best_epoch = 0;
  auto val_loss = [&](const ProbeModel& m) { return probe_loss(m, validation->examples, validation->y, 0.0); };
  if (validation) {
    best_val = val_loss(fit.model);
    fit.validation_loss.push_back(best_val);
  }

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    fit.train_loss.push_back(probe_loss(fit.model, examples, y, params.l2));
    const auto g = probe_gradient(fit.model, examples, y, params.l2);
    if (!params.freeze_query) fit.model.query -= params.step * g.query;
    fit.model.out_weights -= params.step * g.out_weights;
    fit.model.out_bias -= params.step * g.out_bias;
    fit.epochs_run = epoch + 1;
    if (validation) {
      const double loss = val_loss(fit.model);
      fit.validation_loss.push_back(loss);
      if (loss < best_val) {
        best_val = loss;
        best = fit.model;
        best_epoch = epoch + 1;
      } else if (epoch + 1 - best_epoch >= params.patience) {
        break;
      }
    }
  }
  fit.train_loss.push_back(probe_loss(fit.model, examples, y, params.l2));
  if (validation) fit.model = best;
  return fit;
}

PooledLogisticTrace pooled_logistic_gd(const Eigen::MatrixXd& pooled, const Eigen::VectorXd& y,
                                       const ProbeParams& params) {
  require_binary_labels(y);
  const double n = static_cast<double>(pooled.rows());
  PooledLogisticTrace trace;
  trace.weights = Eigen::VectorXd::Zero(pooled.cols());
  trace.bias = base_log_odds(y);
  for (int epoch = 0; epoch <= params.epochs; ++epoch) {
    const Eigen::VectorXd logits = (pooled * trace.weights).array() + trace.bias;
    double loss = 0.0;
    Eigen::VectorXd r(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      loss += softplus(logits[i]) - y[i] * logits[i];
      r[i] = (sigmoid(logits[i]) - y[i]) / n;
    }
    trace.loss.push_back(loss / n + 0.5 * params.l2 * trace.weights.squaredNorm());
    if (epoch == params.epochs) break;
    const Eigen::VectorXd gw = pooled.transpose() * r + params.l2 * trace.weights;
    trace.weights -= params.step * gw;
    trace.bias -= params.step * r.sum();
  }
  return trace;
}

nlohmann::json probe_to_json(const ProbeModel& model) {
  return {{"query", std::vector<double>(model.query.data(), model.query.data() + model.query.size())},
          {"out_weights",
           std::vector<double>(model.out_weights.data(), model.out_weights.data() + model.out_weights.size())},
          {"out_bias", model.out_bias}};
}

ProbeModel probe_from_json(const nlohmann::json& doc) {
  ProbeModel model;
  try {
    const auto q = doc.at("query").get<std::vector<double>>();
    const auto w = doc.at("out_weights").get<std::vector<double>>();
    if (q.size() != w.size()) throw Error(ErrorCode::InvalidArgument, "probe query/weights width mismatch");
    model.query = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
    model.out_weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    model.out_bias = doc.at("out_bias").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed probe model: ") + e.what());
  }
  return model;
}

}  // namespace halodet
