#include "halodet/classifier.hpp"

#include <cmath>

#include "halodet/csv.hpp"
#include "halodet/error.hpp"

namespace halodet {

namespace {

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

std::string_view classifier_name(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::LogReg: return "logreg";
    case ClassifierKind::Gbdt: return "gbdt";
    case ClassifierKind::Probe: return "probe";
    case ClassifierKind::External: return "external";
  }
  return "?";
}

ClassifierKind classifier_from_name(std::string_view name) {
  if (name == "logreg") return ClassifierKind::LogReg;
  if (name == "gbdt") return ClassifierKind::Gbdt;
  if (name == "probe") return ClassifierKind::Probe;
  if (name == "external") return ClassifierKind::External;
  throw Error(ErrorCode::ConfigError, "unknown classifier '" + std::string(name) + "'");
}

Eigen::VectorXd labels_to_vector(std::span<const std::uint8_t> labels) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw Error(ErrorCode::InvalidArgument, "unlabeled example where a label is required");
    y[static_cast<Eigen::Index>(i)] = labels[i];
  }
  return y;
}

Eigen::VectorXd external_fit_predict(const AdapterHandle& handle, const Eigen::MatrixXd& x_train,
                                     const Eigen::VectorXd& y_train, const Eigen::MatrixXd& x_eval) {
  if (x_train.cols() > kExternalFeatureCap) {
    throw Error(ErrorCode::FeatureCap, "external classifier accepts at most " + std::to_string(kExternalFeatureCap) +
                                           " features, got " + std::to_string(x_train.cols()));
  }
  if (x_eval.cols() != x_train.cols()) throw Error(ErrorCode::DimensionMismatch, "external: train/eval widths differ");
  if (y_train.size() != x_train.rows()) throw Error(ErrorCode::Misaligned, "external: labels and rows differ");
  require_binary_labels(y_train);

  std::vector<int> labels(static_cast<std::size_t>(y_train.size()));
  for (Eigen::Index i = 0; i < y_train.size(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(y_train[i]);

  AdapterSession session(handle);
  if (!session.hello().has_cap("classify")) {
    throw Error(ErrorCode::AdapterProtocol, "adapter '" + session.hello().name + "' does not advertise 'classify'");
  }
  const auto reply = session.request({{"cmd", "fit_predict"},
                                      {"seed", handle.seed},
                                      {"x_train", matrix_to_json(x_train)},
                                      {"y_train", labels},
                                      {"x_eval", matrix_to_json(x_eval)}});
  if (!reply.contains("probs") || !reply.at("probs").is_array()) {
    throw Error(ErrorCode::AdapterMalformed, "fit_predict reply lacks a 'probs' array");
  }
  const auto& probs = reply.at("probs");
  if (static_cast<Eigen::Index>(probs.size()) != x_eval.rows()) {
    throw Error(ErrorCode::AdapterWrongLength, "adapter returned " + std::to_string(probs.size()) +
                                                   " probabilities for " + std::to_string(x_eval.rows()) + " rows");
  }
  Eigen::VectorXd out(x_eval.rows());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!probs[i].is_number()) throw Error(ErrorCode::AdapterMalformed, "probability is not a number");
    const double p = probs[i].get<double>();
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw Error(ErrorCode::AdapterOutOfRange, "adapter probability " + csv::format_number(p, 17) +
                                                    " outside [0, 1]");
    }
    out[static_cast<Eigen::Index>(i)] = p;
  }
  return out;
}

TabularFitResult fit_tabular(ClassifierKind kind, const ClassifierSettings& settings, const Eigen::MatrixXd& x_train,
                             const Eigen::VectorXd& y_train, const Eigen::MatrixXd& x_val,
                             const Eigen::VectorXd& y_val) {
  switch (kind) {
    case ClassifierKind::LogReg: {
      auto model = x_val.rows() > 0
                       ? logreg_fit_select(x_train, y_train, x_val, y_val, settings.lambda_grid, settings.logreg)
                       : logreg_fit(x_train, y_train, settings.logreg);
      std::string diag = "lambda=" + csv::format_number(model.l2_lambda, 3) + ";iter=" +
                         std::to_string(model.iterations) + (model.converged ? "" : ";not_converged");
      return {std::move(model), diag};
    }
    case ClassifierKind::Gbdt: {
      std::optional<ValidationSplit> val;
      if (x_val.rows() > 0) val.emplace(ValidationSplit{x_val, y_val});
      auto model = gbdt_fit(x_train, y_train, settings.gbdt, val);
      std::string diag = "rounds=" + std::to_string(model.trees.size());
      return {std::move(model), diag};
    }
    case ClassifierKind::External: {
      if (!settings.adapter) throw Error(ErrorCode::ConfigError, "external classifier needs an adapter command");
      if (x_train.cols() > kExternalFeatureCap) {
        throw Error(ErrorCode::FeatureCap, "external classifier accepts at most " +
                                               std::to_string(kExternalFeatureCap) + " features, got " +
                                               std::to_string(x_train.cols()));
      }
      require_binary_labels(y_train);
      return {ExternalFit{*settings.adapter, x_train, y_train}, "in_context"};
    }
    case ClassifierKind::Probe:
      break;
  }
  throw Error(ErrorCode::ConfigError, "the probe consumes token states, not feature rows");
}

Eigen::VectorXd score_tabular(const TabularModel& model, const Eigen::MatrixXd& x) {
  return std::visit(
      [&](const auto& m) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogRegModel>) return logreg_predict(m, x);
        else if constexpr (std::is_same_v<T, GbdtModel>) return gbdt_predict(m, x);
        else return external_fit_predict(m.handle, m.x_train, m.y_train, x);
      },
      model);
}

nlohmann::json tabular_to_json(const TabularModel& model) {
  return std::visit(
      [](const auto& m) -> nlohmann::json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LogRegModel>) {
          return {{"kind", "logreg"},
                  {"weights", to_vector(m.weights)},
                  {"bias", m.bias},
                  {"l2_lambda", m.l2_lambda},
                  {"feature_mean", to_vector(m.feature_mean)},
                  {"feature_scale", to_vector(m.feature_scale)}};
        } else if constexpr (std::is_same_v<T, GbdtModel>) {
          auto doc = gbdt_to_json(m);
          doc["kind"] = "gbdt";
          return doc;
        } else {
          std::vector<int> labels;
          for (Eigen::Index i = 0; i < m.y_train.size(); ++i) labels.push_back(static_cast<int>(m.y_train[i]));
          return {{"kind", "external"},
                  {"command", m.handle.command},
                  {"timeout_seconds", m.handle.timeout_seconds},
                  {"seed", m.handle.seed},
                  {"x_train", matrix_to_json(m.x_train)},
                  {"y_train", labels}};
        }
      },
      model);
}

TabularModel tabular_from_json(const nlohmann::json& doc) {
  try {
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "logreg") {
      LogRegModel m;
      auto vec = [&](const char* key) {
        const auto v = doc.at(key).get<std::vector<double>>();
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
      };
      m.weights = vec("weights");
      m.bias = doc.at("bias").get<double>();
      m.l2_lambda = doc.at("l2_lambda").get<double>();
      m.feature_mean = vec("feature_mean");
      m.feature_scale = vec("feature_scale");
      if (m.feature_mean.size() != m.weights.size() || m.feature_scale.size() != m.weights.size()) {
        throw Error(ErrorCode::InvalidArgument, "logreg model fields have inconsistent sizes");
      }
      m.converged = true;
      return m;
    }
    if (kind == "gbdt") return gbdt_from_json(doc);
    if (kind == "external") {
      ExternalFit m;
      m.handle.command = doc.at("command").get<std::vector<std::string>>();
      m.handle.timeout_seconds = doc.at("timeout_seconds").get<double>();
      m.handle.seed = doc.at("seed").get<std::uint64_t>();
      m.x_train = matrix_from_json(doc.at("x_train"), "x_train");
      const auto labels = doc.at("y_train").get<std::vector<int>>();
      m.y_train.resize(static_cast<Eigen::Index>(labels.size()));
      for (std::size_t i = 0; i < labels.size(); ++i) m.y_train[static_cast<Eigen::Index>(i)] = labels[i];
      return m;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown classifier kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed classifier model: ") + e.what());
  }
}

ProbeFitResult fit_probe(const ClassifierSettings& settings, std::span<const TokenStates> train,
                         const Eigen::VectorXd& y_train, std::span<const TokenStates> val,
                         const Eigen::VectorXd& y_val) {
  std::optional<ProbeValidation> validation;
  if (!val.empty()) validation.emplace(ProbeValidation{val, y_val});
  auto fit = probe_fit(train, y_train, settings.probe, validation);
  return {std::move(fit.model), "epochs=" + std::to_string(fit.epochs_run)};
}

}  // namespace halodet
