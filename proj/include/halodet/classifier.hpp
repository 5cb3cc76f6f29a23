#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "halodet/adapter.hpp"
#include "halodet/gbdt.hpp"
#include "halodet/logreg.hpp"
#include "halodet/probe.hpp"
#include "json.hpp"

namespace halodet {

enum class ClassifierKind { LogReg, Gbdt, Probe, External };

std::string_view classifier_name(ClassifierKind kind);
ClassifierKind classifier_from_name(std::string_view name);

// Column limit of the in-context tabular classifier behind the adapter.
inline constexpr int kExternalFeatureCap = 500;

// One fit+predict session on the adapter. Rejects more than 500 columns
// before launching anything; validates the reply length and that every
// probability is a finite number in [0, 1].
Eigen::VectorXd external_fit_predict(const AdapterHandle& handle, const Eigen::MatrixXd& x_train,
                                     const Eigen::VectorXd& y_train, const Eigen::MatrixXd& x_eval);

struct ClassifierSettings {
  LogRegParams logreg;
  std::vector<double> lambda_grid = kDefaultLambdaGrid;
  GbdtParams gbdt;
  ProbeParams probe;
  std::optional<AdapterHandle> adapter;
};

// The in-context classifier has nothing to fit ahead of time; the training
// set travels with the model into each scoring session.
struct ExternalFit {
  AdapterHandle handle;
  Eigen::MatrixXd x_train;
  Eigen::VectorXd y_train;
};

using TabularModel = std::variant<LogRegModel, GbdtModel, ExternalFit>;

struct TabularFitResult {
  TabularModel model;
  std::string diagnostics;
};

// Fits a classifier over feature rows. The validation split is used only for
// model selection: the lambda grid for logreg, early stopping for gbdt. It
// may be empty, in which case defaults apply.
TabularFitResult fit_tabular(ClassifierKind kind, const ClassifierSettings& settings, const Eigen::MatrixXd& x_train,
                             const Eigen::VectorXd& y_train, const Eigen::MatrixXd& x_val,
                             const Eigen::VectorXd& y_val);

Eigen::VectorXd score_tabular(const TabularModel& model, const Eigen::MatrixXd& x);

nlohmann::json tabular_to_json(const TabularModel& model);
TabularModel tabular_from_json(const nlohmann::json& doc);

struct ProbeFitResult {
  ProbeModel model;
  std::string diagnostics;
};

ProbeFitResult fit_probe(const ClassifierSettings& settings, std::span<const TokenStates> train,
                         const Eigen::VectorXd& y_train, std::span<const TokenStates> val,
                         const Eigen::VectorXd& y_val);

Eigen::VectorXd labels_to_vector(std::span<const std::uint8_t> labels);

}  // namespace halodet
