#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace halodet {

struct GbdtParams {
  int n_rounds = 200;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 5;
  double subsample = 1.0;
  std::uint64_t seed = 0;
  int early_stopping_patience = 20;  // only used when a validation split is given
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;  // x[feature] <= threshold goes left
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf log-odds contribution

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const double* row) const;
  int depth() const;
};

struct GbdtModel {
  std::vector<RegressionTree> trees;
  double learning_rate = 0.1;
  double base_score = 0.0;  // log-odds of the training base rate
  int max_depth = 3;
  int n_features = 0;
  std::vector<double> validation_loss;  // per round, when early stopping ran
};

struct ValidationSplit {
  const Eigen::MatrixXd& x;
  const Eigen::VectorXd& y;
};

// Gradient boosting on logistic loss. Each round fits a regression tree to
// the residuals y - p with exact greedy splits (thresholds at midpoints of
// adjacent unique values, ties to the lowest feature and then the lowest
// threshold); leaves take one Newton step, sum(residual) / sum(p(1 - p)).
// With a validation split, rounds are chosen by validation log loss with the
// configured patience and the ensemble is truncated to the best round.
GbdtModel gbdt_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GbdtParams& params = {},
                   std::optional<ValidationSplit> validation = std::nullopt);

Eigen::VectorXd gbdt_margin(const GbdtModel& model, const Eigen::MatrixXd& x);
Eigen::VectorXd gbdt_predict(const GbdtModel& model, const Eigen::MatrixXd& x);

// Partition of the rows of x into leaves of one tree (leaf node index per row).
std::vector<int> tree_leaf_assignment(const RegressionTree& tree, const Eigen::MatrixXd& x);

nlohmann::json gbdt_to_json(const GbdtModel& model);
GbdtModel gbdt_from_json(const nlohmann::json& doc);

}  // namespace halodet
