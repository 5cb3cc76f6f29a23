#include "halodet/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "halodet/error.hpp"
#include "halodet/logreg.hpp"
#include "halodet/rng.hpp"

namespace halodet {

namespace {

constexpr double kHessianFloor = 1e-12;
constexpr double kMinGain = 1e-12;

double midpoint(double lo, double hi) {
  const double mid = 0.5 * (lo + hi);
  return (mid >= lo && mid < hi) ? mid : lo;
}

struct NodeStats {
  int count = 0;
  double sum = 0.0;
  // running state while scanning one feature
  int left_count = 0;
  double left_sum = 0.0;
  double prev = 0.0;
  bool has_prev = false;
  // best split so far
  double best_gain = kMinGain;
  int best_feature = -1;
  double best_threshold = 0.0;
};

// Row orderings by each feature, ascending by value then by row index.
std::vector<std::vector<int>> presort(const Eigen::MatrixXd& x) {
  std::vector<std::vector<int>> order(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    auto& o = order[static_cast<std::size_t>(j)];
    o.resize(static_cast<std::size_t>(x.rows()));
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return x(a, j) < x(b, j); });
  }
  return order;
}

RegressionTree build_tree(const Eigen::MatrixXd& x, const std::vector<std::vector<int>>& order,
                          const Eigen::VectorXd& residual, const Eigen::VectorXd& hessian,
                          const std::vector<char>& in_sample, const GbdtParams& params) {
  const auto n = static_cast<int>(x.rows());
  RegressionTree tree;
  tree.nodes.emplace_back();
  std::vector<int> node_of(static_cast<std::size_t>(n), -1);
  for (int r = 0; r < n; ++r) {
    if (in_sample[static_cast<std::size_t>(r)]) node_of[static_cast<std::size_t>(r)] = 0;
  }
  std::vector<int> active = {0};
  const int min_leaf = params.min_samples_leaf;

  for (int depth = 0; depth < params.max_depth && !active.empty(); ++depth) {
    std::vector<NodeStats> stats(tree.nodes.size());
    std::vector<char> is_active(tree.nodes.size(), 0);
    for (int a : active) is_active[static_cast<std::size_t>(a)] = 1;
    for (int r = 0; r < n; ++r) {
      const int a = node_of[static_cast<std::size_t>(r)];
      if (a < 0 || !is_active[static_cast<std::size_t>(a)]) continue;
      stats[static_cast<std::size_t>(a)].count += 1;
      stats[static_cast<std::size_t>(a)].sum += residual[r];
    }
    std::vector<char> candidate(tree.nodes.size(), 0);
    bool any = false;
    for (int a : active) {
      if (stats[static_cast<std::size_t>(a)].count >= 2 * min_leaf) {
        candidate[static_cast<std::size_t>(a)] = 1;
        any = true;
      }
    }
    if (!any) break;

    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (int a : active) {
        auto& s = stats[static_cast<std::size_t>(a)];
        s.left_count = 0;
        s.left_sum = 0.0;
        s.has_prev = false;
      }
      for (int r : order[static_cast<std::size_t>(j)]) {
        const int a = node_of[static_cast<std::size_t>(r)];
        if (a < 0 || !candidate[static_cast<std::size_t>(a)]) continue;
        auto& s = stats[static_cast<std::size_t>(a)];
        const double v = x(r, j);
        if (s.has_prev && v > s.prev && s.left_count >= min_leaf && s.count - s.left_count >= min_leaf) {
          const double right_sum = s.sum - s.left_sum;
          const int right_count = s.count - s.left_count;
          const double gain = s.left_sum * s.left_sum / s.left_count + right_sum * right_sum / right_count -
                              s.sum * s.sum / s.count;
          if (gain > s.best_gain) {
            s.best_gain = gain;
            s.best_feature = static_cast<int>(j);
            s.best_threshold = midpoint(s.prev, v);
          }
        }
        s.left_count += 1;
        s.left_sum += residual[r];
        s.prev = v;
        s.has_prev = true;
      }
    }

    std::vector<int> next;
    for (int a : active) {
      const auto& s = stats[static_cast<std::size_t>(a)];
      if (!candidate[static_cast<std::size_t>(a)] || s.best_feature < 0) continue;
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[static_cast<std::size_t>(a)];
      node.feature = s.best_feature;
      node.threshold = s.best_threshold;
      node.left = left;
      node.right = left + 1;
      next.push_back(left);
      next.push_back(left + 1);
    }
    for (int r = 0; r < n; ++r) {
      const int a = node_of[static_cast<std::size_t>(r)];
      if (a < 0) continue;
      const auto& node = tree.nodes[static_cast<std::size_t>(a)];
      if (node.is_leaf()) continue;
      node_of[static_cast<std::size_t>(r)] = x(r, node.feature) <= node.threshold ? node.left : node.right;
    }
    active = std::move(next);
  }

  std::vector<double> g(tree.nodes.size(), 0.0), h(tree.nodes.size(), 0.0);
  for (int r = 0; r < n; ++r) {
    const int a = node_of[static_cast<std::size_t>(r)];
    if (a < 0) continue;
    g[static_cast<std::size_t>(a)] += residual[r];
    h[static_cast<std::size_t>(a)] += hessian[r];
  }
  for (std::size_t a = 0; a < tree.nodes.size(); ++a) {
    if (tree.nodes[a].is_leaf()) tree.nodes[a].value = g[a] / std::max(h[a], kHessianFloor);
  }
  return tree;
}

}  // namespace

double RegressionTree::predict(const double* row) const {
  int i = 0;
  while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
    const auto& node = nodes[static_cast<std::size_t>(i)];
    i = row[node.feature] <= node.threshold ? node.left : node.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    for (int c : {nodes[i].left, nodes[i].right}) {
      d[static_cast<std::size_t>(c)] = d[i] + 1;
      deepest = std::max(deepest, d[static_cast<std::size_t>(c)]);
    }
  }
  return deepest;
}

std::vector<int> tree_leaf_assignment(const RegressionTree& tree, const Eigen::MatrixXd& x) {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    int i = 0;
    while (!tree.nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& node = tree.nodes[static_cast<std::size_t>(i)];
      i = x(r, node.feature) <= node.threshold ? node.left : node.right;
    }
    out[static_cast<std::size_t>(r)] = i;
  }
  return out;
}

GbdtModel gbdt_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const GbdtParams& params,
                   std::optional<ValidationSplit> validation) {
  if (params.max_depth < 1) throw Error(ErrorCode::InvalidArgument, "gbdt: max_depth must be >= 1");
  if (params.n_rounds < 0) throw Error(ErrorCode::InvalidArgument, "gbdt: n_rounds must be >= 0");
  if (!(params.learning_rate > 0.0 && params.learning_rate <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "gbdt: learning_rate must be in (0, 1]");
  }
  if (params.min_samples_leaf < 1) throw Error(ErrorCode::InvalidArgument, "gbdt: min_samples_leaf must be >= 1");
  if (!(params.subsample > 0.0 && params.subsample <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "gbdt: subsample must be in (0, 1]");
  }
  if (y.size() != x.rows()) throw Error(ErrorCode::Misaligned, "gbdt: labels and rows differ in length");
  if (!x.allFinite()) throw Error(ErrorCode::NonFinite, "gbdt: input contains NaN or Inf");
  require_binary_labels(y);

  const auto n = static_cast<int>(x.rows());
  GbdtModel model;
  model.learning_rate = params.learning_rate;
  model.max_depth = params.max_depth;
  model.n_features = static_cast<int>(x.cols());
  const double base_rate = y.mean();
  model.base_score = std::log(base_rate / (1.0 - base_rate));

  const auto order = presort(x);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x_rows = x;
  Eigen::VectorXd margin = Eigen::VectorXd::Constant(n, model.base_score);
  Eigen::VectorXd residual(n), hessian(n);
  std::vector<char> in_sample(static_cast<std::size_t>(n), 1);
  Rng rng(params.seed);
  std::vector<int> rows(static_cast<std::size_t>(n));

  Eigen::VectorXd val_margin;
  std::size_t best_trees = 0;
  double best_loss = 0.0;
  if (validation) {
    if (validation->x.cols() != x.cols()) throw Error(ErrorCode::DimensionMismatch, "gbdt: validation width differs");
    val_margin = Eigen::VectorXd::Constant(validation->x.rows(), model.base_score);
    best_loss = log_loss(val_margin.unaryExpr([](double z) { return sigmoid(z); }), validation->y);
    model.validation_loss.push_back(best_loss);
  }

  for (int round = 0; round < params.n_rounds; ++round) {
    for (int r = 0; r < n; ++r) {
      const double p = sigmoid(margin[r]);
      residual[r] = y[r] - p;
      hessian[r] = p * (1.0 - p);
    }
    if (params.subsample < 1.0) {
      std::iota(rows.begin(), rows.end(), 0);
      rng.shuffle(rows);
      const auto keep = std::max<long>(1, std::lround(params.subsample * n));
      std::fill(in_sample.begin(), in_sample.end(), 0);
      for (long i = 0; i < keep; ++i) in_sample[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])] = 1;
    }
    auto tree = build_tree(x, order, residual, hessian, in_sample, params);
    for (int r = 0; r < n; ++r) margin[r] += params.learning_rate * tree.predict(x_rows.row(r).data());
    model.trees.push_back(std::move(tree));

    if (validation) {
      const auto& vx = validation->x;
      for (Eigen::Index r = 0; r < vx.rows(); ++r) {
        const Eigen::VectorXd row = vx.row(r).transpose();
        val_margin[r] += params.learning_rate * model.trees.back().predict(row.data());
      }
      const double loss = log_loss(val_margin.unaryExpr([](double z) { return sigmoid(z); }), validation->y);
      model.validation_loss.push_back(loss);
      if (loss < best_loss) {
        best_loss = loss;
        best_trees = model.trees.size();
      } else if (static_cast<int>(model.trees.size() - best_trees) >= params.early_stopping_patience) {
        break;
      }
    }
  }
  if (validation) model.trees.resize(best_trees);
  return model;
}

Eigen::VectorXd gbdt_margin(const GbdtModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.n_features) {
    throw Error(ErrorCode::DimensionMismatch, "gbdt expects " + std::to_string(model.n_features) +
                                                  " features, got " + std::to_string(x.cols()));
  }
  if (!x.allFinite()) throw Error(ErrorCode::NonFinite, "gbdt: input contains NaN or Inf");
  Eigen::VectorXd out(x.rows());
  Eigen::VectorXd row(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    row = x.row(r).transpose();
    double sum = 0.0;
    for (const auto& tree : model.trees) sum += tree.predict(row.data());
    out[r] = model.base_score + model.learning_rate * sum;
  }
  return out;
}

Eigen::VectorXd gbdt_predict(const GbdtModel& model, const Eigen::MatrixXd& x) {
  return gbdt_margin(model, x).unaryExpr([](double z) { return sigmoid(z); });
}

nlohmann::json gbdt_to_json(const GbdtModel& model) {
  auto trees = nlohmann::json::array();
  for (const auto& tree : model.trees) {
    auto nodes = nlohmann::json::array();
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) nodes.push_back({{"leaf", node.value}});
      else nodes.push_back({{"feature", node.feature}, {"threshold", node.threshold}, {"left", node.left}, {"right", node.right}});
    }
    trees.push_back(std::move(nodes));
  }
  return {{"learning_rate", model.learning_rate},
          {"base_score", model.base_score},
          {"max_depth", model.max_depth},
          {"n_features", model.n_features},
          {"trees", trees}};
}

GbdtModel gbdt_from_json(const nlohmann::json& doc) {
  GbdtModel model;
  try {
    model.learning_rate = doc.at("learning_rate").get<double>();
    model.base_score = doc.at("base_score").get<double>();
    model.max_depth = doc.at("max_depth").get<int>();
    model.n_features = doc.at("n_features").get<int>();
    for (const auto& nodes : doc.at("trees")) {
      RegressionTree tree;
      for (const auto& n : nodes) {
        TreeNode node;
        if (n.contains("leaf")) {
          node.value = n.at("leaf").get<double>();
        } else {
          node.feature = n.at("feature").get<int>();
          node.threshold = n.at("threshold").get<double>();
          node.left = n.at("left").get<int>();
          node.right = n.at("right").get<int>();
        }
        tree.nodes.push_back(node);
      }
      model.trees.push_back(std::move(tree));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("malformed gbdt model: ") + e.what());
  }
  for (const auto& tree : model.trees) {
    const auto size = static_cast<int>(tree.nodes.size());
    if (size == 0) throw Error(ErrorCode::InvalidArgument, "gbdt model has an empty tree");
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) continue;
      if (node.feature >= model.n_features || node.left <= 0 || node.right <= 0 || node.left >= size ||
          node.right >= size || !std::isfinite(node.threshold)) {
        throw Error(ErrorCode::InvalidArgument, "gbdt model has an invalid node");
      }
    }
    if (tree.depth() > model.max_depth) throw Error(ErrorCode::InvalidArgument, "gbdt tree exceeds max_depth");
  }
  return model;
}

}  // namespace halodet
