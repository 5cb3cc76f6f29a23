#include "halodet/reduce.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "halodet/error.hpp"

namespace halodet {

namespace {

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

Eigen::MatrixXd standardized(const ReducerModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.mean.size()) {
    fail(ErrorCode::DimensionMismatch, "reducer expects " + std::to_string(model.mean.size()) +
                                           " columns, got " + std::to_string(x.cols()));
  }
  Eigen::MatrixXd z = x.rowwise() - model.mean.transpose();
  return z.array().rowwise() / model.scale.transpose().array();
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vector_from_json(const nlohmann::json& doc, const char* key) {
  const auto values = doc.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

ReducerModel pca_fit(const Eigen::MatrixXd& x, int k, bool standardize) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (k < 1) fail(ErrorCode::InvalidArgument, "pca: k must be >= 1");
  if (n < 2) fail(ErrorCode::InvalidArgument, "pca: need at least 2 rows, got " + std::to_string(n));
  if (p < 1) fail(ErrorCode::InvalidArgument, "pca: need at least 1 column");
  if (!x.allFinite()) fail(ErrorCode::NonFinite, "pca: input contains NaN or Inf");

  ReducerModel model;
  model.kind = ReducerKind::Pca;
  model.standardize = standardize;
  model.n_components_requested = k;
  model.n_components_effective =
      static_cast<int>(std::min<Eigen::Index>({static_cast<Eigen::Index>(k), n - 1, p}));
  model.mean = x.colwise().mean().transpose();
  if (standardize) {
    const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
    model.scale = (centered.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt().transpose();
    model.scale = model.scale.cwiseMax(kScaleFloor);
  } else {
    model.scale = Eigen::VectorXd::Ones(p);
  }
  const Eigen::MatrixXd z = standardized(model, x);

  Eigen::BDCSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinV);
  const auto keff = static_cast<Eigen::Index>(model.n_components_effective);
  const Eigen::VectorXd& sigma = svd.singularValues();
  model.components = svd.matrixV().leftCols(keff).transpose();
  model.explained_variance.resize(keff);
  for (Eigen::Index i = 0; i < keff; ++i) {
    model.explained_variance[i] = sigma[i] * sigma[i] / static_cast<double>(n - 1);
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double a = std::abs(model.components(i, j));
      if (a > best) {
        best = a;
        arg = j;
      }
    }
    if (model.components(i, arg) < 0) model.components.row(i) *= -1.0;
  }
  return model;
}

Eigen::MatrixXd pca_transform(const ReducerModel& model, const Eigen::MatrixXd& x) {
  if (model.kind != ReducerKind::Pca) fail(ErrorCode::InvalidArgument, "external reducers cannot transform locally");
  return standardized(model, x) * model.components.transpose();
}

double reconstruction_mse(const ReducerModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd z = standardized(model, x);
  const Eigen::MatrixXd back = (z * model.components.transpose()) * model.components;
  return (z - back).squaredNorm() / static_cast<double>(z.size());
}

nlohmann::json reducer_to_json(const ReducerModel& model) {
  auto components = nlohmann::json::array();
  for (Eigen::Index i = 0; i < model.components.rows(); ++i) {
    components.push_back(to_vector(model.components.row(i).transpose()));
  }
  return {{"kind", model.kind == ReducerKind::Pca ? "pca" : "external"},
          {"n_components_requested", model.n_components_requested},
          {"n_components_effective", model.n_components_effective},
          {"standardize", model.standardize},
          {"mean", to_vector(model.mean)},
          {"scale", to_vector(model.scale)},
          {"components", components},
          {"explained_variance", to_vector(model.explained_variance)}};
}

ReducerModel reducer_from_json(const nlohmann::json& doc) {
  ReducerModel model;
  try {
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "pca") model.kind = ReducerKind::Pca;
    else if (kind == "external") model.kind = ReducerKind::External;
    else fail(ErrorCode::InvalidArgument, "unknown reducer kind '" + kind + "'");
    model.n_components_requested = doc.at("n_components_requested").get<int>();
    model.n_components_effective = doc.at("n_components_effective").get<int>();
    model.standardize = doc.at("standardize").get<bool>();
    model.mean = vector_from_json(doc, "mean");
    model.scale = vector_from_json(doc, "scale");
    model.explained_variance = vector_from_json(doc, "explained_variance");
    const auto& rows = doc.at("components");
    const auto p = model.mean.size();
    model.components.resize(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != p) fail(ErrorCode::InvalidArgument, "reducer component width mismatch");
      for (Eigen::Index j = 0; j < p; ++j) model.components(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(j)];
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed reducer model: ") + e.what());
  }
  if (model.scale.size() != model.mean.size() ||
      model.components.rows() != model.n_components_effective ||
      model.explained_variance.size() != model.n_components_effective) {
    fail(ErrorCode::InvalidArgument, "reducer model fields have inconsistent sizes");
  }
  return model;
}

ExternalReduction external_reduce(const AdapterHandle& handle, const Eigen::MatrixXd& x_train,
                                  const Eigen::MatrixXd& x_apply, int k, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "external reduce: k must be >= 1");
  if (x_train.cols() != x_apply.cols()) fail(ErrorCode::DimensionMismatch, "external reduce: train/apply widths differ");
  AdapterSession session(handle);
  if (!session.hello().has_cap("reduce")) {
    fail(ErrorCode::AdapterProtocol, "adapter '" + session.hello().name + "' does not advertise 'reduce'");
  }
  const auto reply = session.request({{"cmd", "reduce"},
                                      {"seed", seed},
                                      {"k", k},
                                      {"x_train", matrix_to_json(x_train)},
                                      {"x_apply", matrix_to_json(x_apply)}});
  if (!reply.contains("train") || !reply.contains("apply")) {
    fail(ErrorCode::AdapterMalformed, "reduce reply lacks 'train' or 'apply'");
  }
  ExternalReduction out{matrix_from_json(reply.at("train"), "reduce.train"),
                        matrix_from_json(reply.at("apply"), "reduce.apply")};
  if (out.train.rows() != x_train.rows() || out.apply.rows() != x_apply.rows()) {
    fail(ErrorCode::AdapterWrongLength, "reduce reply has " + std::to_string(out.train.rows()) + "/" +
                                            std::to_string(out.apply.rows()) + " rows, expected " +
                                            std::to_string(x_train.rows()) + "/" + std::to_string(x_apply.rows()));
  }
  const bool apply_empty = out.apply.rows() == 0;
  if ((!apply_empty && out.train.cols() != out.apply.cols()) || out.train.cols() > k || out.train.cols() < 1) {
    fail(ErrorCode::AdapterMalformed, "reduce reply widths are inconsistent or exceed k = " + std::to_string(k));
  }
  if (!out.train.allFinite() || !out.apply.allFinite()) {
    fail(ErrorCode::AdapterOutOfRange, "reduce reply contains non-finite values");
  }
  return out;
}

}  // namespace halodet
