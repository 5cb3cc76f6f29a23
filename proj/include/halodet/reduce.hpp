#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "halodet/adapter.hpp"
#include "json.hpp"

namespace halodet {

inline constexpr int kDefaultComponents = 30;
inline constexpr double kScaleFloor = 1e-12;

enum class ReducerKind { Pca, External };

// Standardization followed by projection onto the leading principal axes.
//
// components is k_eff x p with orthonormal rows ordered by decreasing
// singular value; each row is signed so that its largest-magnitude entry
// (lowest index on ties) is positive. explained_variance[i] is
// sigma_i^2 / (n - 1) of the centred (and scaled) training matrix.
struct ReducerModel {
  ReducerKind kind = ReducerKind::Pca;
  int n_components_requested = 0;
  int n_components_effective = 0;
  bool standardize = true;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;
  Eigen::MatrixXd components;
  Eigen::VectorXd explained_variance;
};

// k_eff = min(k, n - 1, p). Throws Error(InvalidArgument) for n < 2 or k < 1
// and Error(NonFinite) on NaN/Inf input.
ReducerModel pca_fit(const Eigen::MatrixXd& x, int k, bool standardize = true);

// ((x - mean) / scale) * components^T
Eigen::MatrixXd pca_transform(const ReducerModel& model, const Eigen::MatrixXd& x);

// Mean squared error, in standardized units, of projecting x onto the model's
// components and back.
double reconstruction_mse(const ReducerModel& model, const Eigen::MatrixXd& x);

nlohmann::json reducer_to_json(const ReducerModel& model);
ReducerModel reducer_from_json(const nlohmann::json& doc);

struct ExternalReduction {
  Eigen::MatrixXd train;
  Eigen::MatrixXd apply;
};

// Runs one "reduce" session on the adapter. The adapter's output is taken as
// is, after shape checks: same row counts as the inputs, equal widths, and
// width <= k.
ExternalReduction external_reduce(const AdapterHandle& handle, const Eigen::MatrixXd& x_train,
                                  const Eigen::MatrixXd& x_apply, int k, std::uint64_t seed);

}  // namespace halodet
