#include <cmath>
#include <limits>

#include "doctest.h"
#include "halodet/reduce.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace halodet;
using testutil::error_code_of;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index n, Eigen::Index p, Rng& rng) {
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double scale = rng.uniform(0.5, 4.0), shift = rng.uniform(-3.0, 3.0);
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = shift + scale * rng.normal();
  }
  return x;
}

oracle::Matrix rows_of(const Eigen::MatrixXd& x) {
  oracle::Matrix out(static_cast<std::size_t>(x.rows()), std::vector<double>(static_cast<std::size_t>(x.cols())));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = x(i, j);
  return out;
}

AdapterHandle stub(const std::string& mode, double timeout = 20.0) {
  return AdapterHandle{{HALODET_STUB_ADAPTER, mode}, kAdapterProtocol, timeout, 0};
}

}  // namespace

TEST_CASE("PCA agrees with an eigendecomposition of the covariance") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(5 + rng.below(40));
    const auto p = static_cast<Eigen::Index>(1 + rng.below(12));
    const bool scale = trial % 2 == 0;
    const auto x = random_matrix(n, p, rng);
    const auto model = pca_fit(x, 30, scale);
    const auto ref = oracle::symmetric_eigen(oracle::covariance(oracle::standardize(rows_of(x), scale)));
    const int keff = model.n_components_effective;
    REQUIRE(keff == static_cast<int>(std::min<Eigen::Index>({30, n - 1, p})));
    for (int i = 0; i < keff; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      CHECK(std::abs(model.explained_variance[i] - ref.values[ii]) <= 1e-8 * std::max(1.0, ref.values[0]));
      for (Eigen::Index j = 0; j < p; ++j) {
        CHECK(std::abs(model.components(i, j) - ref.vectors[ii][static_cast<std::size_t>(j)]) <= 1e-8);
      }
    }
  }
}

TEST_CASE("components are orthonormal and signed") {
  Rng rng(7);
  const auto x = random_matrix(50, 9, rng);
  const auto model = pca_fit(x, 6);
  const Eigen::MatrixXd gram = model.components * model.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-12);
  for (Eigen::Index i = 0; i < 6; ++i) {
    Eigen::Index arg = 0;
    model.components.row(i).cwiseAbs().maxCoeff(&arg);
    CHECK(model.components(i, arg) > 0);
  }
  for (Eigen::Index i = 1; i < 6; ++i) CHECK(model.explained_variance[i] <= model.explained_variance[i - 1]);
}

TEST_CASE("rank-one data has a single direction") {
  Eigen::VectorXd u(4), v(4);
  u << 1, 2, 3, 4;
  v << 3, -4, 0, 0;
  v /= 5.0;
  Eigen::MatrixXd x = u * v.transpose();
  const auto model = pca_fit(x, 3, false);
  CHECK(model.n_components_effective == 3);
  CHECK(std::abs(std::abs(model.components.row(0).dot(v.transpose())) - 1.0) < 1e-12);
  CHECK(model.components(0, 1) > 0);
  CHECK(model.explained_variance[1] < 1e-20);
  CHECK(reconstruction_mse(model, x) < 1e-24);
}

TEST_CASE("effective width") {
  Rng rng(3);
  CHECK(pca_fit(random_matrix(40, 60, rng), 30).n_components_effective == 30);
  CHECK(pca_fit(random_matrix(20, 60, rng), 30).n_components_effective == 19);
  CHECK(pca_fit(random_matrix(100, 8, rng), 30).n_components_effective == 8);
  CHECK(pca_transform(pca_fit(random_matrix(20, 60, rng), 30), random_matrix(3, 60, rng)).cols() == 19);
}

TEST_CASE("explained variance accounts for the total") {
  Rng rng(9);
  const auto x = random_matrix(30, 7, rng);
  for (bool scale : {true, false}) {
    const auto model = pca_fit(x, 7, scale);
    const auto z = oracle::standardize(rows_of(x), scale);
    const auto cov = oracle::covariance(z);
    double trace = 0.0;
    for (std::size_t j = 0; j < cov.size(); ++j) trace += cov[j][j];
    CHECK(model.explained_variance.sum() == doctest::Approx(trace).epsilon(1e-10));
    if (scale) CHECK(trace == doctest::Approx(7.0).epsilon(1e-12));
  }
}

TEST_CASE("reconstruction error falls as components are added") {
  Rng rng(13);
  const auto x = random_matrix(40, 10, rng);
  double previous = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 10; ++k) {
    const double mse = reconstruction_mse(pca_fit(x, k), x);
    CHECK(mse <= previous + 1e-12);
    previous = mse;
  }
  CHECK(previous < 1e-20);
}

TEST_CASE("transform") {
  Rng rng(21);
  const auto x = random_matrix(25, 6, rng);
  const auto model = pca_fit(x, 4);

  SUBCASE("training projections are centred") {
    const auto t = pca_transform(model, x);
    CHECK(t.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double var = t.col(i).squaredNorm() / 24.0;
      CHECK(var == doctest::Approx(model.explained_variance[i]).epsilon(1e-10));
    }
  }
  SUBCASE("the mean row maps to zero") {
    const Eigen::MatrixXd mean_row = model.mean.transpose();
    CHECK(pca_transform(model, mean_row).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("equals an explicit loop") {
    const auto fresh = random_matrix(5, 6, rng);
    const auto t = pca_transform(model, fresh);
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index c = 0; c < 4; ++c) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < 6; ++j) acc += (fresh(i, j) - model.mean[j]) / model.scale[j] * model.components(c, j);
        CHECK(t(i, c) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
  SUBCASE("width mismatch") {
    CHECK(error_code_of([&] { pca_transform(model, random_matrix(2, 5, rng)); }) == ErrorCode::DimensionMismatch);
  }
  SUBCASE("JSON round trip reproduces the transform exactly") {
    const auto back = reducer_from_json(nlohmann::json::parse(reducer_to_json(model).dump()));
    const auto fresh = random_matrix(7, 6, rng);
    CHECK(pca_transform(back, fresh) == pca_transform(model, fresh));
    auto broken = reducer_to_json(model);
    broken["components"].erase(0);
    CHECK_THROWS_AS(reducer_from_json(broken), Error);
  }
}

TEST_CASE("PCA is deterministic and guards its inputs") {
  Rng rng(4);
  const auto x = random_matrix(30, 5, rng);
  const auto a = pca_fit(x, 3), b = pca_fit(x, 3);
  CHECK(a.components == b.components);
  CHECK(a.explained_variance == b.explained_variance);

  CHECK(error_code_of([&] { pca_fit(x.topRows(1), 3); }) == ErrorCode::InvalidArgument);
  CHECK(error_code_of([&] { pca_fit(x, 0); }) == ErrorCode::InvalidArgument);
  auto bad = x;
  bad(2, 2) = std::nan("");
  CHECK(error_code_of([&] { pca_fit(bad, 3); }) == ErrorCode::NonFinite);

  SUBCASE("constant columns are floored, not divided by zero") {
    auto flat = x;
    flat.col(1).setConstant(2.5);
    const auto m = pca_fit(flat, 4);
    CHECK(m.scale[1] == kScaleFloor);
    CHECK(pca_transform(m, flat).allFinite());
  }
}

TEST_CASE("external reduction through the adapter") {
  Rng rng(8);
  const auto xtr = random_matrix(6, 5, rng);
  const auto xap = random_matrix(3, 5, rng);

  SUBCASE("echo") {
    const auto out = external_reduce(stub("base-rate"), xtr, xap, 2, 0);
    CHECK(out.train == xtr.leftCols(2));
    CHECK(out.apply == xap.leftCols(2));
  }
  SUBCASE("wrong row count") {
    CHECK(error_code_of([&] { external_reduce(stub("wrong-rows"), xtr, xap, 2, 0); }) == ErrorCode::AdapterWrongLength);
  }
  SUBCASE("crash") {
    CHECK(error_code_of([&] { external_reduce(stub("crash"), xtr, xap, 2, 0); }) == ErrorCode::AdapterCrash);
  }
  SUBCASE("crash before handshake") {
    CHECK(error_code_of([&] { external_reduce(stub("crash-early"), xtr, xap, 2, 0); }) == ErrorCode::AdapterCrash);
  }
  SUBCASE("timeout") {
    CHECK(error_code_of([&] { external_reduce(stub("hang", 0.5), xtr, xap, 2, 0); }) == ErrorCode::AdapterTimeout);
  }
  SUBCASE("garbage") {
    CHECK(error_code_of([&] { external_reduce(stub("garbage"), xtr, xap, 2, 0); }) == ErrorCode::AdapterMalformed);
  }
  SUBCASE("missing capability") {
    CHECK(error_code_of([&] { external_reduce(stub("no-caps"), xtr, xap, 2, 0); }) == ErrorCode::AdapterProtocol);
  }
  SUBCASE("rejection") {
    CHECK(error_code_of([&] { external_reduce(stub("reject"), xtr, xap, 2, 0); }) == ErrorCode::AdapterRejected);
  }
  SUBCASE("missing executable") {
    const AdapterHandle h{{"/nonexistent/adapter"}, kAdapterProtocol, 5.0, 0};
    CHECK(error_code_of([&] { external_reduce(h, xtr, xap, 2, 0); }) == ErrorCode::AdapterLaunch);
  }
}
