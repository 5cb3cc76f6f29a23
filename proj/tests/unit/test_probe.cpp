#include <cmath>

#include "doctest.h"
#include "halodet/probe.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace halodet;
using testutil::error_code_of;

namespace {

struct TokenData {
  std::vector<TokenStates> examples;
  Eigen::VectorXd y;
};

TokenData random_tokens(int n, int d, std::uint64_t seed, int max_t = 6) {
  Rng rng(seed);
  TokenData out;
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_t)));
    out.y[i] = i % 2;
    TokenStates h(t, d);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = rng.normal() + (i % 2 ? 0.4 : -0.4);
    out.examples.push_back(h);
  }
  return out;
}

// Only token 0 carries the label, and a marker dimension makes it findable.
TokenData first_token_signal(int n, std::uint64_t seed) {
  Rng rng(seed);
  TokenData out;
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    out.y[i] = i % 2;
    TokenStates h(5, 4);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = 0.3 * rng.normal();
    h(0, 0) += out.y[i] == 1 ? 2.0 : -2.0;
    h(0, 1) += 3.0;
    out.examples.push_back(h);
  }
  return out;
}

std::vector<double> flatten(const ProbeModel& m) {
  std::vector<double> v(m.query.data(), m.query.data() + m.query.size());
  v.insert(v.end(), m.out_weights.data(), m.out_weights.data() + m.out_weights.size());
  v.push_back(m.out_bias);
  return v;
}

ProbeModel unflatten(const std::vector<double>& v, Eigen::Index d) {
  ProbeModel m;
  m.query = Eigen::Map<const Eigen::VectorXd>(v.data(), d);
  m.out_weights = Eigen::Map<const Eigen::VectorXd>(v.data() + d, d);
  m.out_bias = v[static_cast<std::size_t>(2 * d)];
  return m;
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = random_tokens(12, 3, 40 + static_cast<std::uint64_t>(trial));
    ProbeModel m;
    m.query.resize(3);
    m.out_weights.resize(3);
    for (int k = 0; k < 3; ++k) {
      m.query[k] = rng.normal();
      m.out_weights[k] = rng.normal();
    }
    m.out_bias = rng.normal();
    const double l2 = 0.01 * trial;
    const auto g = probe_gradient(m, data.examples, data.y, l2);
    ProbeModel gm{g.query, g.out_weights, g.out_bias};
    const auto numeric = oracle::central_difference(
        [&](const std::vector<double>& v) { return probe_loss(unflatten(v, 3), data.examples, data.y, l2); }, flatten(m));
    CHECK(oracle::relative_error(flatten(gm), numeric) < 1e-4);
  }
}

TEST_CASE("with the query frozen at zero the probe is logistic regression on mean pooling") {
  const auto data = random_tokens(30, 4, 9);
  ProbeParams params;
  params.epochs = 50;
  params.step = 0.1;
  params.l2 = 1e-3;
  params.freeze_query = true;
  const auto fit = probe_fit(data.examples, data.y, params);
  REQUIRE(fit.train_loss.size() == 51);
  CHECK(fit.model.query == Eigen::VectorXd::Zero(4));

  // Independent gradient descent on mean-pooled rows.
  const auto n = static_cast<Eigen::Index>(data.examples.size());
  std::vector<std::vector<double>> pooled;
  for (const auto& h : data.examples) {
    std::vector<double> row(4, 0.0);
    for (Eigen::Index t = 0; t < h.rows(); ++t)
      for (int k = 0; k < 4; ++k) row[static_cast<std::size_t>(k)] += h(t, k) / static_cast<double>(h.rows());
    pooled.push_back(row);
  }
  std::vector<double> w(4, 0.0);
  const double rate = data.y.mean();
  double b = std::log(rate / (1.0 - rate));
  auto loss_and_grad = [&](std::vector<double>& gw, double& gb) {
    double loss = 0.0;
    gw.assign(4, 0.0);
    gb = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double z = b;
      for (int k = 0; k < 4; ++k) z += w[static_cast<std::size_t>(k)] * pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      const double p = 1.0 / (1.0 + std::exp(-z));
      loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - data.y[i] * z;
      for (int k = 0; k < 4; ++k) gw[static_cast<std::size_t>(k)] += (p - data.y[i]) * pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      gb += p - data.y[i];
    }
    double norm = 0.0;
    for (int k = 0; k < 4; ++k) {
      gw[static_cast<std::size_t>(k)] = gw[static_cast<std::size_t>(k)] / static_cast<double>(n) + params.l2 * w[static_cast<std::size_t>(k)];
      norm += w[static_cast<std::size_t>(k)] * w[static_cast<std::size_t>(k)];
    }
    gb /= static_cast<double>(n);
    return loss / static_cast<double>(n) + 0.5 * params.l2 * norm;
  };
  std::vector<double> gw;
  double gb = 0.0;
  for (int step = 0; step <= 50; ++step) {
    const double loss = loss_and_grad(gw, gb);
    CHECK(std::abs(loss - fit.train_loss[static_cast<std::size_t>(step)]) < 1e-8);
    for (int k = 0; k < 4; ++k) w[static_cast<std::size_t>(k)] -= params.step * gw[static_cast<std::size_t>(k)];
    b -= params.step * gb;
  }

  Eigen::MatrixXd pooled_matrix(n, 4);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int k = 0; k < 4; ++k) pooled_matrix(i, k) = pooled[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  const auto trace = pooled_logistic_gd(pooled_matrix, data.y, params);
  REQUIRE(trace.loss.size() == fit.train_loss.size());
  for (std::size_t s = 0; s < trace.loss.size(); ++s) CHECK(std::abs(trace.loss[s] - fit.train_loss[s]) < 1e-8);
  CHECK((trace.weights - fit.model.out_weights).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("attention concentrates on the token that carries the signal") {
  const auto data = first_token_signal(80, 3);
  ProbeParams params;
  params.epochs = 400;
  params.step = 0.5;
  params.l2 = 1e-4;
  const auto fit = probe_fit(data.examples, data.y, params);
  CHECK(fit.train_loss.back() < fit.train_loss.front());
  double first = 0.0, rest = 0.0;
  for (const auto& h : data.examples) {
    const auto a = probe_attention(fit.model, h);
    first += a[0];
    rest += (a.sum() - a[0]) / 4.0;
  }
  CHECK(first > rest);
}

TEST_CASE("attention weights") {
  Rng rng(2);
  ProbeModel m;
  m.query = Eigen::VectorXd::Random(3) * 5.0;
  m.out_weights = Eigen::VectorXd::Ones(3);

  SUBCASE("a single token gets all the weight") {
    TokenStates one(1, 3);
    one << 0.5, -2.0, 9.0;
    CHECK(probe_attention(m, one) == Eigen::VectorXd::Ones(1));
  }
  SUBCASE("shifting every logit by a constant changes nothing") {
    TokenStates h(4, 3);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = rng.normal();
    // Adding c * q / |q|^2 * sqrt(d) to every token adds c to every logit.
    const double c = 3.0;
    TokenStates shifted = h.rowwise() + (c * std::sqrt(3.0) / m.query.squaredNorm() * m.query).transpose();
    ProbeModel pure = m;
    const auto a = probe_attention(pure, h), b = probe_attention(pure, shifted);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("weights match an explicit softmax") {
    TokenStates h(6, 3);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = rng.normal(0.0, 3.0);
    const auto a = probe_attention(m, h);
    std::vector<double> logits;
    double top = -1e300;
    for (int t = 0; t < 6; ++t) {
      logits.push_back(h.row(t).dot(m.query) / std::sqrt(3.0));
      top = std::max(top, logits.back());
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    for (int t = 0; t < 6; ++t) CHECK(std::abs(a[t] - std::exp(logits[static_cast<std::size_t>(t)] - top) / z) < 1e-12);
    CHECK(a.sum() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("prediction equals a loop") {
  const auto data = random_tokens(10, 3, 77);
  ProbeModel m;
  m.query = Eigen::Vector3d(0.3, -1.0, 0.5);
  m.out_weights = Eigen::Vector3d(1.0, 0.2, -0.7);
  m.out_bias = 0.1;
  const auto p = probe_predict(m, data.examples);
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& h = data.examples[i];
    const auto a = probe_attention(m, h);
    Eigen::Vector3d pooled = Eigen::Vector3d::Zero();
    for (Eigen::Index t = 0; t < h.rows(); ++t) pooled += a[t] * h.row(t).transpose();
    const double z = pooled.dot(m.out_weights) + m.out_bias;
    CHECK(std::abs(p[static_cast<Eigen::Index>(i)] - 1.0 / (1.0 + std::exp(-z))) < 1e-12);
  }
}

TEST_CASE("training is deterministic and validation keeps the best epoch") {
  const auto train = random_tokens(40, 3, 11);
  const auto val = random_tokens(20, 3, 12);
  ProbeParams params;
  params.epochs = 60;
  params.step = 0.2;
  const auto a = probe_fit(train.examples, train.y, params);
  const auto b = probe_fit(train.examples, train.y, params);
  CHECK(probe_to_json(a.model) == probe_to_json(b.model));
  CHECK(a.epochs_run == 60);

  const auto v = probe_fit(train.examples, train.y, params, ProbeValidation{val.examples, val.y});
  REQUIRE_FALSE(v.validation_loss.empty());
  const double best = *std::min_element(v.validation_loss.begin(), v.validation_loss.end());
  CHECK(probe_loss(v.model, val.examples, val.y, 0.0) == doctest::Approx(best).epsilon(1e-9));

  const auto back = probe_from_json(nlohmann::json::parse(probe_to_json(a.model).dump()));
  CHECK(probe_predict(back, val.examples) == probe_predict(a.model, val.examples));
}

TEST_CASE("probe guards") {
  auto data = random_tokens(10, 3, 1);
  CHECK(error_code_of([&] { probe_fit(data.examples, Eigen::VectorXd::Zero(10)); }) == ErrorCode::DegenerateLabels);
  data.examples[3] = TokenStates(0, 3);
  CHECK_THROWS_AS(probe_fit(data.examples, data.y), Error);
}
