#include <cstdlib>

#include "doctest.h"
#include "halodet/classifier.hpp"
#include "halodet/metrics.hpp"
#include "test_util.hpp"

using namespace halodet;
using testutil::error_code_of;

namespace {

AdapterHandle stub(const std::string& mode, double timeout = 20.0) {
  return AdapterHandle{{HALODET_STUB_ADAPTER, mode}, kAdapterProtocol, timeout, 0};
}

struct Blobs {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Blobs blobs(int n, int p, double sep, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b{Eigen::MatrixXd(n, p), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    b.y[i] = i % 2;
    for (int j = 0; j < p; ++j) b.x(i, j) = rng.normal() + (i % 2 ? sep : -sep);
  }
  return b;
}

double auc_of(const Eigen::VectorXd& scores, const Eigen::VectorXd& y) {
  std::vector<double> s(scores.data(), scores.data() + scores.size());
  std::vector<int> l;
  for (Eigen::Index i = 0; i < y.size(); ++i) l.push_back(static_cast<int>(y[i]));
  return roc_auc(s, l);
}

}  // namespace

TEST_CASE("classifier names") {
  for (auto k : {ClassifierKind::LogReg, ClassifierKind::Gbdt, ClassifierKind::Probe, ClassifierKind::External}) {
    CHECK(classifier_from_name(classifier_name(k)) == k);
  }
  CHECK(error_code_of([] { classifier_from_name("catboost"); }) == ErrorCode::ConfigError);
}

TEST_CASE("external classifier through the stub adapter") {
  const auto train = blobs(20, 3, 1.0, 1);
  Eigen::VectorXd y = train.y;
  y[0] = 1;
  y[2] = 1;
  const auto eval = blobs(7, 3, 1.0, 2);

  SUBCASE("base rate echo") {
    const auto p = external_fit_predict(stub("base-rate"), train.x, y, eval.x);
    CHECK(p == Eigen::VectorXd::Constant(7, y.mean()));
  }
  SUBCASE("separable blobs") {
    const auto test = blobs(60, 3, 1.5, 3);
    const auto p = external_fit_predict(stub("centroid"), blobs(60, 3, 1.5, 4).x, blobs(60, 3, 1.5, 4).y, test.x);
    CHECK(auc_of(p, test.y) >= 0.95);
  }
  SUBCASE("the column cap is checked before launching") {
    const AdapterHandle missing{{"/nonexistent/adapter"}, kAdapterProtocol, 5.0, 0};
    const Eigen::MatrixXd wide = Eigen::MatrixXd::Random(10, 501);
    Eigen::VectorXd wy(10);
    wy << 0, 1, 0, 1, 0, 1, 0, 1, 0, 1;
    CHECK(error_code_of([&] { external_fit_predict(missing, wide, wy, wide); }) == ErrorCode::FeatureCap);
    CHECK(error_code_of([&] { external_fit_predict(missing, train.x, y, eval.x); }) == ErrorCode::AdapterLaunch);
    const Eigen::MatrixXd at_cap = Eigen::MatrixXd::Random(10, 500);
    CHECK(external_fit_predict(stub("base-rate"), at_cap, wy, at_cap).size() == 10);
  }
  SUBCASE("each failure has its own code") {
    CHECK(error_code_of([&] { external_fit_predict(stub("wrong-length"), train.x, y, eval.x); }) ==
          ErrorCode::AdapterWrongLength);
    CHECK(error_code_of([&] { external_fit_predict(stub("out-of-range"), train.x, y, eval.x); }) ==
          ErrorCode::AdapterOutOfRange);
    CHECK(error_code_of([&] { external_fit_predict(stub("crash"), train.x, y, eval.x); }) == ErrorCode::AdapterCrash);
    CHECK(error_code_of([&] { external_fit_predict(stub("hang", 0.5), train.x, y, eval.x); }) ==
          ErrorCode::AdapterTimeout);
    CHECK(error_code_of([&] { external_fit_predict(stub("garbage"), train.x, y, eval.x); }) ==
          ErrorCode::AdapterMalformed);
    CHECK(error_code_of([&] { external_fit_predict(stub("reject"), train.x, y, eval.x); }) ==
          ErrorCode::AdapterRejected);
    CHECK(error_code_of([&] { external_fit_predict(stub("no-caps"), train.x, y, eval.x); }) ==
          ErrorCode::AdapterProtocol);
  }
  SUBCASE("the adapter sees a handshake then one request") {
    testutil::TempDir tmp;
    const auto log = (tmp / "log.txt").string();
    ::setenv("STUB_ADAPTER_LOG", log.c_str(), 1);
    external_fit_predict(stub("base-rate"), train.x, y, eval.x);
    ::unsetenv("STUB_ADAPTER_LOG");
    CHECK(testutil::read_text(log) == "hello\nfit_predict\n");
  }
}

TEST_CASE("adapter command lines") {
  CHECK(split_command_line("python -m tabpfn_adapter --device cpu") ==
        std::vector<std::string>{"python", "-m", "tabpfn_adapter", "--device", "cpu"});
  CHECK(split_command_line("  run 'two words' \"and three words\" ") ==
        std::vector<std::string>{"run", "two words", "and three words"});
  const auto h = adapter_from_command_line("a b", 12.0, 9);
  CHECK(h.command == std::vector<std::string>{"a", "b"});
  CHECK(h.timeout_seconds == 12.0);
  CHECK(h.seed == 9);
  const AdapterHandle zero{{HALODET_STUB_ADAPTER}, kAdapterProtocol, 0.0, 0};
  CHECK(error_code_of([&] { AdapterSession s(zero); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("tabular fits score in [0, 1] and survive JSON") {
  const auto train = blobs(80, 4, 0.8, 10);
  const auto val = blobs(30, 4, 0.8, 11);
  const auto test = blobs(50, 4, 0.8, 12);
  ClassifierSettings settings;
  settings.gbdt.n_rounds = 40;
  settings.adapter = stub("centroid");
  for (auto kind : {ClassifierKind::LogReg, ClassifierKind::Gbdt, ClassifierKind::External}) {
    CAPTURE(classifier_name(kind));
    const auto fit = fit_tabular(kind, settings, train.x, train.y, val.x, val.y);
    const auto scores = score_tabular(fit.model, test.x);
    CHECK(scores.size() == 50);
    CHECK(scores.minCoeff() >= 0.0);
    CHECK(scores.maxCoeff() <= 1.0);
    CHECK(auc_of(scores, test.y) > 0.8);
    const auto back = tabular_from_json(nlohmann::json::parse(tabular_to_json(fit.model).dump()));
    CHECK(score_tabular(back, test.x) == scores);
    const auto again = fit_tabular(kind, settings, train.x, train.y, val.x, val.y);
    CHECK(score_tabular(again.model, test.x) == scores);
  }
  SUBCASE("an empty validation split falls back to defaults") {
    const Eigen::MatrixXd none(0, 4);
    const Eigen::VectorXd no_y(0);
    const auto fit = fit_tabular(ClassifierKind::LogReg, settings, train.x, train.y, none, no_y);
    CHECK(std::get<LogRegModel>(fit.model).l2_lambda == settings.logreg.l2_lambda);
  }
  SUBCASE("external without an adapter") {
    settings.adapter.reset();
    CHECK_THROWS_AS(fit_tabular(ClassifierKind::External, settings, train.x, train.y, val.x, val.y), Error);
  }
}

TEST_CASE("probe fits through the classifier front end") {
  Rng rng(4);
  std::vector<TokenStates> train, val;
  Eigen::VectorXd ytr(30), yval(10);
  for (int i = 0; i < 40; ++i) {
    TokenStates h(3, 2);
    for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = rng.normal() + (i % 2 ? 1.0 : -1.0);
    if (i < 30) {
      train.push_back(h);
      ytr[i] = i % 2;
    } else {
      val.push_back(h);
      yval[i - 30] = i % 2;
    }
  }
  ClassifierSettings settings;
  settings.probe.step = 0.2;
  settings.probe.epochs = 50;
  const auto fit = fit_probe(settings, train, ytr, val, yval);
  const auto p = probe_predict(fit.model, val);
  CHECK(auc_of(p, yval) > 0.9);
}

TEST_CASE("labels must be binary where required") {
  const std::vector<std::uint8_t> ok = {0, 1, 1};
  CHECK(labels_to_vector(ok) == Eigen::Vector3d(0, 1, 1));
  const std::vector<std::uint8_t> unlabeled = {0, 255};
  CHECK(error_code_of([&] { labels_to_vector(unlabeled); }) == ErrorCode::InvalidArgument);
}
