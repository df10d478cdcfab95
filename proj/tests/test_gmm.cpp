// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "skald/gmm.hpp"
#include "skald/parallel.hpp"

using namespace skald;

namespace {

DMatrix gaussian_blob(Rng &rng, int n, int d, const std::vector<double> &mean,
                      double stddev) {
  DMatrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      x(i, j) = rng.normal(mean[size_t(j)], stddev);
  return x;
}

DMatrix vstack(const DMatrix &a, const DMatrix &b) {
  DMatrix out(a.rows + b.rows, a.cols);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
  return out;
}

} // namespace

TEST_CASE("fit_gmm: single component closed form") {
  Rng rng(100);
  DMatrix x = gaussian_blob(rng, 300, 3, {1.0, -2.0, 0.5}, 1.5);
  GmmTrainConfig cfg;
  cfg.components = 1;
  GmmFitResult r = fit_gmm(x, cfg);

  CHECK(r.model.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (int j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (int i = 0; i < 300; ++i)
      mean += x(i, j);
    mean /= 300;
    double var = 0.0;
    for (int i = 0; i < 300; ++i)
      var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= 300;
    CHECK(r.model.means(0, j) == doctest::Approx(mean).epsilon(1e-9));
    CHECK(r.model.variances(0, j) == doctest::Approx(var).epsilon(1e-9));
  }
}

TEST_CASE("fit_gmm: recovers two well-separated clusters") {
  Rng rng(2024);
  DMatrix a = gaussian_blob(rng, 1000, 2, {5.0, 5.0}, 1.0);
  DMatrix b = gaussian_blob(rng, 1000, 2, {-5.0, -5.0}, 1.0);
  DMatrix x = vstack(a, b);

  GmmTrainConfig cfg;
  cfg.components = 2;
  cfg.seed = 7;
  GmmFitResult r = fit_gmm(x, cfg);

  // Identify components by sign of the first mean coordinate.
  int pos = r.model.means(0, 0) > 0 ? 0 : 1;
  int neg = 1 - pos;
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(r.model.means(pos, j) - 5.0) < 0.1);
    CHECK(std::abs(r.model.means(neg, j) + 5.0) < 0.1);
  }
  CHECK(r.model.weights[size_t(pos)] == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("fit_gmm: log-likelihood is non-decreasing per iteration") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed * 977);
    DMatrix x(500, 8);
    for (auto &v : x.v)
      v = rng.normal(0.0, 1.0) + (rng.uniform() < 0.5 ? 2.0 : -2.0);
    GmmTrainConfig cfg;
    cfg.components = 4;
    cfg.seed = seed;
    GmmFitResult r = fit_gmm(x, cfg);
    REQUIRE(r.iter_log_likelihood.size() >= 2);
    for (size_t i = 1; i < r.iter_log_likelihood.size(); ++i)
      CHECK(r.iter_log_likelihood[i] >= r.iter_log_likelihood[i - 1] - 1e-9);
  }
}

TEST_CASE("fit_gmm: invariant to adjacent duplication of the data") {
  Rng rng(404);
  DMatrix x(150, 3);
  for (auto &v : x.v)
    v = rng.uniform(-2.0, 2.0);
  DMatrix dup(300, 3);
  for (int i = 0; i < 150; ++i)
    for (int j = 0; j < 3; ++j)
      dup(2 * i, j) = dup(2 * i + 1, j) = x(i, j);

  GmmTrainConfig cfg;
  cfg.components = 3;
  cfg.seed = 11;
  GmmModel m1 = fit_gmm(x, cfg).model;
  GmmModel m2 = fit_gmm(dup, cfg).model;

  for (int c = 0; c < 3; ++c) {
    CHECK(m1.weights[size_t(c)] == doctest::Approx(m2.weights[size_t(c)]).epsilon(1e-9));
    for (int j = 0; j < 3; ++j) {
      CHECK(m1.means(c, j) == doctest::Approx(m2.means(c, j)).epsilon(1e-9));
      CHECK(m1.variances(c, j) == doctest::Approx(m2.variances(c, j)).epsilon(1e-9));
    }
  }
}

TEST_CASE("fit_gmm: determinism and thread independence") {
  Rng rng(5150);
  DMatrix x(4200, 5);
  for (auto &v : x.v)
    v = rng.normal(0.0, 2.0);
  GmmTrainConfig cfg;
  cfg.components = 4;
  cfg.seed = 3;

  GmmModel a = fit_gmm(x, cfg).model;
  set_max_jobs(1);
  GmmModel b = fit_gmm(x, cfg).model;
  set_max_jobs(0);
  CHECK(a.weights == b.weights);
  CHECK(a.means.v == b.means.v);
  CHECK(a.variances.v == b.variances.v);
}

TEST_CASE("fit_gmm: input validation") {
  DMatrix x(3, 2, 1.0);
  GmmTrainConfig cfg;
  cfg.components = 4;
  CHECK_THROWS_AS(fit_gmm(x, cfg), DataError);
  cfg.components = 0;
  CHECK_THROWS_AS(fit_gmm(x, cfg), ConfigError);
  DMatrix bad(8, 2, 0.0);
  bad(1, 1) = INFINITY;
  cfg.components = 2;
  CHECK_THROWS_AS(fit_gmm(bad, cfg), NumericError);
}

TEST_CASE("log_likelihood: unit Gaussian at origin") {
  GmmModel m;
  m.weights = {1.0};
  m.means = DMatrix(1, 1, 0.0);
  m.variances = DMatrix(1, 1, 1.0);
  std::vector<double> x = {0.0};
  CHECK(log_likelihood(m, x) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("log_likelihood: duplicated component equals single component") {
  GmmModel one;
  one.weights = {1.0};
  one.means = DMatrix(1, 2);
  one.means(0, 0) = 0.3;
  one.means(0, 1) = -1.1;
  one.variances = DMatrix(1, 2, 0.7);

  GmmModel two;
  two.weights = {0.5, 0.5};
  two.means = DMatrix(2, 2);
  two.variances = DMatrix(2, 2, 0.7);
  for (int c = 0; c < 2; ++c) {
    two.means(c, 0) = 0.3;
    two.means(c, 1) = -1.1;
  }

  std::vector<double> x = {0.9, 0.4};
  CHECK(log_likelihood(two, x) == doctest::Approx(log_likelihood(one, x)).epsilon(1e-12));
}

TEST_CASE("log_likelihood: matches linear-domain summation oracle") {
  Rng rng(314);
  GmmModel m;
  m.weights = {0.2, 0.5, 0.3};
  m.means = DMatrix(3, 4);
  m.variances = DMatrix(3, 4);
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 4; ++j) {
      m.means(c, j) = rng.uniform(-1.0, 1.0);
      m.variances(c, j) = rng.uniform(0.5, 2.0);
    }

  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> x(4);
    for (auto &v : x)
      v = rng.uniform(-2.0, 2.0);
    double direct = 0.0;
    for (int c = 0; c < 3; ++c) {
      double dens = 1.0;
      for (int j = 0; j < 4; ++j) {
        const double diff = x[size_t(j)] - m.means(c, j);
        dens *= std::exp(-0.5 * diff * diff / m.variances(c, j)) /
                std::sqrt(2.0 * M_PI * m.variances(c, j));
      }
      direct += m.weights[size_t(c)] * dens;
    }
    CHECK(log_likelihood(m, x) == doctest::Approx(std::log(direct)).epsilon(1e-10));
  }

  std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(log_likelihood(m, wrong), DimensionError);
}

TEST_CASE("train_classifier: per-class models, separable synthetic data") {
  Rng rng(86);
  std::vector<std::pair<std::string, DMatrix>> bags;
  std::vector<std::vector<double>> centers = {{8.0, 0.0}, {-8.0, 0.0}, {0.0, 8.0}};
  for (int c = 0; c < 3; ++c)
    bags.emplace_back("class" + std::to_string(c),
                      gaussian_blob(rng, 400, 2, centers[size_t(c)], 1.0));

  GmmTrainConfig cfg;
  cfg.components = 2;
  GmmClassifier clf = train_classifier(bags, cfg);
  REQUIRE(clf.labels.size() == 3);
  REQUIRE(clf.models.size() == 3);

  // Every training clip (here: a slice of each bag) classifies correctly.
  for (int c = 0; c < 3; ++c) {
    DMatrix clip(50, 2);
    for (int i = 0; i < 50; ++i)
      for (int j = 0; j < 2; ++j)
        clip(i, j) = bags[size_t(c)].second(i, j);
    auto scores = classify_clip(clf, clip);
    CHECK(argmax_score(scores) == c);
  }
}

TEST_CASE("train_classifier: identical bags give identical models") {
  Rng rng(99);
  DMatrix bag = gaussian_blob(rng, 200, 3, {0.0, 1.0, 2.0}, 1.0);
  std::vector<std::pair<std::string, DMatrix>> bags = {{"a", bag}, {"b", bag}};
  GmmTrainConfig cfg;
  cfg.components = 2;
  GmmClassifier clf = train_classifier(bags, cfg);
  CHECK(clf.models[0].weights == clf.models[1].weights);
  CHECK(clf.models[0].means.v == clf.models[1].means.v);
  CHECK(clf.models[0].variances.v == clf.models[1].variances.v);
}

TEST_CASE("classify_clip: additivity and oracle") {
  Rng rng(123);
  std::vector<std::pair<std::string, DMatrix>> bags;
  bags.emplace_back("x", gaussian_blob(rng, 100, 2, {2.0, 0.0}, 1.0));
  bags.emplace_back("y", gaussian_blob(rng, 100, 2, {-2.0, 0.0}, 1.0));
  GmmTrainConfig cfg;
  cfg.components = 1;
  GmmClassifier clf = train_classifier(bags, cfg);

  DMatrix one(1, 2);
  one(0, 0) = 1.0;
  one(0, 1) = 0.3;
  auto s1 = classify_clip(clf, one);
  CHECK(s1[0] == doctest::Approx(log_likelihood(clf.models[0], one.row(0))).epsilon(1e-12));
  CHECK(s1[1] == doctest::Approx(log_likelihood(clf.models[1], one.row(0))).epsilon(1e-12));

  DMatrix clip(20, 2);
  for (auto &v : clip.v)
    v = rng.uniform(-3.0, 3.0);
  DMatrix doubled(40, 2);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 2; ++j) {
      doubled(i, j) = clip(i, j);
      doubled(20 + i, j) = clip(i, j);
    }
  auto sc = classify_clip(clf, clip);
  auto sd = classify_clip(clf, doubled);
  CHECK(sd[0] == doctest::Approx(2.0 * sc[0]).epsilon(1e-9));
  CHECK(sd[1] == doctest::Approx(2.0 * sc[1]).epsilon(1e-9));
  CHECK(argmax_score(sc) == argmax_score(sd));

  // Brute-force per-frame summation oracle.
  for (int c = 0; c < 2; ++c) {
    double acc = 0.0;
    for (int i = 0; i < 20; ++i)
      acc += log_likelihood(clf.models[size_t(c)], clip.row(i));
    CHECK(sc[size_t(c)] == doctest::Approx(acc).epsilon(1e-9));
  }

  DMatrix empty(0, 2);
  CHECK_THROWS_AS(classify_clip(clf, empty), DataError);
}

TEST_CASE("argmax_score: constant shift invariance and tie rule") {
  std::vector<double> s = {1.0, 5.0, 5.0, 2.0};
  CHECK(argmax_score(s) == 1); // lowest index wins ties
  std::vector<double> shifted = s;
  for (auto &v : shifted)
    v += 123.75;
  CHECK(argmax_score(shifted) == argmax_score(s));
}

TEST_CASE("gmm serialization round-trips bit-exactly") {
  namespace fs = std::filesystem;
  Rng rng(808);
  DMatrix x(260, 4);
  for (auto &v : x.v)
    v = rng.normal(0.0, 3.0);
  GmmTrainConfig cfg;
  cfg.components = 3;
  GmmModel m = fit_gmm(x, cfg).model;

  const fs::path dir = fs::temp_directory_path() / "skald_test_gmm";
  fs::create_directories(dir);
  const fs::path mp = dir / "model.skg";
  save_gmm(mp, m);
  GmmModel back = load_gmm(mp);
  CHECK(back.weights == m.weights);
  CHECK(back.means.v == m.means.v);
  CHECK(back.variances.v == m.variances.v);

  auto b1 = read_file(mp);
  save_gmm(mp, back);
  auto b2 = read_file(mp);
  CHECK(b1 == b2);

  GmmClassifier clf;
  clf.labels = {"beach", "bus"};
  clf.models = {m, m};
  const fs::path cp = dir / "clf.skc";
  save_classifier(cp, clf);
  GmmClassifier cback = load_classifier(cp);
  CHECK(cback.labels == clf.labels);
  CHECK(cback.models[1].means.v == m.means.v);
  fs::remove_all(dir);
}

TEST_CASE("responsibilities: posterior over components sums to one") {
  Rng rng(717);
  GmmModel m;
  m.weights = {0.25, 0.25, 0.5};
  m.means = DMatrix(3, 2);
  m.variances = DMatrix(3, 2, 1.0);
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 2; ++j)
      m.means(c, j) = rng.uniform(-2.0, 2.0);

  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x = {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    const double total = log_likelihood(m, x);
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      GmmModel comp;
      comp.weights = {1.0};
      comp.means = DMatrix(1, 2);
      comp.variances = DMatrix(1, 2);
      for (int j = 0; j < 2; ++j) {
        comp.means(0, j) = m.means(c, j);
        comp.variances(0, j) = m.variances(c, j);
      }
      sum += std::exp(std::log(m.weights[size_t(c)]) + log_likelihood(comp, x) - total);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}
