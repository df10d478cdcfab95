// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <vector>

#include "skald/ivector.hpp"

using namespace skald;

namespace {

GmmModel make_ubm(Rng &rng, int k, int d, double spread) {
  GmmModel ubm;
  ubm.weights.assign(size_t(k), 1.0 / k);
  ubm.means = DMatrix(k, d);
  ubm.variances = DMatrix(k, d, 1.0);
  for (auto &v : ubm.means.v)
    v = rng.uniform(-spread, spread);
  return ubm;
}

DMatrix random_t(Rng &rng, int kd, int r, double scale) {
  DMatrix t(kd, r);
  for (auto &v : t.v)
    v = scale * rng.normal();
  return t;
}

/// Frames drawn from the shifted mixture M = m + T y for a given y.
DMatrix sample_clip(Rng &rng, const GmmModel &ubm, const DMatrix &t,
                    const std::vector<double> &y, int frames) {
  const int k = ubm.components(), d = ubm.dim(), r = t.cols;
  DMatrix x(frames, d);
  for (int i = 0; i < frames; ++i) {
    const int comp = rng.uniform_int(k);
    for (int j = 0; j < d; ++j) {
      double shift = 0.0;
      for (int q = 0; q < r; ++q)
        shift += t(comp * d + j, q) * y[size_t(q)];
      x(i, j) = rng.normal(ubm.means(comp, j) + shift,
                           std::sqrt(ubm.variances(comp, j)));
    }
  }
  return x;
}

double cosine(const std::vector<double> &a, const std::vector<double> &b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Largest principal angle (degrees) between the column spans of A and B.
double max_principal_angle_deg(const DMatrix &a, const DMatrix &b) {
  auto to_eigen = [](const DMatrix &m) {
    Eigen::MatrixXd e(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j)
        e(i, j) = m(i, j);
    return e;
  };
  Eigen::MatrixXd ea = to_eigen(a), eb = to_eigen(b);
  Eigen::HouseholderQR<Eigen::MatrixXd> qra(ea), qrb(eb);
  Eigen::MatrixXd qa = qra.householderQ() * Eigen::MatrixXd::Identity(ea.rows(), ea.cols());
  Eigen::MatrixXd qb = qrb.householderQ() * Eigen::MatrixXd::Identity(eb.rows(), eb.cols());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
  const double smin = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(smin) * 180.0 / M_PI;
}

} // namespace

TEST_CASE("bw_stats: single component reduces to totals") {
  Rng rng(1);
  GmmModel ubm = make_ubm(rng, 1, 3, 0.5);
  DMatrix x(40, 3);
  for (auto &v : x.v)
    v = rng.uniform(-2.0, 2.0);

  BwStats s = bw_stats(ubm, x);
  CHECK(s.n[0] == doctest::Approx(40.0).epsilon(1e-12));
  for (int j = 0; j < 3; ++j) {
    double sum = 0.0;
    for (int i = 0; i < 40; ++i)
      sum += x(i, j) - ubm.means(0, j);
    CHECK(s.f(0, j) == doctest::Approx(sum).epsilon(1e-10));
  }
}

TEST_CASE("bw_stats: far-separated components take their own frames") {
  GmmModel ubm;
  ubm.weights = {0.5, 0.5};
  ubm.means = DMatrix(2, 2);
  ubm.means(0, 0) = ubm.means(0, 1) = 10.0;
  ubm.means(1, 0) = ubm.means(1, 1) = -10.0;
  ubm.variances = DMatrix(2, 2, 1.0);

  DMatrix x(30, 2);
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 2; ++j)
      x(i, j) = i < 18 ? 10.0 : -10.0;

  BwStats s = bw_stats(ubm, x);
  CHECK(s.n[0] == doctest::Approx(18.0).epsilon(1e-9));
  CHECK(s.n[1] == doctest::Approx(12.0).epsilon(1e-9));
  CHECK(s.n[0] + s.n[1] == doctest::Approx(30.0).epsilon(1e-6));
}

TEST_CASE("bw_stats: soft counts sum to the frame count") {
  Rng rng(17);
  GmmModel ubm = make_ubm(rng, 6, 4, 2.0);
  DMatrix x(123, 4);
  for (auto &v : x.v)
    v = rng.normal(0.0, 2.0);
  BwStats s = bw_stats(ubm, x);
  double total = 0.0;
  for (double v : s.n)
    total += v;
  CHECK(total == doctest::Approx(123.0).epsilon(1e-6));

  DMatrix empty(0, 4);
  CHECK_THROWS_AS(bw_stats(ubm, empty), DataError);
  DMatrix wrong(5, 3, 0.0);
  CHECK_THROWS_AS(bw_stats(ubm, wrong), DimensionError);
}

TEST_CASE("extract_ivector: zero T and zero stats give the prior mean") {
  Rng rng(5);
  GmmModel ubm = make_ubm(rng, 4, 3, 1.0);
  IVectorModel model;
  model.ubm = ubm;
  model.m = make_supervector(ubm);
  model.t = DMatrix(12, 2); // zeros

  BwStats s;
  s.n.assign(4, 5.0);
  s.f = DMatrix(4, 3);
  for (auto &v : s.f.v)
    v = rng.uniform(-1.0, 1.0);
  auto w = extract_ivector(model, s);
  CHECK(w == std::vector<double>(2, 0.0));

  model.t = random_t(rng, 12, 2, 0.5);
  BwStats zero;
  zero.n.assign(4, 0.0);
  zero.f = DMatrix(4, 3);
  auto w2 = extract_ivector(model, zero);
  for (double v : w2)
    CHECK(v == 0.0);
}

TEST_CASE("extract_ivector: linear in the first-order stats for fixed n") {
  Rng rng(23);
  GmmModel ubm = make_ubm(rng, 3, 4, 1.0);
  IVectorModel model;
  model.ubm = ubm;
  model.m = make_supervector(ubm);
  model.t = random_t(rng, 12, 3, 0.6);

  BwStats s1, s2, sum;
  s1.n = s2.n = sum.n = {4.0, 7.0, 2.0};
  s1.f = DMatrix(3, 4);
  s2.f = DMatrix(3, 4);
  sum.f = DMatrix(3, 4);
  for (size_t i = 0; i < s1.f.v.size(); ++i) {
    s1.f.v[i] = rng.uniform(-2.0, 2.0);
    s2.f.v[i] = rng.uniform(-2.0, 2.0);
    sum.f.v[i] = s1.f.v[i] + s2.f.v[i];
  }
  auto w1 = extract_ivector(model, s1);
  auto w2 = extract_ivector(model, s2);
  auto ws = extract_ivector(model, sum);
  for (size_t i = 0; i < ws.size(); ++i)
    CHECK(ws[i] == doctest::Approx(w1[i] + w2[i]).epsilon(1e-9));
}

TEST_CASE("ivector generative recovery: known y, true T") {
  // Data really drawn from M = m + T y; the posterior mean must point
  // along the generating y once a clip provides enough evidence.
  Rng rng(4242);
  const int k = 8, d = 6, r = 4;
  GmmModel ubm = make_ubm(rng, k, d, 5.0);
  DMatrix t_true = random_t(rng, k * d, r, 1.0);

  IVectorModel model;
  model.ubm = ubm;
  model.m = make_supervector(ubm);
  model.t = t_true;

  for (int clip = 0; clip < 20; ++clip) {
    std::vector<double> y(r);
    for (auto &v : y)
      v = rng.normal();
    DMatrix x = sample_clip(rng, ubm, t_true, y, 2000);
    auto w = extract_ivector(model, bw_stats(ubm, x));
    CHECK(cosine(w, y) > 0.9);
  }
}

TEST_CASE("train_t_matrix: subspace recovery and monotone objective") {
  Rng rng(31415);
  const int k = 8, d = 6, r = 4;
  GmmModel ubm = make_ubm(rng, k, d, 5.0);
  DMatrix t_true = random_t(rng, k * d, r, 1.0);

  std::vector<BwStats> stats;
  for (int clip = 0; clip < 200; ++clip) {
    std::vector<double> y(r);
    for (auto &v : y)
      v = rng.normal();
    DMatrix x = sample_clip(rng, ubm, t_true, y, 500);
    stats.push_back(bw_stats(ubm, x));
  }

  TMatrixConfig cfg;
  cfg.rank = r;
  cfg.iters = 10;
  cfg.seed = 99;
  TMatrixResult res = train_t_matrix(stats, ubm, cfg);

  REQUIRE(res.objective.size() == 10);
  for (size_t i = 1; i < res.objective.size(); ++i)
    CHECK(res.objective[i] >= res.objective[i - 1] -
                                  1e-6 * std::abs(res.objective[i - 1]));

  CHECK(max_principal_angle_deg(res.t, t_true) < 15.0);
}

TEST_CASE("train_t_matrix: determinism and degenerate stats") {
  Rng rng(77);
  const int k = 3, d = 2, r = 2;
  GmmModel ubm = make_ubm(rng, k, d, 2.0);
  std::vector<BwStats> stats;
  for (int i = 0; i < 6; ++i) {
    BwStats s;
    s.n.assign(size_t(k), 3.0);
    s.f = DMatrix(k, d);
    for (auto &v : s.f.v)
      v = rng.uniform(-1.0, 1.0);
    stats.push_back(s);
  }
  TMatrixConfig cfg;
  cfg.rank = r;
  cfg.iters = 3;
  auto a = train_t_matrix(stats, ubm, cfg);
  auto b = train_t_matrix(stats, ubm, cfg);
  CHECK(a.t.v == b.t.v);
  CHECK(a.objective == b.objective);

  // All-zero evidence: the M step has nothing to update, T keeps its init.
  std::vector<BwStats> zeros;
  for (int i = 0; i < 2; ++i) {
    BwStats s;
    s.n.assign(size_t(k), 0.0);
    s.f = DMatrix(k, d);
    zeros.push_back(s);
  }
  cfg.iters = 1;
  auto z = train_t_matrix(zeros, ubm, cfg);
  Rng init_rng(cfg.seed);
  for (double v : z.t.v)
    CHECK(v == cfg.init_scale * init_rng.normal());

  cfg.rank = k * d + 1;
  CHECK_THROWS_AS(train_t_matrix(stats, ubm, cfg), ConfigError);
  cfg.rank = 2;
  std::vector<BwStats> one(1, stats[0]);
  CHECK_THROWS_AS(train_t_matrix(one, ubm, cfg), DataError);
}

TEST_CASE("fit_lda: 1-D two classes") {
  DMatrix x(8, 1);
  std::vector<int> ids;
  for (int i = 0; i < 8; ++i) {
    x(i, 0) = (i < 4 ? 1.0 : -1.0) + 0.01 * i;
    ids.push_back(i < 4 ? 0 : 1);
  }
  Lda lda = fit_lda(x, ids, 2);
  REQUIRE(lda.out_dim() == 1);
  CHECK(std::abs(lda.projection(0, 0)) > 0.0);
}

TEST_CASE("fit_lda: recovers the separating axes") {
  Rng rng(606);
  const int n_per = 500, dim = 10;
  DMatrix x(3 * n_per, dim);
  std::vector<int> ids(3 * n_per, 0);
  // Classes separated along axes 0 and 1 only.
  const double centers[3][2] = {{6.0, 0.0}, {-6.0, 0.0}, {0.0, 6.0}};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n_per; ++i) {
      const int row = c * n_per + i;
      ids[size_t(row)] = c;
      for (int j = 0; j < dim; ++j)
        x(row, j) = rng.normal() + (j < 2 ? centers[c][j] : 0.0);
    }

  Lda lda = fit_lda(x, ids, 3);
  REQUIRE(lda.out_dim() == 2);

  DMatrix axes(dim, 2);
  axes(0, 0) = 1.0;
  axes(1, 1) = 1.0;
  DMatrix dirs(dim, 2);
  for (int p = 0; p < 2; ++p)
    for (int j = 0; j < dim; ++j)
      dirs(j, p) = lda.projection(p, j);
  CHECK(max_principal_angle_deg(dirs, axes) < 10.0);
}

TEST_CASE("fit_lda: 15 classes cap the output dimension at 14") {
  Rng rng(15);
  DMatrix x(300, 20);
  std::vector<int> ids(300);
  for (int i = 0; i < 300; ++i) {
    ids[size_t(i)] = i % 15;
    for (int j = 0; j < 20; ++j)
      x(i, j) = rng.normal(double(ids[size_t(i)]), 1.0);
  }
  Lda lda = fit_lda(x, ids, 15);
  CHECK(lda.out_dim() == 14);

  CHECK_THROWS_AS(fit_lda(x, ids, 1), DataError);
}

TEST_CASE("ivector_classify: cosine identities and end-to-end accuracy") {
  Rng rng(2718);
  const int k = 8, d = 6, r = 4;
  GmmModel ubm = make_ubm(rng, k, d, 5.0);
  DMatrix t_true = random_t(rng, k * d, r, 1.0);

  // Three classes with distinct y-space centers.
  const double y_centers[3][4] = {
      {3.0, 0.0, 0.0, 0.0}, {0.0, 3.0, 0.0, 0.0}, {0.0, 0.0, 3.0, 0.0}};
  const int clips_per_class = 20;

  std::vector<DMatrix> clips;
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < clips_per_class; ++i) {
      std::vector<double> y(r);
      for (int q = 0; q < r; ++q)
        y[size_t(q)] = y_centers[c][q] + 0.3 * rng.normal();
      clips.push_back(sample_clip(rng, ubm, t_true, y, 400));
      labels.push_back(c);
    }

  IVectorModel model;
  model.ubm = ubm;
  model.m = make_supervector(ubm);
  model.t = t_true;

  DMatrix ivecs(int(clips.size()), r);
  for (size_t i = 0; i < clips.size(); ++i) {
    auto w = extract_ivector(model, bw_stats(ubm, clips[i]));
    std::copy(w.begin(), w.end(), ivecs.row(int(i)).begin());
  }
  model.lda = fit_lda(ivecs, labels, 3);
  const DMatrix projected = lda_project(model.lda, ivecs);

  model.labels = {"a", "b", "c"};
  model.class_means = DMatrix(3, projected.cols);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < projected.rows; ++i) {
    for (int j = 0; j < projected.cols; ++j)
      model.class_means(labels[size_t(i)], j) += projected(i, j);
    ++counts[size_t(labels[size_t(i)])];
  }
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < projected.cols; ++j)
      model.class_means(c, j) /= counts[size_t(c)];
  model.validate();

  int correct = 0;
  for (size_t i = 0; i < clips.size(); ++i) {
    auto scores = ivector_classify(model, clips[i]);
    for (double s : scores) {
      CHECK(s <= 1.0 + 1e-12);
      CHECK(s >= -1.0 - 1e-12);
    }
    if (argmax_score(scores) == labels[size_t(i)])
      ++correct;
  }
  CHECK(double(correct) / double(clips.size()) >= 0.95);

  // A clip whose embedding IS a class mean scores exactly 1 there.
  auto emb = ivector_embed(model, clips[0]);
  for (int j = 0; j < model.class_means.cols; ++j)
    model.class_means(2, j) = emb[size_t(j)];
  auto scores = ivector_classify(model, clips[0]);
  CHECK(scores[2] == doctest::Approx(1.0).epsilon(1e-12));

  // Cosine scores ignore positive rescaling of the class mean.
  for (int j = 0; j < model.class_means.cols; ++j)
    model.class_means(2, j) *= 7.5;
  auto scaled = ivector_classify(model, clips[0]);
  CHECK(scaled[2] == doctest::Approx(scores[2]).epsilon(1e-12));

  // Euclidean switch: distance to an exactly matching mean is zero.
  for (int j = 0; j < model.class_means.cols; ++j)
    model.class_means(2, j) /= 7.5;
  model.scoring = IvScoring::euclidean;
  auto escores = ivector_classify(model, clips[0]);
  CHECK(escores[2] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("ivector model serialization round-trips bit-exactly") {
  namespace fs = std::filesystem;
  Rng rng(1001);
  GmmModel ubm = make_ubm(rng, 4, 3, 2.0);
  IVectorModel model;
  model.ubm = ubm;
  model.m = make_supervector(ubm);
  model.t = random_t(rng, 12, 3, 0.4);
  model.lda.projection = DMatrix(2, 3);
  for (auto &v : model.lda.projection.v)
    v = rng.normal();
  model.class_means = DMatrix(2, 2);
  for (auto &v : model.class_means.v)
    v = rng.normal();
  model.labels = {"cafe", "park"};
  model.scoring = IvScoring::euclidean;
  model.length_normalize = true;

  const fs::path dir = fs::temp_directory_path() / "skald_test_iv";
  fs::create_directories(dir);
  const fs::path path = dir / "model.ski";
  save_ivector_model(path, model);
  IVectorModel back = load_ivector_model(path);

  CHECK(back.ubm.means.v == model.ubm.means.v);
  CHECK(back.m == model.m);
  CHECK(back.t.v == model.t.v);
  CHECK(back.lda.projection.v == model.lda.projection.v);
  CHECK(back.class_means.v == model.class_means.v);
  CHECK(back.labels == model.labels);
  CHECK(back.scoring == IvScoring::euclidean);
  CHECK(back.length_normalize);

  auto b1 = read_file(path);
  save_ivector_model(path, back);
  auto b2 = read_file(path);
  CHECK(b1 == b2);
  fs::remove_all(dir);
}
