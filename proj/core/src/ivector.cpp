// SPDX-License-Identifier: Apache-2.0

#include "skald/ivector.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "skald/parallel.hpp"

namespace skald {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

ConstMap map_of(const DMatrix &m) { return ConstMap(m.v.data(), m.rows, m.cols); }

DMatrix from_eigen(const Eigen::MatrixXd &e) {
  DMatrix out(int(e.rows()), int(e.cols()));
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c)
      out(r, c) = e(r, c);
  return out;
}

/// L_i and b_i of one clip: L = I + sum_k n_k T_k' Sigma_k^-1 T_k,
/// b = sum_k T_k' Sigma_k^-1 f_k.
void posterior_system(const ConstMap &t, const GmmModel &ubm, const BwStats &stats,
                      Eigen::MatrixXd &l, Eigen::VectorXd &b) {
  const int k = ubm.components(), d = ubm.dim(), r = int(t.cols());
  l = Eigen::MatrixXd::Identity(r, r);
  b = Eigen::VectorXd::Zero(r);
  Eigen::MatrixXd scaled(d, r);
  for (int c = 0; c < k; ++c) {
    const auto tc = t.middleRows(c * d, d);
    for (int j = 0; j < d; ++j)
      scaled.row(j) = tc.row(j) / ubm.variances(c, j);
    if (stats.n[size_t(c)] > 0.0)
      l.noalias() += stats.n[size_t(c)] * (tc.transpose() * scaled);
    Eigen::VectorXd fc(d);
    for (int j = 0; j < d; ++j)
      fc(j) = stats.f(c, j) / ubm.variances(c, j);
    b.noalias() += tc.transpose() * fc;
  }
}

} // namespace

BwStats bw_stats(const GmmModel &ubm, const DMatrix &frames) {
  if (frames.rows == 0)
    throw DataError("bw_stats: empty feature sequence");
  if (frames.cols != ubm.dim())
    throw DimensionError("bw_stats: frame dim " + std::to_string(frames.cols) +
                         " != ubm dim " + std::to_string(ubm.dim()));
  const int k = ubm.components(), d = ubm.dim();
  const DMatrix gamma = component_posteriors(ubm, frames);

  BwStats s;
  s.n.assign(size_t(k), 0.0);
  s.f = DMatrix(k, d);
  for (int i = 0; i < frames.rows; ++i) {
    auto x = frames.row(i);
    auto g = gamma.row(i);
    for (int c = 0; c < k; ++c) {
      const double gc = g[size_t(c)];
      s.n[size_t(c)] += gc;
      auto fr = s.f.row(c);
      for (int j = 0; j < d; ++j)
        fr[size_t(j)] += gc * (x[size_t(j)] - ubm.means(c, j));
    }
  }
  return s;
}

void IVectorModel::validate() const {
  ubm.validate();
  const int kd = ubm.components() * ubm.dim();
  if (t.rows != kd)
    throw DimensionError("ivector model: T has " + std::to_string(t.rows) +
                         " rows for supervector size " + std::to_string(kd));
  if (t.cols > kd)
    throw DimensionError("ivector model: rank exceeds supervector size");
  if (int(m.size()) != kd)
    throw DimensionError("ivector model: supervector size mismatch");
  if (lda.trained() && lda.projection.cols != t.cols)
    throw DimensionError("ivector model: LDA input dim mismatch");
  if (class_means.rows != int(labels.size()))
    throw DimensionError("ivector model: class mean/label count mismatch");
}

std::vector<double> make_supervector(const GmmModel &ubm) {
  return ubm.means.v;
}

std::vector<double> extract_ivector(const IVectorModel &model, const BwStats &stats) {
  const GmmModel &ubm = model.ubm;
  if (stats.components() != ubm.components() || stats.dim() != ubm.dim())
    throw DimensionError("extract_ivector: stats do not match the UBM");
  const int r = model.rank();

  Eigen::MatrixXd l;
  Eigen::VectorXd b;
  posterior_system(map_of(model.t), ubm, stats, l, b);

  Eigen::LLT<Eigen::MatrixXd> llt(l);
  if (llt.info() != Eigen::Success)
    throw NumericError("extract_ivector: posterior precision is not positive definite");
  Eigen::VectorXd w = llt.solve(b);

  std::vector<double> out(size_t(r), 0.0);
  for (int i = 0; i < r; ++i) {
    if (!std::isfinite(w(i)))
      throw NumericError("extract_ivector: non-finite i-vector entry");
    out[size_t(i)] = w(i);
  }
  return out;
}

TMatrixResult train_t_matrix(const std::vector<BwStats> &stats,
                             const GmmModel &ubm, const TMatrixConfig &cfg) {
  const int k = ubm.components(), d = ubm.dim();
  const int kd = k * d, r = cfg.rank;
  if (r < 1 || r > kd)
    throw ConfigError("train_t_matrix: rank must be in [1, K*D]");
  if (stats.size() < 2)
    throw DataError("train_t_matrix: need at least 2 clips of statistics");
  for (const BwStats &s : stats)
    if (s.components() != k || s.dim() != d)
      throw DimensionError("train_t_matrix: stats shape does not match the UBM");

  TMatrixResult result;
  result.t = DMatrix(kd, r);
  Rng rng(cfg.seed);
  for (double &v : result.t.v)
    v = cfg.init_scale * rng.normal();

  const int n_clips = int(stats.size());
  const int chunk = 32;

  for (int iter = 0; iter < cfg.iters; ++iter) {
    ConstMap t = map_of(result.t);

    std::vector<Eigen::MatrixXd> a(size_t(k), Eigen::MatrixXd::Zero(r, r));
    std::vector<Eigen::MatrixXd> c(size_t(k), Eigen::MatrixXd::Zero(d, r));
    double objective = 0.0;

    std::vector<Eigen::MatrixXd> linv{size_t(chunk)};
    std::vector<Eigen::VectorXd> wv{size_t(chunk)};
    std::vector<double> obj(size_t(chunk), 0.0);

    for (int base = 0; base < n_clips; base += chunk) {
      const int count = std::min(chunk, n_clips - base);
      // Per-clip posteriors in parallel; each slot is written by one index.
      parallel_for(count, [&](int i) {
        Eigen::MatrixXd l;
        Eigen::VectorXd b;
        posterior_system(t, ubm, stats[size_t(base + i)], l, b);
        Eigen::LLT<Eigen::MatrixXd> llt(l);
        if (llt.info() != Eigen::Success)
          throw NumericError("train_t_matrix: posterior precision not PD");
        wv[size_t(i)] = llt.solve(b);
        linv[size_t(i)] =
            llt.solve(Eigen::MatrixXd::Identity(l.rows(), l.cols()));
        double logdet = 0.0;
        const auto &lmat = llt.matrixLLT();
        for (int j = 0; j < lmat.rows(); ++j)
          logdet += 2.0 * std::log(lmat(j, j));
        obj[size_t(i)] = -0.5 * logdet + 0.5 * b.dot(wv[size_t(i)]);
      });
      // Ordered accumulation keeps the normal equations deterministic.
      for (int i = 0; i < count; ++i) {
        const BwStats &s = stats[size_t(base + i)];
        const Eigen::MatrixXd eyy = linv[size_t(i)] + wv[size_t(i)] * wv[size_t(i)].transpose();
        objective += obj[size_t(i)];
        for (int comp = 0; comp < k; ++comp) {
          if (s.n[size_t(comp)] > 0.0)
            a[size_t(comp)].noalias() += s.n[size_t(comp)] * eyy;
          Eigen::VectorXd fc(d);
          for (int j = 0; j < d; ++j)
            fc(j) = s.f(comp, j);
          c[size_t(comp)].noalias() += fc * wv[size_t(i)].transpose();
        }
      }
    }
    result.objective.push_back(objective);

    // M step: per component, T_k = C_k A_k^-1. Zero-evidence components
    // keep their rows.
    DMatrix next = result.t;
    parallel_for(k, [&](int comp) {
      if (a[size_t(comp)].trace() < 1e-12)
        return;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(a[size_t(comp)]);
      Eigen::MatrixXd tk = ldlt.solve(c[size_t(comp)].transpose()).transpose();
      for (int j = 0; j < d; ++j)
        for (int q = 0; q < r; ++q)
          next(comp * d + j, q) = tk(j, q);
    });
    result.t = std::move(next);
  }
  return result;
}

Lda fit_lda(const DMatrix &vectors, const std::vector<int> &class_ids,
            int n_classes, int out_dim) {
  const int n = vectors.rows, r = vectors.cols;
  if (n_classes < 2)
    throw DataError("fit_lda: need at least 2 classes");
  if (int(class_ids.size()) != n)
    throw DimensionError("fit_lda: one class id per row required");
  for (int id : class_ids)
    if (id < 0 || id >= n_classes)
      throw DataError("fit_lda: class id out of range");
  if (out_dim <= 0)
    out_dim = std::min(n_classes - 1, r);
  if (out_dim > r)
    throw ConfigError("fit_lda: output dim exceeds input dim");

  const ConstMap x = map_of(vectors);
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(n_classes, r);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(n_classes);
  for (int i = 0; i < n; ++i) {
    means.row(class_ids[size_t(i)]) += x.row(i);
    counts(class_ids[size_t(i)]) += 1.0;
  }
  for (int c = 0; c < n_classes; ++c) {
    if (counts(c) == 0.0)
      throw DataError("fit_lda: class " + std::to_string(c) + " has no samples");
    means.row(c) /= counts(c);
  }
  Eigen::RowVectorXd global = Eigen::RowVectorXd::Zero(r);
  for (int i = 0; i < n; ++i)
    global += x.row(i);
  global /= double(n);

  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(r, r);
  Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(r, r);
  for (int i = 0; i < n; ++i) {
    const Eigen::RowVectorXd dev = x.row(i) - means.row(class_ids[size_t(i)]);
    sw.noalias() += dev.transpose() * dev;
  }
  for (int c = 0; c < n_classes; ++c) {
    const Eigen::RowVectorXd dev = means.row(c) - global;
    sb.noalias() += counts(c) * dev.transpose() * dev;
  }

  const double lambda = 1e-6 * sw.trace() / double(r) + 1e-12;
  sw += lambda * Eigen::MatrixXd::Identity(r, r);

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(sb, sw);
  if (ges.info() != Eigen::Success)
    throw NumericError("fit_lda: generalized eigensolve failed");

  // Eigenvalues ascend; take the trailing out_dim directions, leading first.
  Lda lda;
  lda.projection = DMatrix(out_dim, r);
  for (int p = 0; p < out_dim; ++p) {
    Eigen::VectorXd v = ges.eigenvectors().col(r - 1 - p);
    int pivot = 0;
    for (int j = 1; j < r; ++j)
      if (std::abs(v(j)) > std::abs(v(pivot)))
        pivot = j;
    if (v(pivot) < 0.0)
      v = -v;
    for (int j = 0; j < r; ++j)
      lda.projection(p, j) = v(j);
  }
  return lda;
}

DMatrix lda_project(const Lda &lda, const DMatrix &rows) {
  if (!lda.trained())
    throw ConfigError("lda_project: projection has not been fitted");
  if (rows.cols != lda.projection.cols)
    throw DimensionError("lda_project: input dim " + std::to_string(rows.cols) +
                         " != projection dim " + std::to_string(lda.projection.cols));
  const ConstMap x = map_of(rows);
  const ConstMap p = map_of(lda.projection);
  return from_eigen(x * p.transpose());
}

std::vector<double> ivector_embed(const IVectorModel &model, const DMatrix &frames) {
  std::vector<double> w = extract_ivector(model, bw_stats(model.ubm, frames));
  if (model.length_normalize) {
    double norm = 0.0;
    for (double v : w)
      norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double &v : w)
        v /= norm;
  }
  if (!model.lda.trained())
    return w;
  DMatrix one(1, int(w.size()));
  std::copy(w.begin(), w.end(), one.row(0).begin());
  DMatrix proj = lda_project(model.lda, one);
  return std::vector<double>(proj.v.begin(), proj.v.end());
}

std::vector<double> ivector_classify(const IVectorModel &model,
                                     const DMatrix &frames) {
  if (model.labels.empty())
    throw ConfigError("ivector_classify: model has no class means");
  const std::vector<double> w = ivector_embed(model, frames);
  if (int(w.size()) != model.class_means.cols)
    throw DimensionError("ivector_classify: embedding dim mismatch");

  std::vector<double> scores(model.labels.size(), 0.0);
  double wn = 0.0;
  for (double v : w)
    wn += v * v;
  wn = std::sqrt(wn);

  for (size_t c = 0; c < model.labels.size(); ++c) {
    auto mu = model.class_means.row(int(c));
    if (model.scoring == IvScoring::cosine) {
      double dot = 0.0, mn = 0.0;
      for (size_t j = 0; j < w.size(); ++j) {
        dot += w[j] * mu[j];
        mn += mu[j] * mu[j];
      }
      mn = std::sqrt(mn);
      scores[c] = (wn > 0.0 && mn > 0.0) ? dot / (wn * mn) : 0.0;
    } else {
      double dist = 0.0;
      for (size_t j = 0; j < w.size(); ++j) {
        const double diff = w[j] - mu[j];
        dist += diff * diff;
      }
      scores[c] = -std::sqrt(dist);
    }
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_matrix(BinaryWriter &w, const DMatrix &m) {
  w.put<uint32_t>(uint32_t(m.rows));
  w.put<uint32_t>(uint32_t(m.cols));
  w.put_vec(m.v);
}

DMatrix get_matrix(BinaryReader &r) {
  const uint32_t rows = r.get<uint32_t>();
  const uint32_t cols = r.get<uint32_t>();
  DMatrix m{int(rows), int(cols)};
  m.v = r.get_vec<double>(size_t(rows) * cols);
  return m;
}

} // namespace

void put_ivector_model(BinaryWriter &w, const IVectorModel &model) {
  w.put_magic("SKI1");
  put_gmm(w, model.ubm);
  w.put<uint32_t>(uint32_t(model.m.size()));
  w.put_vec(model.m);
  put_matrix(w, model.t);
  put_matrix(w, model.lda.projection);
  put_matrix(w, model.class_means);
  w.put<uint32_t>(uint32_t(model.labels.size()));
  for (const auto &label : model.labels)
    w.put_string(label);
  w.put<uint8_t>(uint8_t(model.scoring));
  w.put<uint8_t>(model.length_normalize ? 1 : 0);
}

IVectorModel get_ivector_model(BinaryReader &r) {
  r.expect_magic("SKI1", "ivector model");
  IVectorModel model;
  model.ubm = get_gmm(r);
  const uint32_t msize = r.get<uint32_t>();
  model.m = r.get_vec<double>(msize);
  model.t = get_matrix(r);
  model.lda.projection = get_matrix(r);
  model.class_means = get_matrix(r);
  const uint32_t n_labels = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_labels; ++i)
    model.labels.push_back(r.get_string());
  model.scoring = IvScoring(r.get<uint8_t>());
  model.length_normalize = r.get<uint8_t>() != 0;
  return model;
}

void save_ivector_model(const std::filesystem::path &path, const IVectorModel &model) {
  BinaryWriter w;
  put_ivector_model(w, model);
  atomic_write_file(path, w.bytes());
}

IVectorModel load_ivector_model(const std::filesystem::path &path) {
  const auto bytes = read_file(path);
  BinaryReader r(bytes);
  IVectorModel model = get_ivector_model(r);
  if (!r.at_end())
    throw DataError(path.string() + ": trailing bytes after model");
  return model;
}


const char *iv_scoring_name(IvScoring scoring) {
  switch (scoring) {
  case IvScoring::cosine:
    return "cosine";
  case IvScoring::euclidean:
    return "euclidean";
  }
  return "?";
}

IvScoring iv_scoring_from_name(const std::string &name) {
  for (IvScoring s : {IvScoring::cosine, IvScoring::euclidean})
    if (name == iv_scoring_name(s))
      return s;
  throw ConfigError("unknown ivector scoring: " + name);
}

} // namespace skald
