// SPDX-License-Identifier: Apache-2.0

#include "skald/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skald/parallel.hpp"

namespace skald {

namespace {

constexpr double kLn2Pi = 1.8378770664093453; // ln(2*pi)

void check_finite(const DMatrix &frames, const char *who) {
  for (double v : frames.v)
    if (!std::isfinite(v))
      throw NumericError(std::string(who) + ": non-finite input frame entry");
}

/// Inverse-CDF draw from unnormalized non-negative weights using a single
/// uniform. Adjacent duplication of every weight leaves the selected value
/// class unchanged, which EM-invariance tests rely on.
int pick_weighted(Rng &rng, std::span<const double> weights, double total) {
  const double target = rng.uniform() * total;
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (acc > target)
      return int(i);
  }
  return int(weights.size()) - 1;
}

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

DMatrix kmeans_pp(const DMatrix &x, int k, int iters, Rng &rng) {
  const int n = x.rows, d = x.cols;
  DMatrix centers(k, d);

  std::vector<double> unit(size_t(n), 1.0);
  int first = pick_weighted(rng, unit, double(n));
  std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());

  std::vector<double> d2(size_t(n), 0.0);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = sq_dist(x.row(i), centers.row(0));
      for (int j = 1; j < c; ++j)
        best = std::min(best, sq_dist(x.row(i), centers.row(j)));
      d2[size_t(i)] = best;
      total += best;
    }
    const int pick = total > 0.0 ? pick_weighted(rng, d2, total)
                                 : pick_weighted(rng, unit, double(n));
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
  }

  std::vector<int> assign(size_t(n), 0);
  for (int it = 0; it < iters; ++it) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(x.row(i), centers.row(0));
      for (int j = 1; j < k; ++j) {
        const double dj = sq_dist(x.row(i), centers.row(j));
        if (dj < bd) {
          bd = dj;
          best = j;
        }
      }
      assign[size_t(i)] = best;
    }
    DMatrix sums(k, d);
    std::vector<int> counts(size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      auto row = x.row(i);
      auto dst = sums.row(assign[size_t(i)]);
      for (int j = 0; j < d; ++j)
        dst[size_t(j)] += row[size_t(j)];
      ++counts[size_t(assign[size_t(i)])];
    }
    for (int c = 0; c < k; ++c)
      if (counts[size_t(c)] > 0)
        for (int j = 0; j < d; ++j)
          centers(c, j) = sums(c, j) / counts[size_t(c)];
    // An empty cluster keeps its previous center.
  }
  return centers;
}

struct LogDensityModel {
  const GmmModel *m;
  std::vector<double> log_w;
  std::vector<double> log_norm; // -(1/2) sum_d ln(2 pi var_kd)

  explicit LogDensityModel(const GmmModel &model) : m(&model) {
    const int k = model.components(), d = model.dim();
    log_w.resize(size_t(k));
    log_norm.resize(size_t(k));
    for (int c = 0; c < k; ++c) {
      log_w[size_t(c)] =
          model.weights[size_t(c)] > 0.0 ? std::log(model.weights[size_t(c)]) : -INFINITY;
      double acc = 0.0;
      for (int j = 0; j < d; ++j)
        acc += kLn2Pi + std::log(model.variances(c, j));
      log_norm[size_t(c)] = -0.5 * acc;
    }
  }

  void component_logs(std::span<const double> x, std::vector<double> &out) const {
    const int k = m->components(), d = m->dim();
    for (int c = 0; c < k; ++c) {
      double quad = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = x[size_t(j)] - m->means(c, j);
        quad += diff * diff / m->variances(c, j);
      }
      out[size_t(c)] = log_w[size_t(c)] + log_norm[size_t(c)] - 0.5 * quad;
    }
  }
};

} // namespace

void GmmModel::validate() const {
  if (means.rows != variances.rows || means.cols != variances.cols ||
      int(weights.size()) != means.rows)
    throw DimensionError("gmm: weights/means/variances shapes disagree");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0))
      throw NumericError("gmm: negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw NumericError("gmm: weights sum to " + std::to_string(sum));
  for (double v : variances.v)
    if (!(v > 0.0))
      throw NumericError("gmm: non-positive variance");
}

GmmFitResult fit_gmm(const DMatrix &frames, const GmmTrainConfig &cfg) {
  const int n = frames.rows, d = frames.cols, k = cfg.components;
  if (k < 1)
    throw ConfigError("fit_gmm: components must be >= 1");
  if (n < k)
    throw DataError("fit_gmm: " + std::to_string(n) + " frames for " +
                    std::to_string(k) + " components");
  check_finite(frames, "fit_gmm");

  // Global per-dimension variance sets the floor.
  std::vector<double> gmean(size_t(d), 0.0), gvar(size_t(d), 0.0);
  for (int i = 0; i < n; ++i) {
    auto row = frames.row(i);
    for (int j = 0; j < d; ++j)
      gmean[size_t(j)] += row[size_t(j)];
  }
  for (double &v : gmean)
    v /= n;
  for (int i = 0; i < n; ++i) {
    auto row = frames.row(i);
    for (int j = 0; j < d; ++j) {
      const double diff = row[size_t(j)] - gmean[size_t(j)];
      gvar[size_t(j)] += diff * diff;
    }
  }
  std::vector<double> floor(size_t(d), 0.0);
  for (int j = 0; j < d; ++j)
    floor[size_t(j)] = std::max(cfg.variance_floor_factor * gvar[size_t(j)] / n, 1e-10);

  Rng rng(cfg.seed);
  DMatrix centers = kmeans_pp(frames, k, cfg.kmeans_iters, rng);

  // Seed the mixture from the k-means partition.
  GmmModel model;
  model.means = centers;
  model.variances = DMatrix(k, d);
  model.weights.assign(size_t(k), 0.0);
  {
    std::vector<int> counts(size_t(k), 0);
    DMatrix sums(k, d), sq(k, d);
    for (int i = 0; i < n; ++i) {
      auto row = frames.row(i);
      int best = 0;
      double bd = sq_dist(row, centers.row(0));
      for (int c = 1; c < k; ++c) {
        const double dc = sq_dist(row, centers.row(c));
        if (dc < bd) {
          bd = dc;
          best = c;
        }
      }
      ++counts[size_t(best)];
      for (int j = 0; j < d; ++j) {
        sums(best, j) += row[size_t(j)];
        sq(best, j) += row[size_t(j)] * row[size_t(j)];
      }
    }
    double wsum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double cnt = std::max(counts[size_t(c)], 1);
      model.weights[size_t(c)] = cnt;
      wsum += cnt;
      for (int j = 0; j < d; ++j) {
        if (counts[size_t(c)] > 0) {
          const double mu = sums(c, j) / counts[size_t(c)];
          model.means(c, j) = mu;
          model.variances(c, j) =
              std::max(sq(c, j) / counts[size_t(c)] - mu * mu, floor[size_t(j)]);
        } else {
          model.variances(c, j) = std::max(gvar[size_t(j)] / n, floor[size_t(j)]);
        }
      }
    }
    for (double &w : model.weights)
      w /= wsum;
  }

  GmmFitResult result;

  // Fixed-block accumulators keep the E-step reduction deterministic under
  // any thread count.
  const int block = 2048;
  const int n_blocks = block_count(n, block);

  std::vector<double> prev_w(size_t(k), 0.0);
  DMatrix prev_mu, prev_var;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    const LogDensityModel dens(model);

    struct Partial {
      double ll = 0.0;
      std::vector<double> nk;
      DMatrix sx, sxx;
    };
    std::vector<Partial> partials{size_t(n_blocks)};

    parallel_for(n_blocks, [&](int b) {
      Partial &p = partials[size_t(b)];
      p.nk.assign(size_t(k), 0.0);
      p.sx = DMatrix(k, d);
      p.sxx = DMatrix(k, d);
      std::vector<double> lg(size_t(k), 0.0);
      const int lo = b * block, hi = std::min(n, lo + block);
      for (int i = lo; i < hi; ++i) {
        auto x = frames.row(i);
        dens.component_logs(x, lg);
        const double ll = log_sum_exp(lg);
        p.ll += ll;
        for (int c = 0; c < k; ++c) {
          const double r = std::exp(lg[size_t(c)] - ll);
          p.nk[size_t(c)] += r;
          auto sxr = p.sx.row(c);
          auto sxxr = p.sxx.row(c);
          for (int j = 0; j < d; ++j) {
            sxr[size_t(j)] += r * x[size_t(j)];
            sxxr[size_t(j)] += r * x[size_t(j)] * x[size_t(j)];
          }
        }
      }
    });

    double ll = 0.0;
    std::vector<double> nk(size_t(k), 0.0);
    DMatrix sx(k, d), sxx(k, d);
    for (const Partial &p : partials) {
      ll += p.ll;
      for (int c = 0; c < k; ++c) {
        nk[size_t(c)] += p.nk[size_t(c)];
        for (int j = 0; j < d; ++j) {
          sx(c, j) += p.sx(c, j);
          sxx(c, j) += p.sxx(c, j);
        }
      }
    }
    result.iter_log_likelihood.push_back(ll);

    // M step.
    for (int c = 0; c < k; ++c) {
      if (nk[size_t(c)] > 1e-10) {
        for (int j = 0; j < d; ++j) {
          const double mu = sx(c, j) / nk[size_t(c)];
          model.means(c, j) = mu;
          model.variances(c, j) =
              std::max(sxx(c, j) / nk[size_t(c)] - mu * mu, floor[size_t(j)]);
        }
      }
      model.weights[size_t(c)] = nk[size_t(c)] / n;
    }

    if (iter > 0) {
      const double prev = result.iter_log_likelihood[size_t(iter) - 1];
      if (std::abs(ll - prev) < cfg.rel_tol * (std::abs(prev) + 1e-12)) {
        // Converged; roll the parameters back to the ones the final
        // likelihood was computed at so the reported pair is consistent.
        model.weights = prev_w;
        model.means = prev_mu;
        model.variances = prev_var;
        break;
      }
    }
    prev_w = model.weights;
    prev_mu = model.means;
    prev_var = model.variances;
  }

  result.model = std::move(model);
  result.model.validate();
  return result;
}

double log_likelihood(const GmmModel &model, std::span<const double> frame) {
  if (int(frame.size()) != model.dim())
    throw DimensionError("log_likelihood: frame dim " +
                         std::to_string(frame.size()) + " != model dim " +
                         std::to_string(model.dim()));
  const LogDensityModel dens(model);
  std::vector<double> lg(size_t(model.components()), 0.0);
  dens.component_logs(frame, lg);
  return log_sum_exp(lg);
}

std::vector<double> frame_log_likelihoods(const GmmModel &model,
                                          const DMatrix &frames) {
  if (frames.cols != model.dim())
    throw DimensionError("frame_log_likelihoods: dim mismatch");
  const LogDensityModel dens(model);
  std::vector<double> out(size_t(frames.rows), 0.0);
  const int block = 2048;
  parallel_for(block_count(frames.rows, block), [&](int b) {
    std::vector<double> lg(size_t(model.components()), 0.0);
    const int lo = b * block, hi = std::min(frames.rows, lo + block);
    for (int i = lo; i < hi; ++i) {
      dens.component_logs(frames.row(i), lg);
      out[size_t(i)] = log_sum_exp(lg);
    }
  });
  return out;
}

DMatrix component_posteriors(const GmmModel &model, const DMatrix &frames) {
  if (frames.cols != model.dim())
    throw DimensionError("component_posteriors: dim mismatch");
  const LogDensityModel dens(model);
  const int k = model.components();
  DMatrix out(frames.rows, k);
  const int block = 2048;
  parallel_for(block_count(frames.rows, block), [&](int b) {
    std::vector<double> lg(size_t(k), 0.0);
    const int lo = b * block, hi = std::min(frames.rows, lo + block);
    for (int i = lo; i < hi; ++i) {
      dens.component_logs(frames.row(i), lg);
      const double ll = log_sum_exp(lg);
      auto row = out.row(i);
      for (int c = 0; c < k; ++c)
        row[size_t(c)] = std::exp(lg[size_t(c)] - ll);
    }
  });
  return out;
}

void GmmClassifier::validate() const {
  if (labels.size() != models.size())
    throw DimensionError("classifier: label/model count mismatch");
  for (const auto &m : models) {
    m.validate();
    if (m.dim() != dim())
      throw DimensionError("classifier: class models disagree on feature dim");
  }
}

GmmClassifier train_classifier(
    const std::vector<std::pair<std::string, DMatrix>> &bags,
    const GmmTrainConfig &cfg) {
  if (bags.empty())
    throw DataError("train_classifier: no class bags");
  GmmClassifier clf;
  clf.labels.reserve(bags.size());
  clf.models.resize(bags.size());
  for (const auto &[label, _] : bags)
    clf.labels.push_back(label);

  parallel_for(int(bags.size()), [&](int c) {
    const DMatrix &bag = bags[size_t(c)].second;
    GmmTrainConfig per = cfg;
    // The bag's bytes, not its label or position, derive the seed.
    per.seed = Rng::mix(cfg.seed, fnv1a(bag.v.data(), bag.v.size() * sizeof(double)));
    clf.models[size_t(c)] = fit_gmm(bag, per).model;
  });
  clf.validate();
  return clf;
}

std::vector<double> classify_clip(const GmmClassifier &clf, const DMatrix &frames) {
  if (frames.rows == 0)
    throw DataError("classify_clip: empty feature sequence");
  if (frames.cols != clf.dim())
    throw DimensionError("classify_clip: clip dim " + std::to_string(frames.cols) +
                         " != classifier dim " + std::to_string(clf.dim()));
  std::vector<double> scores(clf.models.size(), 0.0);
  for (size_t c = 0; c < clf.models.size(); ++c) {
    const auto ll = frame_log_likelihoods(clf.models[c], frames);
    double acc = 0.0;
    for (double v : ll)
      acc += v;
    scores[c] = acc;
  }
  return scores;
}

int argmax_score(std::span<const double> scores) {
  if (scores.empty())
    throw DataError("argmax_score: empty score vector");
  int best = 0;
  for (int i = 1; i < int(scores.size()); ++i)
    if (scores[size_t(i)] > scores[size_t(best)])
      best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Serialization

void put_gmm(BinaryWriter &w, const GmmModel &model) {
  w.put_magic("SKG1");
  w.put<uint32_t>(uint32_t(model.components()));
  w.put<uint32_t>(uint32_t(model.dim()));
  w.put_vec(model.weights);
  w.put_vec(model.means.v);
  w.put_vec(model.variances.v);
}

GmmModel get_gmm(BinaryReader &r) {
  r.expect_magic("SKG1", "gmm model");
  const uint32_t k = r.get<uint32_t>();
  const uint32_t d = r.get<uint32_t>();
  GmmModel m;
  m.weights = r.get_vec<double>(k);
  m.means = DMatrix(int(k), int(d));
  m.means.v = r.get_vec<double>(size_t(k) * d);
  m.variances = DMatrix(int(k), int(d));
  m.variances.v = r.get_vec<double>(size_t(k) * d);
  return m;
}

void save_gmm(const std::filesystem::path &path, const GmmModel &model) {
  BinaryWriter w;
  put_gmm(w, model);
  atomic_write_file(path, w.bytes());
}

GmmModel load_gmm(const std::filesystem::path &path) {
  const auto bytes = read_file(path);
  BinaryReader r(bytes);
  GmmModel m = get_gmm(r);
  if (!r.at_end())
    throw DataError(path.string() + ": trailing bytes after model");
  return m;
}

void put_classifier(BinaryWriter &w, const GmmClassifier &clf) {
  w.put_magic("SKC1");
  w.put<uint32_t>(uint32_t(clf.labels.size()));
  for (size_t c = 0; c < clf.labels.size(); ++c) {
    w.put_string(clf.labels[c]);
    put_gmm(w, clf.models[c]);
  }
}

GmmClassifier get_classifier(BinaryReader &r) {
  r.expect_magic("SKC1", "gmm classifier");
  const uint32_t n = r.get<uint32_t>();
  GmmClassifier clf;
  for (uint32_t c = 0; c < n; ++c) {
    clf.labels.push_back(r.get_string());
    clf.models.push_back(get_gmm(r));
  }
  return clf;
}

void save_classifier(const std::filesystem::path &path, const GmmClassifier &clf) {
  BinaryWriter w;
  put_classifier(w, clf);
  atomic_write_file(path, w.bytes());
}

GmmClassifier load_classifier(const std::filesystem::path &path) {
  const auto bytes = read_file(path);
  BinaryReader r(bytes);
  GmmClassifier clf = get_classifier(r);
  if (!r.at_end())
    throw DataError(path.string() + ": trailing bytes after classifier");
  return clf;
}

} // namespace skald
