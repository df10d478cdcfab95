// SPDX-License-Identifier: Apache-2.0
/**
 * @file   gmm.hpp
 * @brief  Diagonal-covariance Gaussian mixtures: per-class bag-of-frames
 *         classifiers and the universal background model.
 */

#ifndef SKALD_GMM_HPP
#define SKALD_GMM_HPP

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skald/common.hpp"
#include "skald/io_util.hpp"

namespace skald {

struct GmmModel {
  std::vector<double> weights; // K, non-negative, sums to 1
  DMatrix means;               // K x D
  DMatrix variances;           // K x D, floored positive

  int components() const { return means.rows; }
  int dim() const { return means.cols; }
  void validate() const;
};

struct GmmTrainConfig {
  int components = 32;
  int max_iters = 50;
  double rel_tol = 1e-5;       // stop when relative log-likelihood change drops below
  int kmeans_iters = 10;
  double variance_floor_factor = 1e-3; // of the global per-dimension variance
  uint64_t seed = 1;
};

struct GmmFitResult {
  GmmModel model;
  /// Total training log-likelihood evaluated at the start of each EM
  /// iteration; non-decreasing within 1e-9.
  std::vector<double> iter_log_likelihood;
};

/// EM from a seeded k-means++ start. Requires N >= components and finite
/// input. Deterministic for a fixed seed, independent of thread count.
GmmFitResult fit_gmm(const DMatrix &frames, const GmmTrainConfig &cfg);

/// log sum_k w_k N(x; mu_k, Sigma_k), evaluated with log-sum-exp.
double log_likelihood(const GmmModel &model, std::span<const double> frame);

/// Per-frame log-likelihoods, parallelized over fixed blocks.
std::vector<double> frame_log_likelihoods(const GmmModel &model,
                                          const DMatrix &frames);

/// Posterior responsibility of each component for each frame (N x K);
/// every row sums to 1.
DMatrix component_posteriors(const GmmModel &model, const DMatrix &frames);

/// One GMM per class over that class's bag of frames.
struct GmmClassifier {
  std::vector<std::string> labels;
  std::vector<GmmModel> models; // aligned with labels

  int dim() const { return models.empty() ? 0 : models[0].dim(); }
  void validate() const;
};

/// Trains one model per labeled bag. Each class draws its seed from the
/// config seed mixed with a hash of its bag, so identical bags give
/// identical models regardless of label or position.
GmmClassifier train_classifier(
    const std::vector<std::pair<std::string, DMatrix>> &bags,
    const GmmTrainConfig &cfg);

/// score(c) = sum_t log_likelihood(model_c, x_t). Throws on an empty clip.
std::vector<double> classify_clip(const GmmClassifier &clf, const DMatrix &frames);

/// Lowest index among maxima; the tie rule every scorer shares.
int argmax_score(std::span<const double> scores);

// Serialization. Model block: magic "SKG1", u32 K, u32 D, f64 weights,
// means, variances. Classifier: magic "SKC1", u32 classes, then per class a
// label string followed by a model block.
void put_gmm(BinaryWriter &w, const GmmModel &model);
GmmModel get_gmm(BinaryReader &r);
void save_gmm(const std::filesystem::path &path, const GmmModel &model);
GmmModel load_gmm(const std::filesystem::path &path);

void put_classifier(BinaryWriter &w, const GmmClassifier &clf);
GmmClassifier get_classifier(BinaryReader &r);
void save_classifier(const std::filesystem::path &path, const GmmClassifier &clf);
GmmClassifier load_classifier(const std::filesystem::path &path);

} // namespace skald

#endif // SKALD_GMM_HPP
