// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ivector.hpp
 * @brief  Total-variability modeling: Baum-Welch statistics, T-matrix EM,
 *         MAP i-vector extraction, LDA and cosine scoring.
 *
 * The clip supervector model is M = m + T y with a standard-normal prior on
 * y; the extracted i-vector is the posterior mean of y given the clip's
 * sufficient statistics.
 */

#ifndef SKALD_IVECTOR_HPP
#define SKALD_IVECTOR_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "skald/common.hpp"
#include "skald/gmm.hpp"

namespace skald {

/// Zeroth- and first-order sufficient statistics of one clip under the UBM.
/// f is centered on the UBM means: f_k = sum_t gamma_tk (x_t - mu_k).
struct BwStats {
  std::vector<double> n; // K soft counts
  DMatrix f;             // K x D

  int components() const { return f.rows; }
  int dim() const { return f.cols; }
};

BwStats bw_stats(const GmmModel &ubm, const DMatrix &frames);

/// Fisher-style linear discriminant: rows of projection are the leading
/// eigenvectors of (S_w + lambda I)^-1 S_b, lambda = 1e-6 tr(S_w)/R.
struct Lda {
  DMatrix projection; // P x R

  bool trained() const { return projection.rows > 0; }
  int out_dim() const { return projection.rows; }
};

/// class_ids in [0, n_classes). out_dim 0 selects min(n_classes - 1, R).
/// Eigenvector signs are fixed (largest component positive) so fits are
/// reproducible bit-for-bit.
Lda fit_lda(const DMatrix &vectors, const std::vector<int> &class_ids,
            int n_classes, int out_dim = 0);

DMatrix lda_project(const Lda &lda, const DMatrix &rows);

enum class IvScoring : uint8_t { cosine = 0, euclidean = 1 };
const char *iv_scoring_name(IvScoring scoring);
IvScoring iv_scoring_from_name(const std::string &name);

struct IVectorModel {
  GmmModel ubm;
  std::vector<double> m; // K*D supervector of concatenated UBM means
  DMatrix t;             // (K*D) x R
  Lda lda;
  DMatrix class_means; // C x P, in the scoring space
  std::vector<std::string> labels;
  IvScoring scoring = IvScoring::cosine;
  bool length_normalize = false;

  int rank() const { return t.cols; }
  void validate() const;
};

std::vector<double> make_supervector(const GmmModel &ubm);

/// w = L^-1 T' Sigma^-1 f, L = I + sum_k n_k T_k' Sigma_k^-1 T_k.
/// Zero stats or a zero T give the prior mean w = 0.
std::vector<double> extract_ivector(const IVectorModel &model, const BwStats &stats);

struct TMatrixConfig {
  int rank = 400;
  int iters = 10;
  uint64_t seed = 1;
  double init_scale = 0.1;
};

struct TMatrixResult {
  DMatrix t;
  /// Model evidence term sum_i(-1/2 log det L_i + 1/2 b_i' L_i^-1 b_i)
  /// evaluated at the start of each iteration; non-decreasing under EM.
  std::vector<double> objective;
};

/// EM over per-clip statistics. Components with no soft counts keep their
/// T rows unchanged.
TMatrixResult train_t_matrix(const std::vector<BwStats> &stats,
                             const GmmModel &ubm, const TMatrixConfig &cfg);

/// Extracts, optionally length-normalizes, projects through LDA when
/// trained, then scores each class: cosine similarity to the class mean, or
/// negated Euclidean distance under the euclidean switch.
std::vector<double> ivector_classify(const IVectorModel &model,
                                     const DMatrix &frames);

/// The scoring-space representation of one clip (the vector the class means
/// live alongside). Exposed so trainers can build class_means.
std::vector<double> ivector_embed(const IVectorModel &model, const DMatrix &frames);

// Serialization: magic "SKI1" embedding the UBM block, m, T, LDA,
// class means, labels and scoring flags.
void put_ivector_model(BinaryWriter &w, const IVectorModel &model);
IVectorModel get_ivector_model(BinaryReader &r);
void save_ivector_model(const std::filesystem::path &path, const IVectorModel &model);
IVectorModel load_ivector_model(const std::filesystem::path &path);

} // namespace skald

#endif // SKALD_IVECTOR_HPP
