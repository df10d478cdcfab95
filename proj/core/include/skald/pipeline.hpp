// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include "skald/audio.hpp"
#include "skald/dsp.hpp"
#include "skald/eval.hpp"
#include "skald/fusion.hpp"
#include "skald/gmm.hpp"
#include "skald/ivector.hpp"
#include "skald/neural/train.hpp"

namespace skald {

// ---------------------------------------------------------------------------
// Feature extraction plumbing

/// One knob set per front end; `kind` picks which one applies. The mel
/// resolution of the log-mel kinds and the descriptor set of the functional
/// kinds follow the kind itself.
struct ExtractConfig {
  FeatureKind kind = FeatureKind::mfcc61;
  MfccConfig mfcc;
  LogMelConfig logmel;
  FunctionalConfig functional;
  ChannelView view = ChannelView::mid; // for the single-channel front ends

  /// Stable across runs and platforms; covers every field that changes the
  /// output, so a matching hash certifies a feature file is current.
  uint64_t config_hash() const;
};

FeatureSequence extract_clip_features(const AudioClip &clip,
                                      const ExtractConfig &cfg);

/// Feature file name for a clip path: the path with separators flattened
/// plus a short hash of the original, so distinct paths cannot collide.
std::string feature_file_name(const std::string &clip_path);

struct ExtractReport {
  std::vector<std::string> written;
  std::vector<std::string> skipped; // up to date, left alone
  std::vector<std::pair<std::string, std::string>> failures; // path, reason
};

/// Extracts features for every manifest clip into out_dir, skipping clips
/// whose existing file carries the current config hash. Per-clip failures
/// are collected, not thrown.
ExtractReport extract_features(const Manifest &m,
                               const std::filesystem::path &audio_root,
                               const ExtractConfig &cfg,
                               const std::filesystem::path &out_dir);

/// Loads one clip's frames, checking the stored kind.
DMatrix load_clip_frames(const std::filesystem::path &feature_dir,
                         const std::string &clip_path, FeatureKind expected);

// ---------------------------------------------------------------------------
// Model families over extracted features

enum class ModelKind : uint8_t { gmm = 0, dnn = 1, rnn = 2, cnn = 3, ivector = 4 };
const char *model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string &name);

/// Width knobs for the neural architectures. The layer sequences are fixed;
/// these scale them down to desk size (the stock widths are 256/256 units
/// and 32-64-128 filters).
struct NeuralShape {
  int dnn_width = 64;
  int dnn_depth = 2;
  int rnn_units = 32;
  std::vector<int> cnn_filters = {8, 16};
  int steps = 100;       // rnn window length and cnn patch width, in frames
  double dropout = -1.0; // < 0: per-family default; capped at 0.5
};

struct PipelineConfig {
  ModelKind model = ModelKind::gmm;
  FeatureKind feature = FeatureKind::mfcc61;

  GmmTrainConfig gmm;     // per-class models, and the UBM for ivector
  TMatrixConfig tmatrix;  // ivector only
  bool ivector_lda = true;
  IvScoring scoring = IvScoring::cosine;
  bool length_normalize = false;

  TrainConfig train; // neural kinds
  NeuralShape shape;
  double validation_fraction = 0.1; // clip-level early-stopping split

  void validate() const;
};

/// The layer stack the pipeline trains for a neural kind, at the configured
/// widths. At the stock widths this equals the published architectures.
NetSpec pipeline_net_spec(ModelKind kind, const NeuralShape &shape,
                          int feature_dim, int n_classes);

/// One finished classifier: the family tag plus exactly one trained payload
/// and the preprocessing that must travel with it.
struct TrainedModel {
  ModelKind kind = ModelKind::gmm;
  FeatureKind feature = FeatureKind::mfcc61;
  std::vector<std::string> labels;
  Standardizer standardizer; // dim 0 when the family trains on raw frames
  int steps = 0;             // instance length for rnn/cnn

  GmmClassifier gmm;
  IVectorModel ivector;
  std::optional<LoadedNet> net;

  int n_classes() const { return int(labels.size()); }
  void validate() const;
};

/// (label, frames) per training clip.
using LabeledClips = std::vector<std::pair<std::string, DMatrix>>;

/// Trains one model of cfg.model on the given clips. `labels` fixes the
/// class order; every clip label must appear in it. Deterministic in
/// (cfg, clips, seed).
TrainedModel train_model(const PipelineConfig &cfg, const LabeledClips &clips,
                         const std::vector<std::string> &labels,
                         uint64_t seed);

/// Clip-level per-class scores: log-likelihood sums for gmm, mean softmax
/// probabilities for the neural kinds, similarity scores for ivector.
std::vector<double> score_clip(const TrainedModel &model,
                               const DMatrix &frames);

/// score_clip mapped onto the simplex (stable softmax for the score-shaped
/// kinds; the neural kinds already produce distributions).
std::vector<double> predict_clip_probs(const TrainedModel &model,
                                       const DMatrix &frames);

// Serialization: magic "SKP1", family and feature tags, labels,
// standardizer, steps, then the payload in its own module's block format.
void put_model(BinaryWriter &w, const TrainedModel &model);
TrainedModel get_model(BinaryReader &r);
void save_model(const std::filesystem::path &path, const TrainedModel &model);
TrainedModel load_model(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Cross-validation wiring

/// Loads each manifest clip's frames from feature_dir.
LabeledClips load_labeled_clips(const Manifest &m,
                                const std::filesystem::path &feature_dir,
                                FeatureKind kind);

/// A FoldRunner that trains cfg on the train split and scores the held-out
/// clips, reading features from feature_dir.
FoldRunner make_fold_runner(const PipelineConfig &cfg,
                            const std::filesystem::path &feature_dir);

/// Scores every manifest clip with a trained model; cv_accuracy and the id
/// are stamped into the output header.
ModelOutput predict_model_output(const TrainedModel &model, const Manifest &m,
                                 const std::filesystem::path &feature_dir,
                                 const std::string &model_id,
                                 double cv_accuracy);

} // namespace skald
