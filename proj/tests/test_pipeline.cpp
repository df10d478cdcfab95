// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <set>

#include "skald/io_util.hpp"
#include "skald/pipeline.hpp"
#include "skald/synth.hpp"

using namespace skald;
namespace fs = std::filesystem;

namespace {

/// Three well-separated Gaussian blobs in 8-D; class c sits at 4*e_c.
LabeledClips blob_clips(int per_class, int frames_per_clip, uint64_t seed) {
  LabeledClips clips;
  Rng rng(seed);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per_class; ++i) {
      DMatrix frames(frames_per_clip, 8);
      for (int t = 0; t < frames_per_clip; ++t)
        for (int j = 0; j < 8; ++j)
          frames(t, j) = rng.normal() * 0.4 + (j == c ? 4.0 : 0.0);
      clips.emplace_back("blob" + std::to_string(c), std::move(frames));
    }
  return clips;
}

const std::vector<std::string> kBlobLabels = {"blob0", "blob1", "blob2"};

/// One broad shared cloud; classes differ only by a mean shift. A
/// total-variability model can express shifts of shared components, but
/// not occupancy patterns of disjoint ones, so the ivector test needs
/// this shape rather than blob_clips.
LabeledClips shifted_clips(int per_class, int frames_per_clip,
                           uint64_t seed) {
  LabeledClips clips;
  Rng rng(seed);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < per_class; ++i) {
      DMatrix frames(frames_per_clip, 8);
      for (int t = 0; t < frames_per_clip; ++t)
        for (int j = 0; j < 8; ++j)
          frames(t, j) = rng.normal() + (j == c ? 1.2 : 0.0);
      clips.emplace_back("blob" + std::to_string(c), std::move(frames));
    }
  return clips;
}

int top_class(const std::vector<double> &p) {
  return int(std::max_element(p.begin(), p.end()) - p.begin());
}

double train_accuracy(const TrainedModel &model, const LabeledClips &clips) {
  int correct = 0;
  for (const auto &[label, frames] : clips) {
    const int truth =
        int(std::find(kBlobLabels.begin(), kBlobLabels.end(), label) -
            kBlobLabels.begin());
    if (top_class(predict_clip_probs(model, frames)) == truth)
      ++correct;
  }
  return double(correct) / double(clips.size());
}

PipelineConfig tiny_neural_config(ModelKind kind) {
  PipelineConfig cfg;
  cfg.model = kind;
  cfg.shape.dnn_width = 8;
  cfg.shape.dnn_depth = 1;
  cfg.shape.rnn_units = 6;
  cfg.shape.cnn_filters = {4};
  cfg.shape.steps = 5;
  cfg.train.epochs = 60;
  cfg.train.batch_size = 32;
  cfg.train.optim.kind = OptimizerKind::adam;
  cfg.train.optim.lr = 0.01;
  return cfg;
}

} // namespace

TEST_CASE("feature file names are distinct and stable") {
  const std::string a = feature_file_name("x/one.wav");
  CHECK(a == feature_file_name("x/one.wav"));
  CHECK(a != feature_file_name("x/two.wav"));
  // Flattening alone would collide here; the hash suffix keeps them apart.
  CHECK(feature_file_name("a/b.wav") != feature_file_name("a_b.wav"));
  CHECK(a.ends_with(".skf"));
  CHECK_THROWS_AS(feature_file_name(""), DataError);
}

TEST_CASE("extract config hashes track every knob") {
  ExtractConfig cfg;
  const uint64_t base = cfg.config_hash();
  CHECK(base == cfg.config_hash());

  ExtractConfig other = cfg;
  other.kind = FeatureKind::logmel60;
  CHECK(other.config_hash() != base);

  other = cfg;
  other.mfcc.frame.hop_sec = 0.005;
  CHECK(other.config_hash() != base);

  other = cfg;
  other.view = ChannelView::left;
  CHECK(other.config_hash() != base);

  // Knobs of inactive front ends do not disturb the hash.
  other = cfg;
  other.logmel.fmin = 300.0;
  CHECK(other.config_hash() == base);
}

TEST_CASE("extract_features writes, skips, and isolates failures") {
  const fs::path root = fs::temp_directory_path() / "skald_test_extract";
  fs::remove_all(root);
  const fs::path audio = root / "audio";
  const fs::path feats = root / "feats";

  SynthSpec sspec;
  sspec.n_classes = 2;
  sspec.clips_per_class = 2;
  sspec.duration_s = 0.4;
  sspec.seed = 31;
  Manifest m = synth_dataset(sspec, audio);

  ExtractConfig cfg;
  cfg.kind = FeatureKind::mfcc61;
  ExtractReport r1 = extract_features(m, audio, cfg, feats);
  CHECK(r1.written.size() == 4);
  CHECK(r1.skipped.empty());
  CHECK(r1.failures.empty());

  // Idempotent rerun: hashes match, nothing recomputed.
  ExtractReport r2 = extract_features(m, audio, cfg, feats);
  CHECK(r2.written.empty());
  CHECK(r2.skipped.size() == 4);

  // A config change invalidates the cache.
  ExtractConfig changed = cfg;
  changed.mfcc.frame.hop_sec = 0.02;
  ExtractReport r3 = extract_features(m, audio, changed, feats);
  CHECK(r3.written.size() == 4);

  DMatrix frames = load_clip_frames(feats, m.entries[0].path,
                                    FeatureKind::mfcc61);
  CHECK(frames.cols == 61);
  CHECK(frames.rows > 10);
  CHECK_THROWS_AS(
      load_clip_frames(feats, m.entries[0].path, FeatureKind::logmel60),
      DataError);

  // A mono clip breaks the stereo front end for that clip alone.
  AudioClip mono;
  mono.sample_rate = 16000;
  mono.samples.assign(1, std::vector<double>(6400, 0.1));
  atomic_write_file(audio / "mono.wav", encode_wav(mono, 16));
  std::vector<ManifestEntry> entries(m.entries.begin(), m.entries.end());
  entries.push_back({"mono.wav", m.labels[0]});
  Manifest with_mono = make_manifest(std::move(entries));

  ExtractConfig bi;
  bi.kind = FeatureKind::bimfcc183;
  ExtractReport r4 = extract_features(with_mono, audio, bi, root / "bi");
  CHECK(r4.written.size() == 4);
  REQUIRE(r4.failures.size() == 1);
  CHECK(r4.failures[0].first == "mono.wav");
  fs::remove_all(root);
}

TEST_CASE("gmm pipeline separates the blobs") {
  const LabeledClips clips = blob_clips(4, 30, 3);
  PipelineConfig cfg;
  cfg.model = ModelKind::gmm;
  cfg.gmm.components = 2;
  TrainedModel model = train_model(cfg, clips, kBlobLabels, 5);
  CHECK(model.kind == ModelKind::gmm);
  CHECK(train_accuracy(model, clips) == 1.0);

  const std::vector<double> probs =
      predict_clip_probs(model, clips[0].second);
  double sum = 0.0;
  for (double v : probs) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

  // Scores are per-class log-likelihood sums, so they must all be finite
  // and the winner must match the probability argmax.
  const std::vector<double> scores = score_clip(model, clips[0].second);
  CHECK(top_class(scores) == top_class(probs));
}

TEST_CASE("ivector pipeline separates the blobs") {
  const LabeledClips clips = shifted_clips(6, 40, 7);
  PipelineConfig cfg;
  cfg.model = ModelKind::ivector;
  cfg.gmm.components = 4;
  cfg.tmatrix.rank = 4;
  cfg.tmatrix.iters = 5;
  TrainedModel model = train_model(cfg, clips, kBlobLabels, 9);
  CHECK(model.kind == ModelKind::ivector);
  CHECK(train_accuracy(model, clips) >= 0.9);
}

TEST_CASE("dnn pipeline separates the blobs") {
  const LabeledClips clips = blob_clips(4, 30, 11);
  PipelineConfig cfg = tiny_neural_config(ModelKind::dnn);
  TrainedModel model = train_model(cfg, clips, kBlobLabels, 13);
  CHECK(model.standardizer.dim() == 8);
  CHECK(train_accuracy(model, clips) >= 0.9);
}

TEST_CASE("rnn pipeline separates the blobs") {
  const LabeledClips clips = blob_clips(4, 20, 17);
  PipelineConfig cfg = tiny_neural_config(ModelKind::rnn);
  TrainedModel model = train_model(cfg, clips, kBlobLabels, 19);
  CHECK(model.steps == 5);
  CHECK(train_accuracy(model, clips) >= 0.9);
}

TEST_CASE("cnn pipeline separates the blobs") {
  const LabeledClips clips = blob_clips(4, 20, 23);
  PipelineConfig cfg = tiny_neural_config(ModelKind::cnn);
  TrainedModel model = train_model(cfg, clips, kBlobLabels, 29);
  CHECK(train_accuracy(model, clips) >= 0.9);
}

TEST_CASE("training is deterministic per seed") {
  const LabeledClips clips = blob_clips(3, 15, 41);
  for (ModelKind kind : {ModelKind::gmm, ModelKind::dnn, ModelKind::ivector}) {
    PipelineConfig cfg = tiny_neural_config(kind);
    cfg.model = kind;
    cfg.gmm.components = 2;
    cfg.tmatrix.rank = 3;
    cfg.tmatrix.iters = 3;
    cfg.train.epochs = 5;
    TrainedModel a = train_model(cfg, clips, kBlobLabels, 55);
    TrainedModel b = train_model(cfg, clips, kBlobLabels, 55);
    for (const auto &[label, frames] : clips)
      CHECK(score_clip(a, frames) == score_clip(b, frames));
    // Raw scores, not probabilities: a saturated softmax would mask the
    // difference between distinct fits.
    TrainedModel c = train_model(cfg, clips, kBlobLabels, 56);
    bool any_diff = false;
    for (const auto &[label, frames] : clips)
      if (score_clip(a, frames) != score_clip(c, frames))
        any_diff = true;
    CHECK(any_diff);
  }
}

TEST_CASE("train_model rejects malformed inputs") {
  const LabeledClips clips = blob_clips(2, 10, 47);
  PipelineConfig cfg;
  cfg.model = ModelKind::gmm;
  cfg.gmm.components = 2;

  LabeledClips bad = clips;
  bad[0].first = "martian";
  CHECK_THROWS_AS(train_model(cfg, bad, kBlobLabels, 1), DataError);

  LabeledClips missing;
  for (const auto &c : clips)
    if (c.first != "blob2")
      missing.push_back(c);
  CHECK_THROWS_AS(train_model(cfg, missing, kBlobLabels, 1), DataError);

  CHECK_THROWS_AS(train_model(cfg, {}, kBlobLabels, 1), DataError);

  LabeledClips ragged = clips;
  ragged[1].second = DMatrix(10, 5);
  CHECK_THROWS_AS(train_model(cfg, ragged, kBlobLabels, 1), DimensionError);
}

TEST_CASE("model files round-trip for every family") {
  const fs::path dir = fs::temp_directory_path() / "skald_test_models";
  fs::create_directories(dir);
  const LabeledClips clips = blob_clips(3, 12, 59);
  for (ModelKind kind :
       {ModelKind::gmm, ModelKind::dnn, ModelKind::rnn, ModelKind::cnn,
        ModelKind::ivector}) {
    PipelineConfig cfg = tiny_neural_config(kind);
    cfg.model = kind;
    cfg.gmm.components = 2;
    cfg.tmatrix.rank = 3;
    cfg.tmatrix.iters = 3;
    cfg.train.epochs = 4;
    TrainedModel model = train_model(cfg, clips, kBlobLabels, 61);
    const fs::path path = dir / (std::string(model_kind_name(kind)) + ".skm");
    save_model(path, model);
    TrainedModel back = load_model(path);
    CHECK(back.kind == model.kind);
    CHECK(back.labels == model.labels);
    CHECK(back.steps == model.steps);
    for (const auto &[label, frames] : clips)
      CHECK(predict_clip_probs(back, frames) ==
            predict_clip_probs(model, frames));
    save_model(dir / "again.skm", back);
    CHECK(read_file(dir / "again.skm") == read_file(path));
  }
  fs::remove_all(dir);
}

TEST_CASE("fold runner cross-validates synthetic audio end to end") {
  const fs::path root = fs::temp_directory_path() / "skald_test_cv";
  fs::remove_all(root);
  SynthSpec sspec;
  sspec.n_classes = 2;
  sspec.clips_per_class = 8;
  sspec.duration_s = 0.5;
  sspec.seed = 71;
  Manifest m = synth_dataset(sspec, root / "audio");

  ExtractConfig ec;
  ec.kind = FeatureKind::mfcc61;
  ExtractReport er = extract_features(m, root / "audio", ec, root / "feats");
  REQUIRE(er.failures.empty());

  PipelineConfig cfg;
  cfg.model = ModelKind::gmm;
  cfg.gmm.components = 2;
  cfg.feature = FeatureKind::mfcc61;

  FoldPlan plan = make_folds(m, 2, 3);
  CvResult res = cv_run(m, plan, make_fold_runner(cfg, root / "feats"), 5);
  CHECK(res.folds.size() == 2);
  CHECK(res.mean_accuracy >= 0.9);

  // Final model on everything, then batch prediction over the manifest.
  TrainedModel model = train_model(
      cfg, load_labeled_clips(m, root / "feats", cfg.feature), m.labels, 5);
  ModelOutput out = predict_model_output(model, m, root / "feats",
                                         "gmm_mfcc61", res.mean_accuracy);
  CHECK(out.clip_count() == m.size());
  CHECK(out.cv_accuracy == res.mean_accuracy);

  // Prediction rows are distributions and the row set is order independent.
  std::vector<ManifestEntry> reversed(m.entries.rbegin(), m.entries.rend());
  Manifest rev;
  rev.entries = reversed;
  rev.labels = m.labels;
  ModelOutput out2 = predict_model_output(model, rev, root / "feats",
                                          "gmm_mfcc61", res.mean_accuracy);
  for (int i = 0; i < m.size(); ++i) {
    const int j = m.size() - 1 - i;
    for (int k = 0; k < out.probs.cols; ++k)
      CHECK(out.probs(i, k) == out2.probs(j, k));
  }
  fs::remove_all(root);
}
