// SPDX-License-Identifier: Apache-2.0

#include "skald/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "skald/parallel.hpp"

namespace skald {

namespace {

void hash_field(std::string &acc, const char *name, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s=%.17g;", name, v);
  acc += buf;
}

void hash_field(std::string &acc, const char *name, int v) {
  acc += name;
  acc += '=';
  acc += std::to_string(v);
  acc += ';';
}

void hash_frame(std::string &acc, const FrameConfig &f) {
  hash_field(acc, "win", f.win_sec);
  hash_field(acc, "hop", f.hop_sec);
  hash_field(acc, "nfft", f.n_fft);
}

std::vector<double> softmax(std::span<const double> scores) {
  double top = scores[0];
  for (double s : scores)
    top = std::max(top, s);
  std::vector<double> p(scores.size(), 0.0);
  double total = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scores[i] - top);
    total += p[i];
  }
  for (double &v : p)
    v /= total;
  return p;
}

} // namespace

// ---------------------------------------------------------------------------
// Extraction

uint64_t ExtractConfig::config_hash() const {
  std::string acc;
  acc += feature_kind_name(kind);
  acc += ';';
  acc += channel_view_name(view);
  acc += ';';
  switch (kind) {
  case FeatureKind::mfcc61:
  case FeatureKind::bimfcc183:
    hash_frame(acc, mfcc.frame);
    hash_field(acc, "mels", mfcc.n_mels);
    hash_field(acc, "coeffs", mfcc.n_coeffs);
    hash_field(acc, "dhw", mfcc.delta_half_window);
    hash_field(acc, "layout", int(mfcc.layout));
    hash_field(acc, "fmin", mfcc.fmin);
    hash_field(acc, "fmax", mfcc.fmax);
    break;
  case FeatureKind::logmel60:
  case FeatureKind::logmel200:
    hash_frame(acc, logmel.frame);
    hash_field(acc, "fmin", logmel.fmin);
    hash_field(acc, "fmax", logmel.fmax);
    break;
  case FeatureKind::func983like:
  case FeatureKind::func6klike:
    hash_frame(acc, functional.frame);
    hash_field(acc, "window", functional.window_sec);
    hash_field(acc, "mfcc", functional.n_mfcc);
    hash_field(acc, "mels", functional.n_mels);
    hash_field(acc, "pmin", functional.pitch_fmin);
    hash_field(acc, "pmax", functional.pitch_fmax);
    hash_field(acc, "roll", functional.rolloff_fraction);
    break;
  }
  return fnv1a(acc);
}

FeatureSequence extract_clip_features(const AudioClip &clip,
                                      const ExtractConfig &cfg) {
  switch (cfg.kind) {
  case FeatureKind::mfcc61:
    return mfcc61(channel_view(clip, cfg.view), cfg.mfcc);
  case FeatureKind::bimfcc183:
    return bimfcc(clip, cfg.mfcc);
  case FeatureKind::logmel60:
  case FeatureKind::logmel200: {
    LogMelConfig lm = cfg.logmel;
    lm.n_mels = feature_kind_dim(cfg.kind);
    FeatureSequence seq = logmel(channel_view(clip, cfg.view), lm);
    seq.kind = cfg.kind;
    return seq;
  }
  case FeatureKind::func983like:
  case FeatureKind::func6klike: {
    FunctionalConfig fc = cfg.functional;
    fc.set = cfg.kind == FeatureKind::func983like ? DescriptorSet::compact
                                                  : DescriptorSet::extended;
    FeatureSequence seq = functional_features(channel_view(clip, cfg.view), fc);
    seq.kind = cfg.kind;
    return seq;
  }
  }
  throw ConfigError("unknown feature kind");
}

std::string feature_file_name(const std::string &clip_path) {
  if (clip_path.empty())
    throw DataError("empty clip path");
  std::string flat;
  for (char c : clip_path) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c == '.' || c == '-' ||
                      c == '_';
    flat += keep ? c : '_';
  }
  char suffix[12];
  std::snprintf(suffix, sizeof suffix, "-%08x",
                unsigned(fnv1a(clip_path) & 0xffffffffu));
  return flat + suffix + ".skf";
}

ExtractReport extract_features(const Manifest &m,
                               const std::filesystem::path &audio_root,
                               const ExtractConfig &cfg,
                               const std::filesystem::path &out_dir) {
  m.validate();
  std::filesystem::create_directories(out_dir);
  char hash_hex[20];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                (unsigned long long)cfg.config_hash());

  // Clips are independent, so extraction fans out; per-clip outcomes land
  // in fixed slots and the report is assembled in manifest order.
  enum class Outcome { written, skipped, failed };
  const int n = int(m.entries.size());
  std::vector<Outcome> outcome(m.entries.size(), Outcome::written);
  std::vector<std::string> reason(m.entries.size());
  parallel_for(n, [&](int i) {
    const auto &e = m.entries[size_t(i)];
    try {
      const std::filesystem::path out = out_dir / feature_file_name(e.path);
      if (std::filesystem::exists(out)) {
        const auto meta = read_feature_meta(out);
        const auto it = meta.find("config_hash");
        if (it != meta.end() && it->second == hash_hex) {
          outcome[size_t(i)] = Outcome::skipped;
          return;
        }
      }
      const AudioClip clip = decode_wav(read_file(audio_root / e.path));
      const FeatureSequence seq = extract_clip_features(clip, cfg);
      write_feature_file(out, seq,
                         {{"config_hash", hash_hex}, {"source", e.path}});
    } catch (const Error &err) {
      outcome[size_t(i)] = Outcome::failed;
      reason[size_t(i)] = err.what();
    }
  });

  ExtractReport report;
  for (int i = 0; i < n; ++i) {
    const auto &e = m.entries[size_t(i)];
    switch (outcome[size_t(i)]) {
    case Outcome::written:
      report.written.push_back(e.path);
      break;
    case Outcome::skipped:
      report.skipped.push_back(e.path);
      break;
    case Outcome::failed:
      report.failures.emplace_back(e.path, reason[size_t(i)]);
      break;
    }
  }
  return report;
}

DMatrix load_clip_frames(const std::filesystem::path &feature_dir,
                         const std::string &clip_path, FeatureKind expected) {
  const auto path = feature_dir / feature_file_name(clip_path);
  FeatureSequence seq = read_feature_file(path);
  if (seq.kind != expected)
    throw DataError("feature file " + path.string() + " holds " +
                    feature_kind_name(seq.kind) + ", expected " +
                    feature_kind_name(expected));
  return std::move(seq.frames);
}

// ---------------------------------------------------------------------------
// Model families

const char *model_kind_name(ModelKind kind) {
  switch (kind) {
  case ModelKind::gmm:
    return "gmm";
  case ModelKind::dnn:
    return "dnn";
  case ModelKind::rnn:
    return "rnn";
  case ModelKind::cnn:
    return "cnn";
  case ModelKind::ivector:
    return "ivector";
  }
  return "?";
}

ModelKind model_kind_from_name(const std::string &name) {
  for (ModelKind k : {ModelKind::gmm, ModelKind::dnn, ModelKind::rnn,
                      ModelKind::cnn, ModelKind::ivector})
    if (name == model_kind_name(k))
      return k;
  throw ConfigError("unknown model kind: " + name);
}

void PipelineConfig::validate() const {
  if (shape.dropout > 0.5)
    throw ConfigError("pipeline: dropout rate must be at most 0.5");
  if (model == ModelKind::dnn || model == ModelKind::rnn ||
      model == ModelKind::cnn) {
    train.validate();
    if (shape.dnn_width < 1 || shape.dnn_depth < 1 || shape.rnn_units < 1)
      throw ConfigError("pipeline: neural widths must be positive");
    if (shape.cnn_filters.empty())
      throw ConfigError("pipeline: cnn needs at least one filter stage");
    for (int f : shape.cnn_filters)
      if (f < 1)
        throw ConfigError("pipeline: cnn filter counts must be positive");
    if (shape.steps < 1)
      throw ConfigError("pipeline: steps must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw ConfigError("pipeline: validation fraction must be in [0, 1)");
  }
  if (model == ModelKind::ivector && tmatrix.rank < 1)
    throw ConfigError("pipeline: ivector rank must be positive");
}

NetSpec pipeline_net_spec(ModelKind kind, const NeuralShape &shape,
                          int feature_dim, int n_classes) {
  const auto rate = [&shape](double family_default) {
    return shape.dropout >= 0.0 ? shape.dropout : family_default;
  };
  NetSpec spec;
  switch (kind) {
  case ModelKind::dnn:
    for (int i = 0; i < shape.dnn_depth; ++i) {
      spec.layers.push_back(LayerDesc::dense(shape.dnn_width));
      spec.layers.push_back(LayerDesc::batchnorm());
      spec.layers.push_back(LayerDesc::relu());
      spec.layers.push_back(LayerDesc::dropout(rate(0.2)));
    }
    break;
  case ModelKind::rnn:
    spec.layers.push_back(LayerDesc::bigru(shape.rnn_units));
    spec.layers.push_back(LayerDesc::dropout(rate(0.4)));
    spec.layers.push_back(LayerDesc::batchnorm());
    break;
  case ModelKind::cnn:
    for (int f : shape.cnn_filters) {
      spec.layers.push_back(LayerDesc::conv2d(f));
      spec.layers.push_back(LayerDesc::batchnorm());
      spec.layers.push_back(LayerDesc::relu());
      spec.layers.push_back(LayerDesc::conv2d(f));
      spec.layers.push_back(LayerDesc::batchnorm());
      spec.layers.push_back(LayerDesc::relu());
      spec.layers.push_back(LayerDesc::maxpool());
      spec.layers.push_back(LayerDesc::dropout(rate(0.3)));
    }
    spec.layers.push_back(LayerDesc::flatten());
    break;
  default:
    throw ConfigError("pipeline_net_spec: not a neural kind");
  }
  (void)feature_dim;
  spec.layers.push_back(LayerDesc::dense(n_classes));
  spec.layers.push_back(LayerDesc::softmax());
  return spec;
}

void TrainedModel::validate() const {
  if (labels.size() < 2)
    throw DataError("model needs at least 2 classes");
  switch (kind) {
  case ModelKind::gmm:
    gmm.validate();
    if (gmm.labels != labels)
      throw DataError("gmm label order disagrees with the model");
    break;
  case ModelKind::ivector:
    ivector.validate();
    if (ivector.labels != labels)
      throw DataError("ivector label order disagrees with the model");
    break;
  case ModelKind::dnn:
  case ModelKind::rnn:
  case ModelKind::cnn:
    if (!net.has_value())
      throw DataError("neural model payload missing");
    if (standardizer.dim() == 0)
      throw DataError("neural model lost its standardizer");
    if ((kind == ModelKind::rnn || kind == ModelKind::cnn) && steps < 1)
      throw DataError("sequence model lost its window length");
    break;
  }
}

namespace {

int label_position(const std::vector<std::string> &labels,
                   const std::string &label) {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label)
    throw DataError("clip label '" + label + "' is not in the class list");
  return int(it - labels.begin());
}

void check_clips(const LabeledClips &clips,
                 const std::vector<std::string> &labels) {
  if (clips.empty())
    throw DataError("no training clips");
  if (labels.size() < 2)
    throw DataError("need at least 2 classes");
  if (!std::is_sorted(labels.begin(), labels.end()) ||
      std::adjacent_find(labels.begin(), labels.end()) != labels.end())
    throw DataError("class list must be sorted and unique");
  const int d = clips.front().second.cols;
  std::set<int> seen;
  for (const auto &[label, frames] : clips) {
    if (frames.rows < 1)
      throw DataError("clip of class " + label + " has no frames");
    if (frames.cols != d)
      throw DimensionError("clip feature widths disagree");
    seen.insert(label_position(labels, label));
  }
  if (int(seen.size()) != int(labels.size()))
    throw DataError("some class has no training clips");
}

DMatrix pool_frames(const LabeledClips &clips) {
  int total = 0;
  for (const auto &[label, frames] : clips)
    total += frames.rows;
  DMatrix pooled(total, clips.front().second.cols);
  int at = 0;
  for (const auto &[label, frames] : clips) {
    std::copy(frames.v.begin(), frames.v.end(),
              pooled.v.begin() + size_t(at) * pooled.cols);
    at += frames.rows;
  }
  return pooled;
}

TrainedModel train_gmm_model(const PipelineConfig &cfg,
                             const LabeledClips &clips,
                             const std::vector<std::string> &labels,
                             uint64_t seed) {
  std::vector<std::pair<std::string, DMatrix>> bags;
  for (const auto &label : labels) {
    LabeledClips mine;
    for (const auto &c : clips)
      if (c.first == label)
        mine.push_back(c);
    bags.emplace_back(label, pool_frames(mine));
  }
  GmmTrainConfig gc = cfg.gmm;
  gc.seed = Rng::mix(seed, 0x6337);
  TrainedModel model;
  model.kind = ModelKind::gmm;
  model.feature = cfg.feature;
  model.labels = labels;
  model.gmm = train_classifier(bags, gc);
  return model;
}

TrainedModel train_ivector_model(const PipelineConfig &cfg,
                                 const LabeledClips &clips,
                                 const std::vector<std::string> &labels,
                                 uint64_t seed) {
  GmmTrainConfig uc = cfg.gmm;
  uc.seed = Rng::mix(seed, 0x0B37);
  const GmmFitResult ubm_fit = fit_gmm(pool_frames(clips), uc);

  std::vector<BwStats> stats;
  stats.reserve(clips.size());
  for (const auto &[label, frames] : clips)
    stats.push_back(bw_stats(ubm_fit.model, frames));

  TMatrixConfig tc = cfg.tmatrix;
  tc.seed = Rng::mix(seed, 0x71F0);
  const TMatrixResult tm = train_t_matrix(stats, ubm_fit.model, tc);

  TrainedModel model;
  model.kind = ModelKind::ivector;
  model.feature = cfg.feature;
  model.labels = labels;
  IVectorModel &iv = model.ivector;
  iv.ubm = ubm_fit.model;
  iv.m = make_supervector(ubm_fit.model);
  iv.t = tm.t;
  iv.labels = labels;
  iv.scoring = cfg.scoring;
  iv.length_normalize = cfg.length_normalize;

  DMatrix vectors(int(clips.size()), tc.rank);
  std::vector<int> class_ids;
  for (size_t i = 0; i < clips.size(); ++i) {
    const std::vector<double> w = extract_ivector(iv, stats[i]);
    std::copy(w.begin(), w.end(), vectors.v.begin() + i * size_t(tc.rank));
    class_ids.push_back(label_position(labels, clips[i].first));
  }
  if (cfg.ivector_lda && int(labels.size()) > 2)
    iv.lda = fit_lda(vectors, class_ids, int(labels.size()));

  // Class means live in the scoring space, so build them from embeddings.
  const int p = iv.lda.trained() ? iv.lda.out_dim() : tc.rank;
  iv.class_means = DMatrix(int(labels.size()), p);
  std::vector<int> counts(labels.size(), 0);
  for (size_t i = 0; i < clips.size(); ++i) {
    const std::vector<double> e = ivector_embed(iv, clips[i].second);
    const int c = class_ids[i];
    for (int j = 0; j < p; ++j)
      iv.class_means(c, j) += e[size_t(j)];
    ++counts[size_t(c)];
  }
  for (size_t c = 0; c < labels.size(); ++c)
    for (int j = 0; j < p; ++j)
      iv.class_means(int(c), j) /= double(counts[c]);
  return model;
}

/// Non-overlapping full windows; a short clip yields one window padded by
/// repeating its last frame.
std::vector<std::pair<int, int>> clip_windows(int frames, int steps) {
  std::vector<std::pair<int, int>> spans; // start, length
  if (frames >= steps) {
    for (int s = 0; s + steps <= frames; s += steps)
      spans.emplace_back(s, steps);
  } else {
    spans.emplace_back(0, frames);
  }
  return spans;
}

void fill_window(float *dst, const DMatrix &frames, int start, int length,
                 int steps) {
  const int d = frames.cols;
  for (int t = 0; t < steps; ++t) {
    const int src = start + std::min(t, length - 1);
    for (int j = 0; j < d; ++j)
      dst[size_t(t) * size_t(d) + size_t(j)] = float(frames(src, j));
  }
}

void fill_patch(float *dst, const DMatrix &frames, int start, int length,
                int steps) {
  const int d = frames.cols; // patch rows: feature bins; columns: time
  for (int j = 0; j < d; ++j)
    for (int t = 0; t < steps; ++t) {
      const int src = start + std::min(t, length - 1);
      dst[size_t(j) * size_t(steps) + size_t(t)] = float(frames(src, j));
    }
}

struct InstanceSet {
  Tensor<float> x;
  std::vector<int> labels;
};

InstanceSet build_instances(ModelKind kind, const LabeledClips &clips,
                            const std::vector<size_t> &which,
                            const std::vector<std::string> &labels,
                            const Standardizer &std_map, int steps) {
  const int d = clips.front().second.cols;
  InstanceSet set;
  if (kind == ModelKind::dnn) {
    int total = 0;
    for (size_t i : which)
      total += clips[i].second.rows;
    set.x = Tensor<float>({total, d});
    int at = 0;
    for (size_t i : which) {
      const DMatrix frames = std_map.transform(clips[i].second);
      const int c = label_position(labels, clips[i].first);
      for (int t = 0; t < frames.rows; ++t) {
        for (int j = 0; j < d; ++j)
          set.x.data[size_t(at) * size_t(d) + size_t(j)] =
              float(frames(t, j));
        set.labels.push_back(c);
        ++at;
      }
    }
    return set;
  }

  int total = 0;
  for (size_t i : which)
    total += int(clip_windows(clips[i].second.rows, steps).size());
  if (kind == ModelKind::rnn)
    set.x = Tensor<float>({total, steps, d});
  else
    set.x = Tensor<float>({total, 1, d, steps});
  const size_t stride = size_t(steps) * size_t(d);
  int at = 0;
  for (size_t i : which) {
    const DMatrix frames = std_map.transform(clips[i].second);
    const int c = label_position(labels, clips[i].first);
    for (const auto &[start, length] : clip_windows(frames.rows, steps)) {
      float *dst = set.x.data.data() + size_t(at) * stride;
      if (kind == ModelKind::rnn)
        fill_window(dst, frames, start, length, steps);
      else
        fill_patch(dst, frames, start, length, steps);
      set.labels.push_back(c);
      ++at;
    }
  }
  return set;
}

TrainedModel train_neural_model(const PipelineConfig &cfg,
                                const LabeledClips &clips,
                                const std::vector<std::string> &labels,
                                uint64_t seed) {
  TrainedModel model;
  model.kind = cfg.model;
  model.feature = cfg.feature;
  model.labels = labels;
  model.steps = cfg.shape.steps;
  model.standardizer = Standardizer::fit(pool_frames(clips));

  // Clip-level stratified early-stopping split keeps every frame of a
  // validation clip out of training.
  std::vector<size_t> train_idx, val_idx;
  Rng rng(Rng::mix(seed, 0x5A11D));
  for (size_t c = 0; c < labels.size(); ++c) {
    std::vector<size_t> mine;
    for (size_t i = 0; i < clips.size(); ++i)
      if (clips[i].first == labels[c])
        mine.push_back(i);
    rng.shuffle(mine);
    size_t n_val = size_t(cfg.validation_fraction * double(mine.size()));
    if (n_val >= mine.size())
      n_val = mine.size() - 1;
    for (size_t i = 0; i < mine.size(); ++i)
      (i < n_val ? val_idx : train_idx).push_back(mine[i]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  const int d = clips.front().second.cols;
  InstanceSet train_set = build_instances(cfg.model, clips, train_idx, labels,
                                          model.standardizer, model.steps);
  InstanceSet val_set;
  if (!val_idx.empty())
    val_set = build_instances(cfg.model, clips, val_idx, labels,
                              model.standardizer, model.steps);

  std::vector<int> sample_shape(train_set.x.shape.begin() + 1,
                                train_set.x.shape.end());
  NetSpec spec =
      pipeline_net_spec(cfg.model, cfg.shape, d, int(labels.size()));
  Net<float> net(std::move(spec), sample_shape, Rng::mix(seed, 0x11E7));

  TrainConfig tc = cfg.train;
  tc.seed = Rng::mix(seed, 0x7124);
  Dataset train_ds{std::move(train_set.x), std::move(train_set.labels)};
  Dataset val_ds{std::move(val_set.x), std::move(val_set.labels)};
  train_net(net, train_ds, val_ds, tc);
  model.net.emplace(LoadedNet{std::move(net), tc});
  return model;
}

} // namespace

TrainedModel train_model(const PipelineConfig &cfg, const LabeledClips &clips,
                         const std::vector<std::string> &labels,
                         uint64_t seed) {
  cfg.validate();
  check_clips(clips, labels);
  switch (cfg.model) {
  case ModelKind::gmm:
    return train_gmm_model(cfg, clips, labels, seed);
  case ModelKind::ivector:
    return train_ivector_model(cfg, clips, labels, seed);
  case ModelKind::dnn:
  case ModelKind::rnn:
  case ModelKind::cnn:
    return train_neural_model(cfg, clips, labels, seed);
  }
  throw ConfigError("unknown model kind");
}

std::vector<double> score_clip(const TrainedModel &model,
                               const DMatrix &frames) {
  model.validate();
  if (frames.rows < 1)
    throw DataError("clip has no frames");
  switch (model.kind) {
  case ModelKind::gmm:
    return classify_clip(model.gmm, frames);
  case ModelKind::ivector:
    return ivector_classify(model.ivector, frames);
  default:
    break;
  }

  // Neural kinds: mean softmax output over the clip's instances.
  Net<float> &net = const_cast<TrainedModel &>(model).net->net;
  const Standardizer &sm = model.standardizer;
  if (frames.cols != sm.dim())
    throw DimensionError("clip width " + std::to_string(frames.cols) +
                         " does not match the model's " +
                         std::to_string(sm.dim()));
  const DMatrix std_frames = sm.transform(frames);
  Tensor<float> x;
  int count = 0;
  const int d = frames.cols;
  if (model.kind == ModelKind::dnn) {
    count = frames.rows;
    x = Tensor<float>({count, d});
    for (int t = 0; t < count; ++t)
      for (int j = 0; j < d; ++j)
        x.data[size_t(t) * size_t(d) + size_t(j)] = float(std_frames(t, j));
  } else {
    const auto spans = clip_windows(frames.rows, model.steps);
    count = int(spans.size());
    if (model.kind == ModelKind::rnn)
      x = Tensor<float>({count, model.steps, d});
    else
      x = Tensor<float>({count, 1, d, model.steps});
    const size_t stride = size_t(model.steps) * size_t(d);
    for (int i = 0; i < count; ++i) {
      float *dst = x.data.data() + size_t(i) * stride;
      if (model.kind == ModelKind::rnn)
        fill_window(dst, std_frames, spans[size_t(i)].first,
                    spans[size_t(i)].second, model.steps);
      else
        fill_patch(dst, std_frames, spans[size_t(i)].first,
                   spans[size_t(i)].second, model.steps);
    }
  }
  const Tensor<float> probs = predict_probs(net, x);
  const int c = model.n_classes();
  DMatrix rows(count, c);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < c; ++j)
      rows(i, j) = double(probs.data[size_t(i) * size_t(c) + size_t(j)]);
  return aggregate_clip(rows, AggregationMode::mean_prob).scores;
}

std::vector<double> predict_clip_probs(const TrainedModel &model,
                                       const DMatrix &frames) {
  std::vector<double> s = score_clip(model, frames);
  if (model.kind == ModelKind::gmm || model.kind == ModelKind::ivector)
    return softmax(s);
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_standardizer(BinaryWriter &w, const Standardizer &s) {
  w.put<uint32_t>(uint32_t(s.mean.size()));
  w.put_vec(s.mean);
  w.put_vec(s.stddev);
}

Standardizer get_standardizer(BinaryReader &r) {
  const uint32_t d = r.get<uint32_t>();
  Standardizer s;
  s.mean = r.get_vec<double>(d);
  s.stddev = r.get_vec<double>(d);
  return s;
}

} // namespace

void put_model(BinaryWriter &w, const TrainedModel &model) {
  model.validate();
  w.put_magic("SKP1");
  w.put<uint8_t>(uint8_t(model.kind));
  w.put<uint8_t>(uint8_t(model.feature));
  w.put<uint32_t>(uint32_t(model.labels.size()));
  for (const auto &l : model.labels)
    w.put_string(l);
  put_standardizer(w, model.standardizer);
  w.put<uint32_t>(uint32_t(model.steps));
  switch (model.kind) {
  case ModelKind::gmm:
    put_classifier(w, model.gmm);
    break;
  case ModelKind::ivector:
    put_ivector_model(w, model.ivector);
    break;
  default:
    put_net(w, const_cast<TrainedModel &>(model).net->net,
            model.net->config);
    break;
  }
}

TrainedModel get_model(BinaryReader &r) {
  r.expect_magic("SKP1", "model file");
  TrainedModel model;
  model.kind = ModelKind(r.get<uint8_t>());
  model.feature = FeatureKind(r.get<uint8_t>());
  const uint32_t n = r.get<uint32_t>();
  for (uint32_t i = 0; i < n; ++i)
    model.labels.push_back(r.get_string());
  model.standardizer = get_standardizer(r);
  model.steps = int(r.get<uint32_t>());
  switch (model.kind) {
  case ModelKind::gmm:
    model.gmm = get_classifier(r);
    break;
  case ModelKind::ivector:
    model.ivector = get_ivector_model(r);
    break;
  case ModelKind::dnn:
  case ModelKind::rnn:
  case ModelKind::cnn:
    model.net.emplace(get_net(r));
    break;
  default:
    throw DataError("model file carries an unknown family tag");
  }
  model.validate();
  return model;
}

void save_model(const std::filesystem::path &path, const TrainedModel &model) {
  BinaryWriter w;
  put_model(w, model);
  atomic_write_file(path, w.bytes());
}

TrainedModel load_model(const std::filesystem::path &path) {
  const auto bytes = read_file(path);
  BinaryReader r(bytes);
  TrainedModel model = get_model(r);
  if (!r.at_end())
    throw DataError("model file " + path.string() + " has trailing bytes");
  return model;
}

// ---------------------------------------------------------------------------
// Cross-validation wiring

LabeledClips load_labeled_clips(const Manifest &m,
                                const std::filesystem::path &feature_dir,
                                FeatureKind kind) {
  LabeledClips clips;
  clips.reserve(m.entries.size());
  for (const auto &e : m.entries)
    clips.emplace_back(e.label, load_clip_frames(feature_dir, e.path, kind));
  return clips;
}

FoldRunner make_fold_runner(const PipelineConfig &cfg,
                            const std::filesystem::path &feature_dir) {
  return [cfg, feature_dir](const Manifest &train_m, const Manifest &eval_m,
                            int fold, uint64_t seed) {
    (void)fold;
    const LabeledClips clips =
        load_labeled_clips(train_m, feature_dir, cfg.feature);
    const TrainedModel model =
        train_model(cfg, clips, train_m.labels, seed);
    std::map<std::string, std::vector<double>> predictions;
    for (const auto &e : eval_m.entries) {
      const DMatrix frames =
          load_clip_frames(feature_dir, e.path, cfg.feature);
      predictions[e.path] = predict_clip_probs(model, frames);
    }
    return predictions;
  };
}

ModelOutput predict_model_output(const TrainedModel &model, const Manifest &m,
                                 const std::filesystem::path &feature_dir,
                                 const std::string &model_id,
                                 double cv_accuracy) {
  model.validate();
  m.validate();
  if (m.labels != model.labels)
    throw DataError("manifest classes do not match the model's");
  ModelOutput out;
  out.model_id = model_id;
  out.cv_accuracy = cv_accuracy;
  out.labels = model.labels;
  out.probs = DMatrix(m.size(), model.n_classes());
  for (int i = 0; i < m.size(); ++i) {
    const auto &e = m.entries[size_t(i)];
    out.clip_ids.push_back(e.path);
    const DMatrix frames = load_clip_frames(feature_dir, e.path, model.feature);
    const std::vector<double> p = predict_clip_probs(model, frames);
    for (int j = 0; j < out.probs.cols; ++j)
      out.probs(i, j) = p[size_t(j)];
  }
  out.validate();
  return out;
}

} // namespace skald
