// SPDX-License-Identifier: Apache-2.0

#include "config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "skald/neural/train.hpp"

namespace skald {

namespace {

int parse_int(const std::string &key, const std::string &value) {
  size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception &) {
    throw ConfigError("config key " + key + ": not an integer: " + value);
  }
  if (used != value.size())
    throw ConfigError("config key " + key + ": not an integer: " + value);
  if (v < INT32_MIN || v > INT32_MAX)
    throw ConfigError("config key " + key + ": out of range: " + value);
  return int(v);
}

uint64_t parse_u64(const std::string &key, const std::string &value) {
  size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception &) {
    throw ConfigError("config key " + key + ": not an integer: " + value);
  }
  if (used != value.size() || value.front() == '-')
    throw ConfigError("config key " + key + ": not an unsigned integer: " +
                      value);
  return v;
}

double parse_double(const std::string &key, const std::string &value) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception &) {
    throw ConfigError("config key " + key + ": not a number: " + value);
  }
  if (used != value.size())
    throw ConfigError("config key " + key + ": not a number: " + value);
  return v;
}

bool parse_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1")
    return true;
  if (value == "false" || value == "0")
    return false;
  throw ConfigError("config key " + key + ": not a boolean: " + value);
}

std::vector<int> parse_int_list(const std::string &key,
                                const std::string &value) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(value);
  while (std::getline(is, item, ','))
    out.push_back(parse_int(key, item));
  if (out.empty())
    throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::vector<int> &v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i)
    out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string trim(const std::string &s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

struct KeyDesc {
  const char *key;
  const char *meaning;
};

constexpr KeyDesc kSchema[] = {
    {"seed", "global seed; every stochastic step derives from it"},
    {"jobs", "worker thread cap; 0 uses the hardware count"},
    {"data.root", "audio tree root; SKALD_DATA_ROOT supplies the default"},
    {"feature.kind",
     "mfcc61|bimfcc183|logmel60|logmel200|func983like|func6klike"},
    {"feature.view", "channel for mono front ends: left|right|mid|diff"},
    {"mfcc.win_sec", "analysis window in seconds"},
    {"mfcc.hop_sec", "hop in seconds"},
    {"mfcc.n_fft", "FFT size; 0 picks the next power of two"},
    {"mfcc.n_mels", "mel bands feeding the DCT"},
    {"mfcc.n_coeffs", "static cepstral coefficients"},
    {"mfcc.delta_half_window", "regression half window for deltas"},
    {"mfcc.fmin", "mel range low edge in Hz"},
    {"mfcc.fmax", "mel range high edge in Hz; 0 is Nyquist"},
    {"logmel.win_sec", "analysis window in seconds"},
    {"logmel.hop_sec", "hop in seconds"},
    {"logmel.n_fft", "FFT size; 0 picks the next power of two"},
    {"logmel.fmin", "mel range low edge in Hz"},
    {"logmel.fmax", "mel range high edge in Hz; 0 is Nyquist"},
    {"func.win_sec", "short-frame window in seconds"},
    {"func.hop_sec", "short-frame hop in seconds"},
    {"func.n_fft", "FFT size; 0 picks the next power of two"},
    {"func.window_sec", "functional window in seconds"},
    {"func.n_mfcc", "cepstral coefficients per short frame"},
    {"func.n_mels", "mel bands per short frame"},
    {"func.pitch_fmin", "pitch search floor in Hz"},
    {"func.pitch_fmax", "pitch search ceiling in Hz"},
    {"func.rolloff_fraction", "spectral rolloff energy fraction"},
    {"model.kind", "gmm|dnn|rnn|cnn|ivector"},
    {"gmm.components", "mixture components per class (UBM for ivector)"},
    {"gmm.max_iters", "EM iteration cap"},
    {"gmm.rel_tol", "EM relative log-likelihood stop"},
    {"gmm.kmeans_iters", "k-means initialization iterations"},
    {"gmm.variance_floor_factor", "variance floor, of global variance"},
    {"ivector.rank", "total-variability rank"},
    {"ivector.iters", "T-matrix EM iterations"},
    {"ivector.init_scale", "T initialization scale"},
    {"ivector.lda", "project i-vectors with LDA: true|false"},
    {"ivector.scoring", "cosine|euclidean"},
    {"ivector.length_normalize", "unit-normalize i-vectors: true|false"},
    {"train.optimizer", "sgd|adam|rmsprop|adagrad"},
    {"train.lr", "learning rate; -1 is the per-optimizer default"},
    {"train.momentum", "sgd momentum"},
    {"train.beta1", "adam first-moment decay"},
    {"train.beta2", "adam second-moment decay"},
    {"train.rho", "rmsprop decay"},
    {"train.eps", "optimizer epsilon"},
    {"train.batch_size", "minibatch size"},
    {"train.epochs", "training epochs"},
    {"train.patience", "early-stopping patience; 0 disables"},
    {"train.regularizer", "none|l1|l2"},
    {"train.reg_lambda", "regularizer strength"},
    {"train.validation_fraction", "clip fraction held out per class"},
    {"net.dnn_width", "dense units per hidden layer"},
    {"net.dnn_depth", "dense hidden layers"},
    {"net.rnn_units", "GRU units per direction"},
    {"net.cnn_filters", "comma list of filters per conv stage"},
    {"net.steps", "frames per rnn window / cnn patch"},
    {"net.dropout", "dropout rate; -1 is the per-family default, cap 0.5"},
    {"folds.k", "cross-validation fold count"},
    {"fusion.threshold", "drop models below this CV accuracy"},
    {"fusion.weight_mode", "uniform|accuracy_proportional"},
    {"fusion.bag_count", "bagged subsets to average; 1 disables bagging"},
    {"fusion.bag_fraction", "fraction of models per bag"},
    {"synth.classes", "synthetic class count"},
    {"synth.clips", "clips per class"},
    {"synth.duration", "clip length in seconds"},
    {"synth.sample_rate", "sample rate in Hz"},
};

} // namespace

void RunConfig::apply_one(const std::string &key, const std::string &value) {
  if (key == "seed")
    seed = parse_u64(key, value);
  else if (key == "jobs")
    jobs = parse_int(key, value);
  else if (key == "data.root")
    data_root = value;
  else if (key == "feature.kind") {
    extract.kind = feature_kind_from_name(value);
    pipe.feature = extract.kind;
  } else if (key == "feature.view")
    extract.view = channel_view_from_name(value);
  else if (key == "mfcc.win_sec")
    extract.mfcc.frame.win_sec = parse_double(key, value);
  else if (key == "mfcc.hop_sec")
    extract.mfcc.frame.hop_sec = parse_double(key, value);
  else if (key == "mfcc.n_fft")
    extract.mfcc.frame.n_fft = parse_int(key, value);
  else if (key == "mfcc.n_mels")
    extract.mfcc.n_mels = parse_int(key, value);
  else if (key == "mfcc.n_coeffs")
    extract.mfcc.n_coeffs = parse_int(key, value);
  else if (key == "mfcc.delta_half_window")
    extract.mfcc.delta_half_window = parse_int(key, value);
  else if (key == "mfcc.fmin")
    extract.mfcc.fmin = parse_double(key, value);
  else if (key == "mfcc.fmax")
    extract.mfcc.fmax = parse_double(key, value);
  else if (key == "logmel.win_sec")
    extract.logmel.frame.win_sec = parse_double(key, value);
  else if (key == "logmel.hop_sec")
    extract.logmel.frame.hop_sec = parse_double(key, value);
  else if (key == "logmel.n_fft")
    extract.logmel.frame.n_fft = parse_int(key, value);
  else if (key == "logmel.fmin")
    extract.logmel.fmin = parse_double(key, value);
  else if (key == "logmel.fmax")
    extract.logmel.fmax = parse_double(key, value);
  else if (key == "func.win_sec")
    extract.functional.frame.win_sec = parse_double(key, value);
  else if (key == "func.hop_sec")
    extract.functional.frame.hop_sec = parse_double(key, value);
  else if (key == "func.n_fft")
    extract.functional.frame.n_fft = parse_int(key, value);
  else if (key == "func.window_sec")
    extract.functional.window_sec = parse_double(key, value);
  else if (key == "func.n_mfcc")
    extract.functional.n_mfcc = parse_int(key, value);
  else if (key == "func.n_mels")
    extract.functional.n_mels = parse_int(key, value);
  else if (key == "func.pitch_fmin")
    extract.functional.pitch_fmin = parse_double(key, value);
  else if (key == "func.pitch_fmax")
    extract.functional.pitch_fmax = parse_double(key, value);
  else if (key == "func.rolloff_fraction")
    extract.functional.rolloff_fraction = parse_double(key, value);
  else if (key == "model.kind")
    pipe.model = model_kind_from_name(value);
  else if (key == "gmm.components")
    pipe.gmm.components = parse_int(key, value);
  else if (key == "gmm.max_iters")
    pipe.gmm.max_iters = parse_int(key, value);
  else if (key == "gmm.rel_tol")
    pipe.gmm.rel_tol = parse_double(key, value);
  else if (key == "gmm.kmeans_iters")
    pipe.gmm.kmeans_iters = parse_int(key, value);
  else if (key == "gmm.variance_floor_factor")
    pipe.gmm.variance_floor_factor = parse_double(key, value);
  else if (key == "ivector.rank")
    pipe.tmatrix.rank = parse_int(key, value);
  else if (key == "ivector.iters")
    pipe.tmatrix.iters = parse_int(key, value);
  else if (key == "ivector.init_scale")
    pipe.tmatrix.init_scale = parse_double(key, value);
  else if (key == "ivector.lda")
    pipe.ivector_lda = parse_bool(key, value);
  else if (key == "ivector.scoring")
    pipe.scoring = iv_scoring_from_name(value);
  else if (key == "ivector.length_normalize")
    pipe.length_normalize = parse_bool(key, value);
  else if (key == "train.optimizer")
    pipe.train.optim.kind = optimizer_kind_from_name(value);
  else if (key == "train.lr")
    pipe.train.optim.lr = parse_double(key, value);
  else if (key == "train.momentum")
    pipe.train.optim.momentum = parse_double(key, value);
  else if (key == "train.beta1")
    pipe.train.optim.beta1 = parse_double(key, value);
  else if (key == "train.beta2")
    pipe.train.optim.beta2 = parse_double(key, value);
  else if (key == "train.rho")
    pipe.train.optim.rho = parse_double(key, value);
  else if (key == "train.eps")
    pipe.train.optim.eps = parse_double(key, value);
  else if (key == "train.batch_size")
    pipe.train.batch_size = parse_int(key, value);
  else if (key == "train.epochs")
    pipe.train.epochs = parse_int(key, value);
  else if (key == "train.patience")
    pipe.train.patience = parse_int(key, value);
  else if (key == "train.regularizer")
    pipe.train.reg = regularizer_from_name(value);
  else if (key == "train.reg_lambda")
    pipe.train.reg_lambda = parse_double(key, value);
  else if (key == "train.validation_fraction")
    pipe.validation_fraction = parse_double(key, value);
  else if (key == "net.dnn_width")
    pipe.shape.dnn_width = parse_int(key, value);
  else if (key == "net.dnn_depth")
    pipe.shape.dnn_depth = parse_int(key, value);
  else if (key == "net.rnn_units")
    pipe.shape.rnn_units = parse_int(key, value);
  else if (key == "net.cnn_filters")
    pipe.shape.cnn_filters = parse_int_list(key, value);
  else if (key == "net.steps")
    pipe.shape.steps = parse_int(key, value);
  else if (key == "net.dropout")
    pipe.shape.dropout = parse_double(key, value);
  else if (key == "folds.k")
    folds_k = parse_int(key, value);
  else if (key == "fusion.threshold")
    fusion.threshold = parse_double(key, value);
  else if (key == "fusion.weight_mode")
    fusion.weight_mode = weight_mode_from_name(value);
  else if (key == "fusion.bag_count")
    fusion.bag_count = parse_int(key, value);
  else if (key == "fusion.bag_fraction")
    fusion.bag_fraction = parse_double(key, value);
  else if (key == "synth.classes")
    synth.n_classes = parse_int(key, value);
  else if (key == "synth.clips")
    synth.clips_per_class = parse_int(key, value);
  else if (key == "synth.duration")
    synth.duration_s = parse_double(key, value);
  else if (key == "synth.sample_rate")
    synth.sample_rate = parse_int(key, value);
  else
    throw ConfigError("unknown config key: " + key);
}

void RunConfig::apply(const std::map<std::string, std::string> &kv) {
  for (const auto &[key, value] : kv)
    apply_one(key, value);
}

void RunConfig::validate() const {
  if (jobs < 0)
    throw ConfigError("jobs must be at least 0");
  if (folds_k < 2)
    throw ConfigError("folds.k must be at least 2");
  const FrameConfig *frames[] = {&extract.mfcc.frame, &extract.logmel.frame,
                                 &extract.functional.frame};
  for (const FrameConfig *f : frames) {
    if (f->win_sec <= 0.0 || f->hop_sec <= 0.0)
      throw ConfigError("frame window and hop must be positive");
    if (f->n_fft < 0)
      throw ConfigError("n_fft must be at least 0");
  }
  if (extract.mfcc.n_mels < 1 || extract.mfcc.n_coeffs < 1)
    throw ConfigError("mfcc sizes must be positive");
  if (pipe.gmm.components < 1 || pipe.gmm.max_iters < 1)
    throw ConfigError("gmm sizes must be positive");
  pipe.validate();
  fusion.validate();
  synth.validate();
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["seed"] = fmt(seed);
  kv["jobs"] = fmt(jobs);
  kv["data.root"] = data_root;
  kv["feature.kind"] = feature_kind_name(extract.kind);
  kv["feature.view"] = channel_view_name(extract.view);
  kv["mfcc.win_sec"] = fmt(extract.mfcc.frame.win_sec);
  kv["mfcc.hop_sec"] = fmt(extract.mfcc.frame.hop_sec);
  kv["mfcc.n_fft"] = fmt(extract.mfcc.frame.n_fft);
  kv["mfcc.n_mels"] = fmt(extract.mfcc.n_mels);
  kv["mfcc.n_coeffs"] = fmt(extract.mfcc.n_coeffs);
  kv["mfcc.delta_half_window"] = fmt(extract.mfcc.delta_half_window);
  kv["mfcc.fmin"] = fmt(extract.mfcc.fmin);
  kv["mfcc.fmax"] = fmt(extract.mfcc.fmax);
  kv["logmel.win_sec"] = fmt(extract.logmel.frame.win_sec);
  kv["logmel.hop_sec"] = fmt(extract.logmel.frame.hop_sec);
  kv["logmel.n_fft"] = fmt(extract.logmel.frame.n_fft);
  kv["logmel.fmin"] = fmt(extract.logmel.fmin);
  kv["logmel.fmax"] = fmt(extract.logmel.fmax);
  kv["func.win_sec"] = fmt(extract.functional.frame.win_sec);
  kv["func.hop_sec"] = fmt(extract.functional.frame.hop_sec);
  kv["func.n_fft"] = fmt(extract.functional.frame.n_fft);
  kv["func.window_sec"] = fmt(extract.functional.window_sec);
  kv["func.n_mfcc"] = fmt(extract.functional.n_mfcc);
  kv["func.n_mels"] = fmt(extract.functional.n_mels);
  kv["func.pitch_fmin"] = fmt(extract.functional.pitch_fmin);
  kv["func.pitch_fmax"] = fmt(extract.functional.pitch_fmax);
  kv["func.rolloff_fraction"] = fmt(extract.functional.rolloff_fraction);
  kv["model.kind"] = model_kind_name(pipe.model);
  kv["gmm.components"] = fmt(pipe.gmm.components);
  kv["gmm.max_iters"] = fmt(pipe.gmm.max_iters);
  kv["gmm.rel_tol"] = fmt(pipe.gmm.rel_tol);
  kv["gmm.kmeans_iters"] = fmt(pipe.gmm.kmeans_iters);
  kv["gmm.variance_floor_factor"] = fmt(pipe.gmm.variance_floor_factor);
  kv["ivector.rank"] = fmt(pipe.tmatrix.rank);
  kv["ivector.iters"] = fmt(pipe.tmatrix.iters);
  kv["ivector.init_scale"] = fmt(pipe.tmatrix.init_scale);
  kv["ivector.lda"] = fmt(pipe.ivector_lda);
  kv["ivector.scoring"] = iv_scoring_name(pipe.scoring);
  kv["ivector.length_normalize"] = fmt(pipe.length_normalize);
  kv["train.optimizer"] = optimizer_kind_name(pipe.train.optim.kind);
  kv["train.lr"] = fmt(pipe.train.optim.lr);
  kv["train.momentum"] = fmt(pipe.train.optim.momentum);
  kv["train.beta1"] = fmt(pipe.train.optim.beta1);
  kv["train.beta2"] = fmt(pipe.train.optim.beta2);
  kv["train.rho"] = fmt(pipe.train.optim.rho);
  kv["train.eps"] = fmt(pipe.train.optim.eps);
  kv["train.batch_size"] = fmt(pipe.train.batch_size);
  kv["train.epochs"] = fmt(pipe.train.epochs);
  kv["train.patience"] = fmt(pipe.train.patience);
  kv["train.regularizer"] = regularizer_name(pipe.train.reg);
  kv["train.reg_lambda"] = fmt(pipe.train.reg_lambda);
  kv["train.validation_fraction"] = fmt(pipe.validation_fraction);
  kv["net.dnn_width"] = fmt(pipe.shape.dnn_width);
  kv["net.dnn_depth"] = fmt(pipe.shape.dnn_depth);
  kv["net.rnn_units"] = fmt(pipe.shape.rnn_units);
  kv["net.cnn_filters"] = fmt(pipe.shape.cnn_filters);
  kv["net.steps"] = fmt(pipe.shape.steps);
  kv["net.dropout"] = fmt(pipe.shape.dropout);
  kv["folds.k"] = fmt(folds_k);
  kv["fusion.threshold"] = fmt(fusion.threshold);
  kv["fusion.weight_mode"] = weight_mode_name(fusion.weight_mode);
  kv["fusion.bag_count"] = fmt(fusion.bag_count);
  kv["fusion.bag_fraction"] = fmt(fusion.bag_fraction);
  kv["synth.classes"] = fmt(synth.n_classes);
  kv["synth.clips"] = fmt(synth.clips_per_class);
  kv["synth.duration"] = fmt(synth.duration_s);
  kv["synth.sample_rate"] = fmt(synth.sample_rate);

  std::string out;
  for (const auto &[key, value] : kv)
    out += key + " = " + value + "\n";
  return out;
}

uint64_t RunConfig::stable_hash() const { return fnv1a(canonical()); }

std::map<std::string, std::string>
parse_config_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line.substr(0, line.find('#')));
    if (text.empty())
      continue;
    const size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file " + path.string() + " line " +
                        std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config file " + path.string() + " line " +
                        std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

std::string config_schema() {
  std::string out;
  RunConfig defaults;
  std::istringstream canon(defaults.canonical());
  std::map<std::string, std::string> value_of;
  std::string line;
  while (std::getline(canon, line)) {
    const size_t eq = line.find(" = ");
    value_of[line.substr(0, eq)] = line.substr(eq + 3);
  }
  for (const KeyDesc &d : kSchema) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-26s %-14s %s\n", d.key,
                  value_of[d.key].c_str(), d.meaning);
    out += buf;
  }
  return out;
}

} // namespace skald
