// SPDX-License-Identifier: Apache-2.0

#include "skald/neural/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace skald {

namespace {

constexpr double kProbFloor = 1e-12;

Tensor<float> gather_batch(const Tensor<float> &x,
                           std::span<const int> rows) {
  std::vector<int> shape = x.shape;
  shape[0] = int(rows.size());
  Tensor<float> out(shape);
  const int64_t stride = shape_numel({x.shape.begin() + 1, x.shape.end()});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(x.data.begin() + int64_t(rows[i]) * stride,
              x.data.begin() + int64_t(rows[i] + 1) * stride,
              out.data.begin() + int64_t(i) * stride);
  return out;
}

std::vector<std::vector<float>>
snapshot(const std::vector<NamedParam<float>> &tensors) {
  std::vector<std::vector<float>> out;
  out.reserve(tensors.size());
  for (const auto &t : tensors)
    out.push_back(t.value->data);
  return out;
}

void restore(const std::vector<NamedParam<float>> &tensors,
             const std::vector<std::vector<float>> &snap) {
  for (size_t i = 0; i < tensors.size(); ++i)
    tensors[i].value->data = snap[i];
}

} // namespace

const char *regularizer_name(Regularizer reg) {
  switch (reg) {
  case Regularizer::none:
    return "none";
  case Regularizer::l1:
    return "l1";
  case Regularizer::l2:
    return "l2";
  }
  return "unknown";
}

Regularizer regularizer_from_name(const std::string &name) {
  if (name == "none")
    return Regularizer::none;
  if (name == "l1")
    return Regularizer::l1;
  if (name == "l2")
    return Regularizer::l2;
  throw ConfigError("unknown regularizer: " + name);
}

void TrainConfig::validate() const {
  optim.validate();
  if (batch_size <= 0)
    throw ConfigError("train: batch_size must be positive");
  if (epochs <= 0)
    throw ConfigError("train: epochs must be positive");
  if (reg != Regularizer::none && reg_lambda < 0.0)
    throw ConfigError("train: regularizer coefficient must be >= 0");
  if (patience < 0)
    throw ConfigError("train: patience must be >= 0");
}

void Dataset::validate() const {
  if (labels.empty())
    throw DataError("dataset is empty");
  if (x.shape.empty() || x.shape[0] != int(labels.size()))
    throw DimensionError("dataset: leading axis " +
                         (x.shape.empty() ? std::string("[]")
                                          : std::to_string(x.shape[0])) +
                         " does not match " + std::to_string(labels.size()) +
                         " labels");
  for (int l : labels)
    if (l < 0)
      throw DataError("dataset: negative label");
}

double softmax_xent_loss(const Tensor<float> &probs,
                         std::span<const int> labels) {
  const int n = probs.shape[0], k = probs.shape[1];
  if (int(labels.size()) != n)
    throw DimensionError("loss: probs rows do not match labels");
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[size_t(i)] >= k)
      throw DataError("loss: label out of range");
    loss -= std::log(
        std::max(double(probs(i, labels[size_t(i)])), kProbFloor));
  }
  return loss / n;
}

Tensor<float> softmax_xent_grad(const Tensor<float> &probs,
                                std::span<const int> labels) {
  const int n = probs.shape[0];
  Tensor<float> g = probs;
  for (auto &v : g.data)
    v /= float(n);
  for (int i = 0; i < n; ++i)
    g(i, labels[size_t(i)]) -= 1.0f / float(n);
  return g;
}

double apply_regularizer(const std::vector<NamedParam<float>> &params,
                         Regularizer reg, double lambda,
                         bool accumulate_grads) {
  if (reg == Regularizer::none || lambda == 0.0)
    return 0.0;
  double penalty = 0.0;
  for (const auto &p : params) {
    if (!p.regularizable)
      continue;
    for (size_t j = 0; j < p.value->data.size(); ++j) {
      const double w = double(p.value->data[j]);
      if (reg == Regularizer::l2) {
        penalty += lambda * w * w;
        if (accumulate_grads)
          p.grad->data[j] += float(2.0 * lambda * w);
      } else {
        penalty += lambda * std::abs(w);
        if (accumulate_grads)
          p.grad->data[j] += float(w > 0.0 ? lambda : (w < 0.0 ? -lambda : 0.0));
      }
    }
  }
  return penalty;
}

TrainResult train_net(Net<float> &net, const Dataset &train,
                      const Dataset &validation, const TrainConfig &cfg) {
  cfg.validate();
  train.validate();
  if (net.spec().layers.back().kind != LayerKind::softmax)
    throw ConfigError("train: net must end with softmax");
  const bool have_val = !validation.labels.empty();
  if (have_val)
    validation.validate();

  const int n = train.size();
  auto params = net.params();
  auto tensors = net.tensors();
  Optimizer<float> opt(cfg.optim);

  TrainResult result;
  std::vector<std::vector<float>> best = snapshot(tensors);
  double best_acc = -1.0;
  std::vector<int> order(size_t(n), 0);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(cfg.seed, 0xE0u + uint64_t(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    int batch_index = 0;
    for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const int stop = std::min(n, start + cfg.batch_size);
      std::span<const int> rows(order.data() + start, size_t(stop - start));
      Tensor<float> bx = gather_batch(train.x, rows);
      std::vector<int> by(rows.size());
      for (size_t i = 0; i < rows.size(); ++i)
        by[i] = train.labels[size_t(rows[i])];

      const uint64_t fseed =
          Rng::mix(cfg.seed, uint64_t(epoch) * 100003u + uint64_t(batch_index));
      Tensor<float> probs = net.forward(bx, NetMode::train, fseed);
      double loss = softmax_xent_loss(probs, by);
      net.zero_grads();
      net.backward(softmax_xent_grad(probs, by), net.n_layers() - 2);
      loss += apply_regularizer(params, cfg.reg, cfg.reg_lambda, true);
      if (!std::isfinite(loss))
        throw NumericError("training diverged at epoch " +
                           std::to_string(epoch));
      opt.step(params);
      epoch_loss += loss * (stop - start);
    }
    epoch_loss /= n;

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = epoch_loss;
    stats.val_accuracy =
        have_val ? evaluate_accuracy(net, validation) : 0.0;
    result.history.push_back(stats);

    if (have_val && stats.val_accuracy > best_acc) {
      best_acc = stats.val_accuracy;
      result.best_epoch = epoch;
      best = snapshot(tensors);
    }
    if (have_val && cfg.patience > 0 &&
        epoch - result.best_epoch >= cfg.patience)
      break;
  }

  if (have_val) {
    restore(tensors, best);
    result.best_val_accuracy = best_acc;
  } else {
    result.best_epoch = int(result.history.size()) - 1;
    result.best_val_accuracy = 0.0;
  }
  return result;
}

Tensor<float> predict_probs(Net<float> &net, const Tensor<float> &x,
                            int batch_size) {
  if (x.shape.empty() || x.shape[0] == 0)
    throw DataError("predict: no samples");
  const int n = x.shape[0];
  Tensor<float> out;
  std::vector<int> rows;
  for (int start = 0; start < n; start += batch_size) {
    const int stop = std::min(n, start + batch_size);
    rows.resize(size_t(stop - start));
    std::iota(rows.begin(), rows.end(), start);
    Tensor<float> probs =
        net.forward(gather_batch(x, rows), NetMode::infer, 0);
    if (start == 0) {
      std::vector<int> shape = probs.shape;
      shape[0] = n;
      out = Tensor<float>(shape);
    }
    std::copy(probs.data.begin(), probs.data.end(),
              out.data.begin() + int64_t(start) * probs.shape[1]);
  }
  return out;
}

double evaluate_accuracy(Net<float> &net, const Dataset &ds, int batch_size) {
  ds.validate();
  Tensor<float> probs = predict_probs(net, ds.x, batch_size);
  const int k = probs.shape[1];
  int correct = 0;
  for (int i = 0; i < ds.size(); ++i) {
    int arg = 0;
    for (int j = 1; j < k; ++j)
      if (probs(i, j) > probs(i, arg))
        arg = j;
    if (arg == ds.labels[size_t(i)])
      ++correct;
  }
  return double(correct) / ds.size();
}

void put_net(BinaryWriter &w, Net<float> &net, const TrainConfig &cfg) {
  w.put_magic("SKN1");
  const auto &spec = net.spec();
  w.put<uint32_t>(uint32_t(spec.layers.size()));
  for (const auto &d : spec.layers) {
    w.put<uint8_t>(uint8_t(d.kind));
    w.put<int32_t>(d.units);
    w.put<double>(d.rate);
    w.put<int32_t>(d.filters);
    w.put<uint8_t>(d.go_backward ? 1 : 0);
    w.put<uint8_t>(d.return_sequences ? 1 : 0);
  }
  const auto &in = net.input_shape();
  w.put<uint32_t>(uint32_t(in.size()));
  for (int d : in)
    w.put<int32_t>(d);
  auto tensors = net.tensors();
  w.put<uint32_t>(uint32_t(tensors.size()));
  for (auto &t : tensors) {
    w.put_string(t.name);
    w.put<uint32_t>(uint32_t(t.value->shape.size()));
    for (int d : t.value->shape)
      w.put<int32_t>(d);
    w.put_vec(t.value->data);
  }
  w.put<uint8_t>(uint8_t(cfg.optim.kind));
  w.put<double>(cfg.optim.lr);
  w.put<double>(cfg.optim.momentum);
  w.put<double>(cfg.optim.beta1);
  w.put<double>(cfg.optim.beta2);
  w.put<double>(cfg.optim.rho);
  w.put<double>(cfg.optim.eps);
  w.put<int32_t>(cfg.batch_size);
  w.put<int32_t>(cfg.epochs);
  w.put<uint64_t>(cfg.seed);
  w.put<uint8_t>(uint8_t(cfg.reg));
  w.put<double>(cfg.reg_lambda);
  w.put<int32_t>(cfg.patience);
}

LoadedNet get_net(BinaryReader &r) {
  r.expect_magic("SKN1", "net model");
  NetSpec spec;
  const uint32_t n_layers = r.get<uint32_t>();
  for (uint32_t i = 0; i < n_layers; ++i) {
    LayerDesc d;
    d.kind = LayerKind(r.get<uint8_t>());
    if (uint8_t(d.kind) > uint8_t(LayerKind::flatten))
      throw DataError("net model: bad layer kind");
    d.units = r.get<int32_t>();
    d.rate = r.get<double>();
    d.filters = r.get<int32_t>();
    d.go_backward = r.get<uint8_t>() != 0;
    d.return_sequences = r.get<uint8_t>() != 0;
    spec.layers.push_back(d);
  }
  std::vector<int> in_shape(r.get<uint32_t>());
  for (auto &d : in_shape)
    d = r.get<int32_t>();

  LoadedNet out{Net<float>(spec, in_shape, 0), TrainConfig{}};
  auto tensors = out.net.tensors();
  const uint32_t n_tensors = r.get<uint32_t>();
  if (n_tensors != tensors.size())
    throw DataError("net model: tensor count does not match spec");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.get_string();
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const auto &t) { return t.name == name; });
    if (it == tensors.end())
      throw DataError("net model: unknown tensor " + name);
    std::vector<int> shape(r.get<uint32_t>());
    for (auto &d : shape)
      d = r.get<int32_t>();
    if (shape != it->value->shape)
      throw DataError("net model: tensor " + name + " has shape " +
                      shape_string(shape) + ", expected " +
                      shape_string(it->value->shape));
    it->value->data = r.get_vec<float>(it->value->data.size());
  }
  out.config.optim.kind = OptimizerKind(r.get<uint8_t>());
  if (uint8_t(out.config.optim.kind) > uint8_t(OptimizerKind::adagrad))
    throw DataError("net model: bad optimizer kind");
  out.config.optim.lr = r.get<double>();
  out.config.optim.momentum = r.get<double>();
  out.config.optim.beta1 = r.get<double>();
  out.config.optim.beta2 = r.get<double>();
  out.config.optim.rho = r.get<double>();
  out.config.optim.eps = r.get<double>();
  out.config.batch_size = r.get<int32_t>();
  out.config.epochs = r.get<int32_t>();
  out.config.seed = r.get<uint64_t>();
  out.config.reg = Regularizer(r.get<uint8_t>());
  if (uint8_t(out.config.reg) > uint8_t(Regularizer::l2))
    throw DataError("net model: bad regularizer");
  out.config.reg_lambda = r.get<double>();
  out.config.patience = r.get<int32_t>();
  return out;
}

void save_net(const std::filesystem::path &path, Net<float> &net,
              const TrainConfig &cfg) {
  BinaryWriter w;
  put_net(w, net, cfg);
  atomic_write_file(path, w.bytes());
}

LoadedNet load_net(const std::filesystem::path &path) {
  const std::vector<uint8_t> bytes = read_file(path);
  BinaryReader r(bytes);
  LoadedNet out = get_net(r);
  if (!r.at_end())
    throw DataError("net model: trailing bytes in " + path.string());
  return out;
}

void write_history_csv(const std::filesystem::path &path,
                       const std::vector<EpochStats> &history) {
  std::ostringstream os;
  os << "epoch,loss,val_accuracy\n";
  os.precision(10);
  for (const auto &e : history)
    os << e.epoch << "," << e.loss << "," << e.val_accuracy << "\n";
  atomic_write_file(path, os.str());
}

} // namespace skald
