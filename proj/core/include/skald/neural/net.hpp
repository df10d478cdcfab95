// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "skald/neural/layers.hpp"

namespace skald {

enum class NetMode { train, infer };

enum class NetKind : uint8_t { dnn = 0, rnn = 1, cnn = 2 };
const char *net_kind_name(NetKind kind);
NetKind net_kind_from_name(const std::string &name);

/// Stock architectures: DNN takes a flat feature vector, RNN a T×D
/// sequence, CNN a C×H×W map. n_classes sizes the closing softmax.
NetSpec build_table1(NetKind kind, const std::vector<int> &input_shape,
                     int n_classes = 15);

/// A wired network: spec + parameters + per-layer caches. input_shape is
/// the per-sample shape; batches prepend the batch axis.
template <class T> class Net {
public:
  Net(NetSpec spec, std::vector<int> input_shape, uint64_t seed)
      : spec_(std::move(spec)), in_shape_(std::move(input_shape)) {
    spec_.validate();
    std::vector<int> cur = in_shape_;
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      layers_.push_back(make_layer<T>(spec_.layers[i]));
      in_shapes_.push_back(cur);
      try {
        cur = layers_.back()->wire(cur);
      } catch (const Error &e) {
        throw DimensionError("layer " + std::to_string(i) + ": " + e.what());
      }
      out_shapes_.push_back(cur);
    }
    mark_he_layers();
    for (size_t i = 0; i < layers_.size(); ++i) {
      Rng rng(Rng::mix(seed, 0x1217u + uint64_t(i)));
      layers_[i]->init(rng);
    }
  }

  Tensor<T> forward(const Tensor<T> &batch, NetMode mode, uint64_t seed = 0) {
    check_batch(batch);
    Tensor<T> cur = batch;
    for (size_t i = 0; i < layers_.size(); ++i) {
      cur = layers_[i]->forward(cur, mode == NetMode::train,
                                Rng::mix(seed, 0xD0u + uint64_t(i)));
#ifndef NDEBUG
      if (!cur.finite())
        throw NumericError("layer " + std::to_string(i) + " (" +
                           layer_kind_name(spec_.layers[i].kind) +
                           ") produced a non-finite value");
#endif
    }
    return cur;
  }

  /// Backpropagates from start_layer (default: the last) down to the
  /// input; returns the input gradient. Training starts below the
  /// softmax with the fused cross-entropy gradient probs - one_hot.
  Tensor<T> backward(const Tensor<T> &grad_out, int start_layer = -1) {
    int start = start_layer < 0 ? int(layers_.size()) - 1 : start_layer;
    if (start < 0 || start >= int(layers_.size()))
      throw ConfigError("backward: start layer out of range");
    Tensor<T> cur = grad_out;
    for (int i = start; i >= 0; --i)
      cur = layers_[size_t(i)]->backward(cur);
    return cur;
  }

  std::vector<NamedParam<T>> params() {
    std::vector<NamedParam<T>> out;
    collect(out, false);
    return out;
  }

  /// Trainable parameters plus running state, for serialization and
  /// snapshots.
  std::vector<NamedParam<T>> tensors() {
    std::vector<NamedParam<T>> out;
    collect(out, true);
    return out;
  }

  void zero_grads() {
    for (auto &p : params())
      p.grad->fill(T(0));
  }

  int64_t param_count() {
    int64_t n = 0;
    for (auto &p : params())
      n += p.value->size();
    return n;
  }

  const NetSpec &spec() const { return spec_; }
  const std::vector<int> &input_shape() const { return in_shape_; }
  const std::vector<int> &layer_out_shape(size_t i) const {
    return out_shapes_.at(i);
  }
  int n_layers() const { return int(layers_.size()); }
  Layer<T> &layer(size_t i) { return *layers_.at(i); }

private:
  void check_batch(const Tensor<T> &batch) const {
    bool ok = batch.shape.size() == in_shape_.size() + 1;
    if (ok)
      for (size_t i = 0; i < in_shape_.size(); ++i)
        ok = ok && batch.shape[i + 1] == in_shape_[i];
    if (!ok)
      throw DimensionError("batch shape " + shape_string(batch.shape) +
                           " does not match input " + shape_string(in_shape_));
  }

  /// He init applies where the next activation (looking past batchnorm
  /// and dropout) is a relu.
  void mark_he_layers() {
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerKind k = spec_.layers[i].kind;
      if (k != LayerKind::dense && k != LayerKind::conv2d)
        continue;
      bool he = false;
      for (size_t j = i + 1; j < spec_.layers.size(); ++j) {
        const LayerKind nk = spec_.layers[j].kind;
        if (nk == LayerKind::batchnorm || nk == LayerKind::dropout)
          continue;
        he = nk == LayerKind::relu;
        break;
      }
      if (!he)
        continue;
      if (k == LayerKind::dense)
        static_cast<DenseLayer<T> *>(layers_[i].get())->set_he_init(true);
      else
        static_cast<Conv2dLayer<T> *>(layers_[i].get())->set_he_init(true);
    }
  }

  void collect(std::vector<NamedParam<T>> &out, bool with_state) {
    for (size_t i = 0; i < layers_.size(); ++i) {
      auto add = [&](std::vector<NamedParam<T>> list) {
        for (auto &p : list) {
          p.name = "L" + std::to_string(i) + "." + p.name;
          out.push_back(p);
        }
      };
      add(layers_[i]->params());
      if (with_state)
        add(layers_[i]->state());
    }
  }

  NetSpec spec_;
  std::vector<int> in_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::vector<int>> in_shapes_, out_shapes_;
};

} // namespace skald
