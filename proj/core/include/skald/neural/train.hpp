// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "skald/io_util.hpp"
#include "skald/neural/net.hpp"
#include "skald/neural/optim.hpp"

namespace skald {

enum class Regularizer : uint8_t { none = 0, l1 = 1, l2 = 2 };
const char *regularizer_name(Regularizer reg);
Regularizer regularizer_from_name(const std::string &name);

struct TrainConfig {
  OptimConfig optim;
  int batch_size = 64;
  int epochs = 20;
  uint64_t seed = 1;
  Regularizer reg = Regularizer::none;
  double reg_lambda = 0.0;
  int patience = 0; // 0 disables early stopping
  void validate() const;
};

/// x holds N samples along the leading axis; labels are class indices.
struct Dataset {
  Tensor<float> x;
  std::vector<int> labels;
  int size() const { return int(labels.size()); }
  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

/// Mean cross-entropy of softmax outputs against integer labels; the
/// penalty term of the configured regularizer is added by train_net.
double softmax_xent_loss(const Tensor<float> &probs,
                         std::span<const int> labels);

/// Fused softmax + cross-entropy gradient with respect to the logits:
/// (probs - one_hot) / batch.
Tensor<float> softmax_xent_grad(const Tensor<float> &probs,
                                std::span<const int> labels);

/// Regularizer penalty over the regularizable parameters; its gradient
/// (lambda*sign(w) for l1, 2*lambda*w for l2) is added to .grad.
double apply_regularizer(const std::vector<NamedParam<float>> &params,
                         Regularizer reg, double lambda,
                         bool accumulate_grads);

/// Minibatch training with per-epoch seeded shuffling. When a validation
/// set is given, the parameters of the best validation epoch are
/// restored at the end; patience > 0 stops after that many epochs
/// without improvement. Diverging loss raises NumericError with the
/// epoch index.
TrainResult train_net(Net<float> &net, const Dataset &train,
                      const Dataset &validation, const TrainConfig &cfg);

/// Class probabilities for every sample, batched, inference mode.
Tensor<float> predict_probs(Net<float> &net, const Tensor<float> &x,
                            int batch_size = 256);

double evaluate_accuracy(Net<float> &net, const Dataset &ds,
                         int batch_size = 256);

void save_net(const std::filesystem::path &path, Net<float> &net,
              const TrainConfig &cfg);
void put_net(BinaryWriter &w, Net<float> &net, const TrainConfig &cfg);
struct LoadedNet {
  Net<float> net;
  TrainConfig config;
};
LoadedNet load_net(const std::filesystem::path &path);
LoadedNet get_net(BinaryReader &r);

/// history as "epoch,loss,val_accuracy" lines with a header row.
void write_history_csv(const std::filesystem::path &path,
                       const std::vector<EpochStats> &history);

} // namespace skald
