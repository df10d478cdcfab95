// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "skald/neural/layers.hpp"

namespace skald {

enum class OptimizerKind : uint8_t { sgd = 0, adam = 1, rmsprop = 2, adagrad = 3 };
const char *optimizer_kind_name(OptimizerKind kind);
OptimizerKind optimizer_kind_from_name(const std::string &name);

/// lr < 0 selects the per-kind default; an explicit 0 is a valid no-op
/// step.
struct OptimConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = -1.0;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;   // adam
  double rho = 0.9;       // rmsprop
  double eps = 1e-8;

  double resolved_lr() const;
  void validate() const;
};

/// First-order update rules over a fixed parameter list. Per-tensor state
/// is keyed by position, so the same list must be passed to every step.
template <class T> class Optimizer {
public:
  explicit Optimizer(OptimConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void step(const std::vector<NamedParam<T>> &params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].value->data.size(), T(0));
        v_[i].assign(params[i].value->data.size(), T(0));
      }
    }
    if (m_.size() != params.size())
      throw ConfigError("optimizer: parameter list changed between steps");
    ++t_;
    const double lr = cfg_.resolved_lr();
    for (size_t i = 0; i < params.size(); ++i) {
      auto &w = params[i].value->data;
      const auto &g = params[i].grad->data;
      auto &m = m_[i];
      auto &v = v_[i];
      switch (cfg_.kind) {
      case OptimizerKind::sgd:
        for (size_t j = 0; j < w.size(); ++j) {
          m[j] = T(cfg_.momentum) * m[j] - T(lr) * g[j];
          w[j] += m[j];
        }
        break;
      case OptimizerKind::adam: {
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t j = 0; j < w.size(); ++j) {
          m[j] = T(cfg_.beta1) * m[j] + T(1.0 - cfg_.beta1) * g[j];
          v[j] = T(cfg_.beta2) * v[j] + T(1.0 - cfg_.beta2) * g[j] * g[j];
          const double mh = double(m[j]) / c1;
          const double vh = double(v[j]) / c2;
          w[j] -= T(lr * mh / (std::sqrt(vh) + cfg_.eps));
        }
        break;
      }
      case OptimizerKind::rmsprop:
        for (size_t j = 0; j < w.size(); ++j) {
          v[j] = T(cfg_.rho) * v[j] + T(1.0 - cfg_.rho) * g[j] * g[j];
          w[j] -= T(lr * double(g[j]) /
                    (std::sqrt(double(v[j])) + cfg_.eps));
        }
        break;
      case OptimizerKind::adagrad:
        for (size_t j = 0; j < w.size(); ++j) {
          v[j] += g[j] * g[j];
          w[j] -= T(lr * double(g[j]) /
                    (std::sqrt(double(v[j])) + cfg_.eps));
        }
        break;
      }
    }
  }

private:
  OptimConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

} // namespace skald
