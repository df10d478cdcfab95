// SPDX-License-Identifier: Apache-2.0

#include "skald/neural/optim.hpp"

namespace skald {

const char *optimizer_kind_name(OptimizerKind kind) {
  switch (kind) {
  case OptimizerKind::sgd:
    return "sgd";
  case OptimizerKind::adam:
    return "adam";
  case OptimizerKind::rmsprop:
    return "rmsprop";
  case OptimizerKind::adagrad:
    return "adagrad";
  }
  return "unknown";
}

OptimizerKind optimizer_kind_from_name(const std::string &name) {
  if (name == "sgd")
    return OptimizerKind::sgd;
  if (name == "adam")
    return OptimizerKind::adam;
  if (name == "rmsprop")
    return OptimizerKind::rmsprop;
  if (name == "adagrad")
    return OptimizerKind::adagrad;
  throw ConfigError("unknown optimizer: " + name);
}

double OptimConfig::resolved_lr() const {
  if (lr >= 0.0)
    return lr;
  switch (kind) {
  case OptimizerKind::sgd:
    return 1e-2;
  case OptimizerKind::adam:
    return 1e-3;
  case OptimizerKind::rmsprop:
    return 1e-3;
  case OptimizerKind::adagrad:
    return 1e-2;
  }
  return 1e-3;
}

void OptimConfig::validate() const {
  if (!std::isfinite(resolved_lr()))
    throw ConfigError("optimizer: learning rate must be finite");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("optimizer: momentum must be in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("optimizer: betas must be in [0, 1)");
  if (rho < 0.0 || rho >= 1.0)
    throw ConfigError("optimizer: rho must be in [0, 1)");
  if (eps <= 0.0)
    throw ConfigError("optimizer: eps must be positive");
}

} // namespace skald
