// SPDX-License-Identifier: Apache-2.0

#include "skald/neural/layers.hpp"

namespace skald {

const char *layer_kind_name(LayerKind kind) {
  switch (kind) {
  case LayerKind::dense:
    return "dense";
  case LayerKind::relu:
    return "relu";
  case LayerKind::batchnorm:
    return "batchnorm";
  case LayerKind::dropout:
    return "dropout";
  case LayerKind::conv2d:
    return "conv2d";
  case LayerKind::maxpool:
    return "maxpool";
  case LayerKind::gru:
    return "gru";
  case LayerKind::bigru:
    return "bigru";
  case LayerKind::softmax:
    return "softmax";
  case LayerKind::flatten:
    return "flatten";
  }
  return "unknown";
}

LayerDesc LayerDesc::dense(int units) {
  LayerDesc d;
  d.kind = LayerKind::dense;
  d.units = units;
  return d;
}
LayerDesc LayerDesc::relu() {
  LayerDesc d;
  d.kind = LayerKind::relu;
  return d;
}
LayerDesc LayerDesc::batchnorm() {
  LayerDesc d;
  d.kind = LayerKind::batchnorm;
  return d;
}
LayerDesc LayerDesc::dropout(double rate) {
  LayerDesc d;
  d.kind = LayerKind::dropout;
  d.rate = rate;
  return d;
}
LayerDesc LayerDesc::conv2d(int filters) {
  LayerDesc d;
  d.kind = LayerKind::conv2d;
  d.filters = filters;
  return d;
}
LayerDesc LayerDesc::maxpool() {
  LayerDesc d;
  d.kind = LayerKind::maxpool;
  return d;
}
LayerDesc LayerDesc::gru(int units, bool go_backward, bool return_sequences) {
  LayerDesc d;
  d.kind = LayerKind::gru;
  d.units = units;
  d.go_backward = go_backward;
  d.return_sequences = return_sequences;
  return d;
}
LayerDesc LayerDesc::bigru(int units, bool return_sequences) {
  LayerDesc d;
  d.kind = LayerKind::bigru;
  d.units = units;
  d.return_sequences = return_sequences;
  return d;
}
LayerDesc LayerDesc::softmax() {
  LayerDesc d;
  d.kind = LayerKind::softmax;
  return d;
}
LayerDesc LayerDesc::flatten() {
  LayerDesc d;
  d.kind = LayerKind::flatten;
  return d;
}

void LayerDesc::validate() const {
  switch (kind) {
  case LayerKind::dense:
  case LayerKind::gru:
  case LayerKind::bigru:
    if (units <= 0)
      throw ConfigError(std::string(layer_kind_name(kind)) +
                        ": units must be positive");
    break;
  case LayerKind::dropout:
    if (rate < 0.0 || rate > 0.5)
      throw ConfigError("dropout: rate must be in [0, 0.5]");
    break;
  case LayerKind::conv2d:
    if (filters <= 0)
      throw ConfigError("conv2d: filters must be positive");
    break;
  default:
    break;
  }
}

void NetSpec::validate() const {
  if (layers.empty())
    throw ConfigError("net spec has no layers");
  for (const auto &d : layers)
    d.validate();
  if (layers.back().kind != LayerKind::softmax)
    throw ConfigError("net spec must end with a softmax layer");
}

} // namespace skald
