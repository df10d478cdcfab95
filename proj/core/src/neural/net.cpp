// SPDX-License-Identifier: Apache-2.0

#include "skald/neural/net.hpp"

namespace skald {

const char *net_kind_name(NetKind kind) {
  switch (kind) {
  case NetKind::dnn:
    return "dnn";
  case NetKind::rnn:
    return "rnn";
  case NetKind::cnn:
    return "cnn";
  }
  return "unknown";
}

NetKind net_kind_from_name(const std::string &name) {
  if (name == "dnn")
    return NetKind::dnn;
  if (name == "rnn")
    return NetKind::rnn;
  if (name == "cnn")
    return NetKind::cnn;
  throw ConfigError("unknown net kind: " + name);
}

NetSpec build_table1(NetKind kind, const std::vector<int> &input_shape,
                     int n_classes) {
  if (n_classes <= 1)
    throw ConfigError("build_table1: need at least 2 classes");
  NetSpec s;
  switch (kind) {
  case NetKind::dnn:
    if (input_shape.size() != 1)
      throw DimensionError("dnn input must be a flat vector, got " +
                           shape_string(input_shape));
    for (int block = 0; block < 4; ++block) {
      s.layers.push_back(LayerDesc::dense(256));
      s.layers.push_back(LayerDesc::batchnorm());
      s.layers.push_back(LayerDesc::relu());
      s.layers.push_back(LayerDesc::dropout(0.2));
    }
    break;
  case NetKind::rnn:
    if (input_shape.size() != 2)
      throw DimensionError("rnn input must be a T×D sequence, got " +
                           shape_string(input_shape));
    s.layers.push_back(LayerDesc::bigru(256));
    s.layers.push_back(LayerDesc::dropout(0.4));
    s.layers.push_back(LayerDesc::batchnorm());
    break;
  case NetKind::cnn: {
    if (input_shape.size() != 3)
      throw DimensionError("cnn input must be a C×H×W map, got " +
                           shape_string(input_shape));
    const int stage_filters[3] = {32, 64, 128};
    for (int stage = 0; stage < 3; ++stage) {
      for (int rep = 0; rep < 2; ++rep) {
        s.layers.push_back(LayerDesc::conv2d(stage_filters[stage]));
        s.layers.push_back(LayerDesc::batchnorm());
        s.layers.push_back(LayerDesc::relu());
      }
      s.layers.push_back(LayerDesc::maxpool());
      s.layers.push_back(LayerDesc::dropout(0.3));
    }
    s.layers.push_back(LayerDesc::flatten());
    break;
  }
  }
  s.layers.push_back(LayerDesc::dense(n_classes));
  s.layers.push_back(LayerDesc::softmax());
  return s;
}

} // namespace skald
