// SPDX-License-Identifier: Apache-2.0

#include "skald/neural/tensor.hpp"

namespace skald {

int64_t shape_numel(const std::vector<int> &shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0)
      throw DimensionError("negative dimension in shape " +
                           shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const std::vector<int> &shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i)
      s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

} // namespace skald
