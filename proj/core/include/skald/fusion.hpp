// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "skald/common.hpp"

namespace skald {

/// Per-clip class probabilities of one trained model, with the CV
/// accuracy used for gating and weighting.
struct ModelOutput {
  std::string model_id;
  double cv_accuracy = 0.0;
  std::vector<std::string> labels;   // class order of the prob columns
  std::vector<std::string> clip_ids; // row order
  DMatrix probs;

  int clip_count() const { return int(clip_ids.size()); }
  void validate() const;
};

enum class WeightMode : uint8_t { uniform = 0, accuracy_proportional = 1 };
const char *weight_mode_name(WeightMode mode);
WeightMode weight_mode_from_name(const std::string &name);

struct FusionSpec {
  double threshold = 0.0;
  WeightMode weight_mode = WeightMode::uniform;
  int bag_count = 1;
  double bag_fraction = 1.0;
  uint64_t seed = 1;
  void validate() const;
};

/// Keeps outputs with cv_accuracy >= threshold, in the given order.
std::vector<ModelOutput> gate_models(const std::vector<ModelOutput> &outputs,
                                     double threshold);

/// Convex combination of outputs covering the same clips and classes;
/// weights are normalized to sum 1.
ModelOutput weighted_average(const std::vector<ModelOutput> &outputs,
                             const std::vector<double> &weights);

/// Gate, then average bag_count seeded subsets of ceil(bag_fraction*M)
/// models each; bag_count=1 with bag_fraction=1 is plain weighted
/// averaging over the gated set.
ModelOutput fuse(const std::vector<ModelOutput> &outputs,
                 const FusionSpec &spec);

/// Interchange text format: a "# model_id=... cv_accuracy=..." comment,
/// a "clip_id,<labels...>" header, then one probability row per clip.
void write_model_output(const std::filesystem::path &path,
                        const ModelOutput &output);
ModelOutput read_model_output(const std::filesystem::path &path);

} // namespace skald
