// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "skald/audio.hpp"
#include "skald/eval.hpp"

namespace skald {

/// Desk-scale synthetic dataset: each class is a distinct acoustic texture
/// (harmonic stack over a resonant noise band), each clip a seeded random
/// draw of phases, gains, and detune around the class recipe.
struct SynthSpec {
  int n_classes = 5;
  int clips_per_class = 20;
  double duration_s = 5.0;
  int sample_rate = 16000;
  uint64_t seed = 1;
  void validate() const;
};

/// Class label for one class index, zero padded so labels sort by index.
std::string synth_label(int class_index);

/// Renders one stereo clip. Deterministic in (spec.seed, class_index,
/// clip_index) alone; clips can be rendered in any order.
AudioClip synth_clip(const SynthSpec &spec, int class_index, int clip_index);

/// Writes every clip as 16-bit WAV plus a manifest.tsv into out_dir and
/// returns the manifest (paths relative to out_dir).
Manifest synth_dataset(const SynthSpec &spec,
                       const std::filesystem::path &out_dir);

} // namespace skald
