// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Run configuration for the command-line tool.
 *
 * A RunConfig collects every tunable knob of the toolkit: feature front end,
 * model family and hyperparameters, fold and fusion parameters, synthesis
 * spec, the global seed, and the worker cap. It loads from a plain-text
 * key/value tree ("a.b.c = value" lines) and any key can be overridden on
 * the command line; command-line values win. The canonical serialization
 * gives a stable hash, so runs can be tied to the exact configuration that
 * produced them.
 */

#ifndef SKALD_TOOLS_CONFIG_HPP
#define SKALD_TOOLS_CONFIG_HPP

#include <filesystem>
#include <map>
#include <string>

#include "skald/fusion.hpp"
#include "skald/pipeline.hpp"
#include "skald/synth.hpp"

namespace skald {

struct RunConfig {
  uint64_t seed = 1;
  int jobs = 0; // 0: hardware concurrency
  std::string data_root;

  ExtractConfig extract;
  PipelineConfig pipe;
  int folds_k = 4;
  FusionSpec fusion;
  SynthSpec synth;

  /// Applies "key = value" pairs; unknown keys and malformed values are
  /// config errors. Keeps extract.kind and pipe.feature in step.
  void apply(const std::map<std::string, std::string> &kv);
  void apply_one(const std::string &key, const std::string &value);

  /// Full per-module validation; called before a command does any work.
  void validate() const;

  /// Every key in sorted order with its current value, one per line.
  std::string canonical() const;
  uint64_t stable_hash() const;
};

/// Parses a config file: one "key = value" per line, '#' comments, blank
/// lines ignored. Errors carry line numbers.
std::map<std::string, std::string>
parse_config_file(const std::filesystem::path &path);

/// The documented key list, one "key  default  meaning" line each.
std::string config_schema();

} // namespace skald

#endif // SKALD_TOOLS_CONFIG_HPP
