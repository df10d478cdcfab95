// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "skald/common.hpp"

namespace skald {

struct ManifestEntry {
  std::string path;
  std::string label;
};

/// Clip listing plus the ordered class list (alphabetical, deduplicated).
struct Manifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> labels;

  int size() const { return int(entries.size()); }
  int n_classes() const { return int(labels.size()); }
  int label_index(const std::string &label) const;
  void validate() const;
};

Manifest make_manifest(std::vector<ManifestEntry> entries);

/// Tab-separated "path<TAB>label" lines.
Manifest load_manifest(const std::filesystem::path &path);
void save_manifest(const std::filesystem::path &path, const Manifest &m);

/// Keeps entries with keep[i] set; the class list is inherited unchanged.
Manifest manifest_subset(const Manifest &m, const std::vector<bool> &keep);

/// Stratified fold assignment, parallel to the manifest entries.
struct FoldPlan {
  int k = 0;
  std::vector<int> assignment;
  void validate(const Manifest &m) const;
};

FoldPlan make_folds(const Manifest &m, int k, uint64_t seed);

/// Tab-separated "path<TAB>fold"; loading validates coverage against the
/// manifest, so externally supplied fold files can replace make_folds.
void save_fold_plan(const std::filesystem::path &path, const FoldPlan &plan,
                    const Manifest &m);
FoldPlan load_fold_plan(const std::filesystem::path &path, const Manifest &m);

enum class AggregationMode { sum_log = 0, mean_prob = 1 };
const char *aggregation_mode_name(AggregationMode mode);

struct ClipScore {
  std::vector<double> scores;
  AggregationMode mode = AggregationMode::sum_log;
};

/// Collapses per-segment scores (rows) into one clip-level score vector:
/// sum_log sums rows of log scores, mean_prob averages probability rows.
ClipScore aggregate_clip(const DMatrix &segment_scores, AggregationMode mode);

struct EvalReport {
  std::vector<std::string> labels;
  DMatrix confusion; // rows: truth, cols: prediction, counts
  std::vector<double> per_class;
  double accuracy = 0.0;
  int64_t total = 0;
};

/// Argmax scoring against the manifest truth; score vectors are indexed
/// by the manifest's class order. Ties resolve to the lowest class index.
EvalReport evaluate(const std::map<std::string, std::vector<double>> &predictions,
                    const Manifest &truth);

std::string format_report(const EvalReport &report);

/// Per-class accuracy table, classes as rows and models as columns.
void write_class_accuracy_csv(
    const std::filesystem::path &path,
    const std::vector<std::pair<std::string, EvalReport>> &reports);

struct CvResult {
  std::vector<EvalReport> folds;
  double mean_accuracy = 0.0;
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
};

/// Trains and scores one held-out fold: returns per-clip score vectors
/// (class order = manifest order) for every clip of eval_part.
using FoldRunner = std::function<std::map<std::string, std::vector<double>>(
    const Manifest &train_part, const Manifest &eval_part, int fold,
    uint64_t seed)>;

/// Runs every fold of the plan (in parallel), evaluating each held-out
/// fold with models fit on the remaining folds only.
CvResult cv_run(const Manifest &m, const FoldPlan &plan,
                const FoldRunner &runner, uint64_t seed);

} // namespace skald
