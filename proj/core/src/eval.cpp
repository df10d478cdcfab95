// SPDX-License-Identifier: Apache-2.0

#include "skald/eval.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "skald/gmm.hpp"
#include "skald/io_util.hpp"
#include "skald/parallel.hpp"

namespace skald {

namespace {

std::vector<std::string> read_lines(const std::filesystem::path &path) {
  const std::vector<uint8_t> bytes = read_file(path);
  std::vector<std::string> lines;
  std::string cur;
  for (uint8_t b : bytes) {
    if (b == '\n') {
      if (!cur.empty() && cur.back() == '\r')
        cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(char(b));
    }
  }
  if (!cur.empty())
    lines.push_back(cur);
  return lines;
}

} // namespace

int Manifest::label_index(const std::string &label) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label)
    throw DataError("unknown label: " + label);
  return int(it - labels.begin());
}

void Manifest::validate() const {
  if (entries.empty())
    throw DataError("manifest has no entries");
  if (!std::is_sorted(labels.begin(), labels.end()) ||
      std::adjacent_find(labels.begin(), labels.end()) != labels.end())
    throw DataError("manifest class list is not sorted and unique");
  std::set<std::string> seen;
  for (const auto &e : entries) {
    if (!seen.insert(e.path).second)
      throw DataError("duplicate clip path: " + e.path);
    label_index(e.label);
  }
}

Manifest make_manifest(std::vector<ManifestEntry> entries) {
  Manifest m;
  m.entries = std::move(entries);
  std::set<std::string> labels;
  for (const auto &e : m.entries)
    labels.insert(e.label);
  m.labels.assign(labels.begin(), labels.end());
  m.validate();
  return m;
}

Manifest load_manifest(const std::filesystem::path &path) {
  const auto lines = read_lines(path);
  std::vector<ManifestEntry> entries;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty())
      continue;
    const size_t tab = lines[i].find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == lines[i].size())
      throw DataError("manifest " + path.string() + " line " +
                      std::to_string(i + 1) + ": expected path<TAB>label");
    entries.push_back({lines[i].substr(0, tab), lines[i].substr(tab + 1)});
  }
  if (entries.empty())
    throw DataError("manifest " + path.string() + " is empty");
  try {
    return make_manifest(std::move(entries));
  } catch (const DataError &e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
}

void save_manifest(const std::filesystem::path &path, const Manifest &m) {
  m.validate();
  std::string out;
  for (const auto &e : m.entries)
    out += e.path + "\t" + e.label + "\n";
  atomic_write_file(path, out);
}

Manifest manifest_subset(const Manifest &m, const std::vector<bool> &keep) {
  if (keep.size() != m.entries.size())
    throw DimensionError("subset mask does not match the manifest");
  Manifest out;
  out.labels = m.labels;
  for (size_t i = 0; i < keep.size(); ++i)
    if (keep[i])
      out.entries.push_back(m.entries[i]);
  return out;
}

void FoldPlan::validate(const Manifest &m) const {
  if (k < 2)
    throw ConfigError("fold plan needs k >= 2");
  if (assignment.size() != m.entries.size())
    throw DimensionError("fold assignment does not match the manifest");
  std::vector<int> counts(size_t(k), 0);
  for (int f : assignment) {
    if (f < 0 || f >= k)
      throw DataError("fold index out of range");
    ++counts[size_t(f)];
  }
  for (int c : counts)
    if (c == 0)
      throw DataError("a fold has no clips");
}

FoldPlan make_folds(const Manifest &m, int k, uint64_t seed) {
  m.validate();
  if (k < 2)
    throw ConfigError("make_folds: k must be at least 2");
  FoldPlan plan;
  plan.k = k;
  plan.assignment.assign(m.entries.size(), -1);
  for (const auto &label : m.labels) {
    std::vector<int> rows;
    for (size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].label == label)
        rows.push_back(int(i));
    if (int(rows.size()) < k)
      throw DataError("class " + label + " has " +
                      std::to_string(rows.size()) + " clips, fewer than k=" +
                      std::to_string(k));
    Rng rng(Rng::mix(seed, fnv1a(label)));
    rng.shuffle(rows);
    for (size_t j = 0; j < rows.size(); ++j)
      plan.assignment[size_t(rows[j])] = int(j % size_t(k));
  }
  plan.validate(m);
  return plan;
}

void save_fold_plan(const std::filesystem::path &path, const FoldPlan &plan,
                    const Manifest &m) {
  plan.validate(m);
  std::string out;
  for (size_t i = 0; i < m.entries.size(); ++i)
    out += m.entries[i].path + "\t" + std::to_string(plan.assignment[i]) +
           "\n";
  atomic_write_file(path, out);
}

FoldPlan load_fold_plan(const std::filesystem::path &path, const Manifest &m) {
  const auto lines = read_lines(path);
  std::map<std::string, int> folds;
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty())
      continue;
    const size_t tab = lines[i].find('\t');
    if (tab == std::string::npos)
      throw DataError("fold plan " + path.string() + " line " +
                      std::to_string(i + 1) + ": expected path<TAB>fold");
    int fold = 0;
    try {
      fold = std::stoi(lines[i].substr(tab + 1));
    } catch (const std::exception &) {
      throw DataError("fold plan " + path.string() + " line " +
                      std::to_string(i + 1) + ": bad fold index");
    }
    if (!folds.emplace(lines[i].substr(0, tab), fold).second)
      throw DataError("fold plan " + path.string() + ": duplicate path at line " +
                      std::to_string(i + 1));
  }
  FoldPlan plan;
  for (const auto &e : m.entries) {
    const auto it = folds.find(e.path);
    if (it == folds.end())
      throw DataError("fold plan " + path.string() + ": no fold for " +
                      e.path);
    plan.assignment.push_back(it->second);
    plan.k = std::max(plan.k, it->second + 1);
  }
  if (folds.size() != m.entries.size())
    throw DataError("fold plan " + path.string() +
                    " lists clips outside the manifest");
  plan.validate(m);
  return plan;
}

const char *aggregation_mode_name(AggregationMode mode) {
  return mode == AggregationMode::sum_log ? "sum_log" : "mean_prob";
}

ClipScore aggregate_clip(const DMatrix &segment_scores, AggregationMode mode) {
  if (segment_scores.rows < 1)
    throw DataError("aggregate_clip: no segments");
  const int s = segment_scores.rows, c = segment_scores.cols;
  ClipScore out;
  out.mode = mode;
  out.scores.assign(size_t(c), 0.0);
  if (mode == AggregationMode::mean_prob) {
    for (int i = 0; i < s; ++i) {
      double row = 0.0;
      for (int j = 0; j < c; ++j) {
        if (segment_scores(i, j) < 0.0)
          throw DataError("aggregate_clip: negative probability");
        row += segment_scores(i, j);
      }
      if (std::abs(row - 1.0) > 1e-6)
        throw DataError("aggregate_clip: segment row is not a distribution");
    }
  }
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < c; ++j)
      out.scores[size_t(j)] += segment_scores(i, j);
  if (mode == AggregationMode::mean_prob)
    for (auto &v : out.scores)
      v /= s;
  return out;
}

EvalReport evaluate(
    const std::map<std::string, std::vector<double>> &predictions,
    const Manifest &truth) {
  truth.validate();
  const int c = truth.n_classes();
  std::vector<std::string> missing;
  for (const auto &e : truth.entries)
    if (!predictions.count(e.path))
      missing.push_back(e.path);
  if (!missing.empty()) {
    std::string msg = "missing predictions for " +
                      std::to_string(missing.size()) + " clips:";
    for (size_t i = 0; i < missing.size() && i < 5; ++i)
      msg += " " + missing[i];
    throw DataError(msg);
  }

  EvalReport report;
  report.labels = truth.labels;
  report.confusion = DMatrix(c, c);
  report.total = truth.size();
  for (const auto &e : truth.entries) {
    const auto &scores = predictions.at(e.path);
    if (int(scores.size()) != c)
      throw DimensionError("prediction for " + e.path + " has " +
                           std::to_string(scores.size()) + " scores, expected " +
                           std::to_string(c));
    const int pred = argmax_score(scores);
    report.confusion(truth.label_index(e.label), pred) += 1.0;
  }
  report.per_class.assign(size_t(c), 0.0);
  double trace = 0.0;
  for (int i = 0; i < c; ++i) {
    double row = 0.0;
    for (int j = 0; j < c; ++j)
      row += report.confusion(i, j);
    report.per_class[size_t(i)] =
        row > 0.0 ? report.confusion(i, i) / row : 0.0;
    trace += report.confusion(i, i);
  }
  report.accuracy = trace / double(report.total);
  return report;
}

std::string format_report(const EvalReport &report) {
  std::ostringstream os;
  os.precision(4);
  os << "overall accuracy: " << report.accuracy * 100.0 << "% ("
     << int64_t(report.accuracy * double(report.total) + 0.5) << "/"
     << report.total << ")\n";
  size_t width = 5;
  for (const auto &l : report.labels)
    width = std::max(width, l.size());
  for (size_t i = 0; i < report.labels.size(); ++i) {
    os << "  " << report.labels[i];
    for (size_t p = report.labels[i].size(); p < width + 2; ++p)
      os << ' ';
    os << report.per_class[i] * 100.0 << "%\n";
  }
  return os.str();
}

void write_class_accuracy_csv(
    const std::filesystem::path &path,
    const std::vector<std::pair<std::string, EvalReport>> &reports) {
  if (reports.empty())
    throw DataError("no reports to export");
  const auto &labels = reports.front().second.labels;
  for (const auto &[name, r] : reports)
    if (r.labels != labels)
      throw DataError("report " + name + " has a different class list");
  std::ostringstream os;
  os.precision(10);
  os << "class";
  for (const auto &[name, r] : reports)
    os << "," << name;
  os << "\n";
  for (size_t i = 0; i < labels.size(); ++i) {
    os << labels[i];
    for (const auto &[name, r] : reports)
      os << "," << r.per_class[i];
    os << "\n";
  }
  os << "overall";
  for (const auto &[name, r] : reports)
    os << "," << r.accuracy;
  os << "\n";
  atomic_write_file(path, os.str());
}

CvResult cv_run(const Manifest &m, const FoldPlan &plan,
                const FoldRunner &runner, uint64_t seed) {
  plan.validate(m);
  CvResult result;
  result.folds.resize(size_t(plan.k));
  parallel_for(size_t(plan.k), [&](size_t f) {
    std::vector<bool> in_train(m.entries.size()), in_eval(m.entries.size());
    for (size_t i = 0; i < m.entries.size(); ++i) {
      in_train[i] = plan.assignment[i] != int(f);
      in_eval[i] = plan.assignment[i] == int(f);
    }
    const Manifest train_part = manifest_subset(m, in_train);
    const Manifest eval_part = manifest_subset(m, in_eval);
    const auto predictions =
        runner(train_part, eval_part, int(f), Rng::mix(seed, uint64_t(f)));
    result.folds[f] = evaluate(predictions, eval_part);
  });
  result.min_accuracy = 1.0;
  result.max_accuracy = 0.0;
  for (const auto &r : result.folds) {
    result.mean_accuracy += r.accuracy;
    result.min_accuracy = std::min(result.min_accuracy, r.accuracy);
    result.max_accuracy = std::max(result.max_accuracy, r.accuracy);
  }
  result.mean_accuracy /= double(plan.k);
  return result;
}

} // namespace skald
