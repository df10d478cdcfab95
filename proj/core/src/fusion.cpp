// SPDX-License-Identifier: Apache-2.0

#include "skald/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "skald/io_util.hpp"

namespace skald {

namespace {

void check_plain_token(const std::string &s, const char *what) {
  if (s.empty())
    throw DataError(std::string(what) + " is empty");
  if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos)
    throw DataError(std::string(what) + " '" + s +
                    "' contains a comma or newline");
}

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(line.substr(start));
      return parts;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

} // namespace

void ModelOutput::validate() const {
  if (model_id.empty())
    throw DataError("model output has no model_id");
  if (cv_accuracy < 0.0 || cv_accuracy > 1.0)
    throw DataError("model " + model_id + ": cv_accuracy outside [0, 1]");
  if (labels.empty() || int(labels.size()) != probs.cols)
    throw DimensionError("model " + model_id +
                         ": labels do not match prob columns");
  if (int(clip_ids.size()) != probs.rows)
    throw DimensionError("model " + model_id +
                         ": clip ids do not match prob rows");
  if (clip_ids.empty())
    throw DataError("model " + model_id + " has no clips");
  for (int i = 0; i < probs.rows; ++i) {
    double sum = 0.0;
    for (int j = 0; j < probs.cols; ++j) {
      if (probs(i, j) < 0.0)
        throw DataError("model " + model_id + ": negative probability for " +
                        clip_ids[size_t(i)]);
      sum += probs(i, j);
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw DataError("model " + model_id + ": probabilities for " +
                      clip_ids[size_t(i)] + " sum to " + std::to_string(sum));
  }
}

const char *weight_mode_name(WeightMode mode) {
  return mode == WeightMode::uniform ? "uniform" : "accuracy_proportional";
}

WeightMode weight_mode_from_name(const std::string &name) {
  if (name == "uniform")
    return WeightMode::uniform;
  if (name == "accuracy_proportional")
    return WeightMode::accuracy_proportional;
  throw ConfigError("unknown weight mode: " + name);
}

void FusionSpec::validate() const {
  if (threshold < 0.0 || threshold > 1.0)
    throw ConfigError("fusion: threshold must be in [0, 1]");
  if (bag_count < 1)
    throw ConfigError("fusion: bag_count must be at least 1");
  if (bag_fraction <= 0.0 || bag_fraction > 1.0)
    throw ConfigError("fusion: bag_fraction must be in (0, 1]");
}

std::vector<ModelOutput> gate_models(const std::vector<ModelOutput> &outputs,
                                     double threshold) {
  std::vector<ModelOutput> kept;
  for (const auto &o : outputs) {
    o.validate();
    if (o.cv_accuracy >= threshold)
      kept.push_back(o);
  }
  if (kept.empty())
    throw DataError("no model passes the accuracy threshold " +
                    std::to_string(threshold));
  return kept;
}

ModelOutput weighted_average(const std::vector<ModelOutput> &outputs,
                             const std::vector<double> &weights) {
  if (outputs.empty())
    throw DataError("weighted_average: no outputs");
  if (outputs.size() != weights.size())
    throw DimensionError("weighted_average: weights do not match outputs");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0)
      throw ConfigError("weighted_average: negative weight");
    total += w;
  }
  if (total <= 0.0)
    throw ConfigError("weighted_average: all weights are zero");

  const ModelOutput &ref = outputs.front();
  ref.validate();
  std::map<std::string, int> ref_rows;
  for (int i = 0; i < ref.clip_count(); ++i)
    ref_rows[ref.clip_ids[size_t(i)]] = i;

  ModelOutput fused;
  fused.model_id = "fusion";
  fused.labels = ref.labels;
  fused.clip_ids = ref.clip_ids;
  fused.probs = DMatrix(ref.probs.rows, ref.probs.cols);

  for (size_t k = 0; k < outputs.size(); ++k) {
    const ModelOutput &o = outputs[k];
    o.validate();
    if (o.labels != ref.labels)
      throw DataError("model " + o.model_id + " has a different class list");
    if (o.clip_count() != ref.clip_count())
      throw DataError("model " + o.model_id + " covers a different clip set");
    const double w = weights[k] / total;
    for (int i = 0; i < o.clip_count(); ++i) {
      const auto it = ref_rows.find(o.clip_ids[size_t(i)]);
      if (it == ref_rows.end())
        throw DataError("model " + o.model_id + " covers clip " +
                        o.clip_ids[size_t(i)] + " outside the common set");
      for (int j = 0; j < o.probs.cols; ++j)
        fused.probs(it->second, j) += w * o.probs(i, j);
    }
  }
  return fused;
}

ModelOutput fuse(const std::vector<ModelOutput> &outputs,
                 const FusionSpec &spec) {
  spec.validate();
  const std::vector<ModelOutput> gated = gate_models(outputs, spec.threshold);
  const int m = int(gated.size());

  std::vector<double> weights(size_t(m), 1.0);
  if (spec.weight_mode == WeightMode::accuracy_proportional)
    for (int i = 0; i < m; ++i)
      weights[size_t(i)] = gated[size_t(i)].cv_accuracy;

  const int bag_size = std::min(m, int(std::ceil(spec.bag_fraction * m)));
  ModelOutput fused;
  for (int round = 0; round < spec.bag_count; ++round) {
    Rng rng(Rng::mix(spec.seed, uint64_t(round)));
    std::vector<int> pool(size_t(m), 0);
    for (int i = 0; i < m; ++i)
      pool[size_t(i)] = i;
    for (int i = 0; i < bag_size; ++i) {
      const int j = i + int(rng.uniform_int(uint64_t(m - i)));
      std::swap(pool[size_t(i)], pool[size_t(j)]);
    }
    pool.resize(size_t(bag_size));
    // Ascending order keeps the degenerate full bag bit-identical to a
    // plain weighted average.
    std::sort(pool.begin(), pool.end());

    std::vector<ModelOutput> members;
    std::vector<double> member_weights;
    for (int idx : pool) {
      members.push_back(gated[size_t(idx)]);
      member_weights.push_back(weights[size_t(idx)]);
    }
    const ModelOutput round_out = weighted_average(members, member_weights);
    if (round == 0) {
      fused = round_out;
    } else {
      if (round_out.clip_ids != fused.clip_ids)
        throw DataError("fusion rounds disagree on the clip set");
      for (size_t i = 0; i < fused.probs.v.size(); ++i)
        fused.probs.v[i] += round_out.probs.v[i];
    }
  }
  if (spec.bag_count > 1)
    for (auto &v : fused.probs.v)
      v /= spec.bag_count;
  return fused;
}

void write_model_output(const std::filesystem::path &path,
                        const ModelOutput &output) {
  output.validate();
  check_plain_token(output.model_id, "model_id");
  for (const auto &l : output.labels)
    check_plain_token(l, "label");
  for (const auto &c : output.clip_ids)
    check_plain_token(c, "clip_id");
  std::ostringstream os;
  os.precision(17);
  os << "# model_id=" << output.model_id << " cv_accuracy="
     << output.cv_accuracy << "\n";
  os << "clip_id";
  for (const auto &l : output.labels)
    os << "," << l;
  os << "\n";
  for (int i = 0; i < output.clip_count(); ++i) {
    os << output.clip_ids[size_t(i)];
    for (int j = 0; j < output.probs.cols; ++j)
      os << "," << output.probs(i, j);
    os << "\n";
  }
  atomic_write_file(path, os.str());
}

ModelOutput read_model_output(const std::filesystem::path &path) {
  const std::vector<uint8_t> bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream is(text);
  std::string line;

  ModelOutput out;
  if (!std::getline(is, line) || line.rfind("# model_id=", 0) != 0)
    throw DataError("prediction file " + path.string() +
                    ": missing model_id comment");
  const size_t acc_pos = line.find(" cv_accuracy=");
  if (acc_pos == std::string::npos)
    throw DataError("prediction file " + path.string() +
                    ": missing cv_accuracy");
  out.model_id = line.substr(11, acc_pos - 11);
  try {
    out.cv_accuracy = std::stod(line.substr(acc_pos + 13));
  } catch (const std::exception &) {
    throw DataError("prediction file " + path.string() + ": bad cv_accuracy");
  }

  if (!std::getline(is, line) || line.rfind("clip_id", 0) != 0)
    throw DataError("prediction file " + path.string() + ": missing header");
  auto header = split(line, ',');
  out.labels.assign(header.begin() + 1, header.end());

  std::vector<std::vector<double>> rows;
  size_t line_no = 2;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty())
      continue;
    auto parts = split(line, ',');
    if (parts.size() != out.labels.size() + 1)
      throw DataError("prediction file " + path.string() + " line " +
                      std::to_string(line_no) + ": wrong column count");
    out.clip_ids.push_back(parts[0]);
    std::vector<double> row;
    for (size_t j = 1; j < parts.size(); ++j) {
      try {
        row.push_back(std::stod(parts[j]));
      } catch (const std::exception &) {
        throw DataError("prediction file " + path.string() + " line " +
                        std::to_string(line_no) + ": bad probability");
      }
    }
    rows.push_back(std::move(row));
  }
  out.probs = DMatrix(int(rows.size()), int(out.labels.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      out.probs(int(i), int(j)) = rows[i][j];
  out.validate();
  return out;
}

} // namespace skald
