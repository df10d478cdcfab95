// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "config.hpp"
#include "skald/diagnostics.hpp"
#include "skald/parallel.hpp"

namespace skald {

namespace {

/// Flag and config-file state shared by every subcommand. Precedence:
/// built-in defaults, then the config file, then --set pairs, then
/// dedicated flags, each in the order given on the command line.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flag_kv;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty())
      cfg.apply(parse_config_file(config_file));
    for (const std::string &s : sets) {
      const size_t eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set needs key=value, got: " + s);
      cfg.apply_one(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto &[key, value] : flag_kv)
      cfg.apply_one(key, value);
    if (cfg.data_root.empty())
      if (const char *env = std::getenv("SKALD_DATA_ROOT"))
        cfg.data_root = env;
    cfg.validate();
    set_max_jobs(cfg.jobs);
    return cfg;
  }
};

/// Binds a dedicated flag to a config key; the raw string goes through the
/// same parser as config-file values.
void add_kv(CLI::App *cmd, Common &c, const std::string &flag,
            const std::string &key, const std::string &desc) {
  cmd->add_option_function<std::string>(
      flag,
      [&c, key](const std::string &v) { c.flag_kv.emplace_back(key, v); },
      desc);
}

void add_common(CLI::App *cmd, Common &c) {
  cmd->add_option("--config", c.config_file,
                  "key/value config file (see --schema)");
  cmd->add_option("--set", c.sets, "config override key=value, repeatable");
  add_kv(cmd, c, "--seed", "seed", "global seed");
  add_kv(cmd, c, "--jobs", "jobs", "worker thread cap, 0 = hardware");
}

std::string stem_of(const std::string &path) {
  return std::filesystem::path(path).stem().string();
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Audio root: explicit flag, else data.root (config or SKALD_DATA_ROOT),
/// else the current directory.
std::string resolve_audio_root(const std::string &flag_value,
                               const RunConfig &cfg) {
  if (!flag_value.empty())
    return flag_value;
  if (!cfg.data_root.empty())
    return cfg.data_root;
  return ".";
}

int cmd_synth(const RunConfig &cfg, const std::string &out_dir) {
  SynthSpec spec = cfg.synth;
  spec.seed = cfg.seed;
  const Manifest m = synth_dataset(spec, out_dir);
  std::printf("wrote %d clips in %d classes to %s\n", m.size(),
              m.n_classes(), out_dir.c_str());
  return kExitOk;
}

int cmd_extract(const RunConfig &cfg, const std::string &manifest_path,
                const std::string &audio_root, const std::string &out_dir) {
  const Manifest m = load_manifest(manifest_path);
  const ExtractReport report =
      extract_features(m, audio_root, cfg.extract, out_dir);
  std::printf("extracted %zu, up to date %zu, failed %zu\n",
              report.written.size(), report.skipped.size(),
              report.failures.size());
  for (const auto &[path, reason] : report.failures)
    std::fprintf(stderr, "failed %s: %s\n", path.c_str(), reason.c_str());
  return report.failures.empty() ? kExitOk : kExitPartial;
}

int cmd_folds(const RunConfig &cfg, const std::string &manifest_path,
              const std::string &out_path) {
  const Manifest m = load_manifest(manifest_path);
  const FoldPlan plan = make_folds(m, cfg.folds_k, cfg.seed);
  save_fold_plan(out_path, plan, m);
  std::printf("assigned %d clips to %d folds\n", m.size(), plan.k);
  return kExitOk;
}

int cmd_train(const RunConfig &cfg, const std::string &manifest_path,
              const std::string &feature_dir, const std::string &model_out,
              const std::string &plan_path, const std::string &report_path,
              const std::string &csv_path) {
  const Manifest m = load_manifest(manifest_path);
  const FoldPlan plan = plan_path.empty()
                            ? make_folds(m, cfg.folds_k, cfg.seed)
                            : load_fold_plan(plan_path, m);

  const CvResult res =
      cv_run(m, plan, make_fold_runner(cfg.pipe, feature_dir), cfg.seed);
  for (size_t f = 0; f < res.folds.size(); ++f)
    std::printf("fold %zu accuracy %.4f\n", f, res.folds[f].accuracy);
  std::printf("mean accuracy %.4f (min %.4f, max %.4f)\n", res.mean_accuracy,
              res.min_accuracy, res.max_accuracy);

  const LabeledClips clips =
      load_labeled_clips(m, feature_dir, cfg.pipe.feature);
  const TrainedModel model = train_model(cfg.pipe, clips, m.labels, cfg.seed);
  save_model(model_out, model);

  std::string meta;
  meta += "model_id = " + stem_of(model_out) + "\n";
  meta += "cv_accuracy = " + fmt17(res.mean_accuracy) + "\n";
  meta += std::string("feature = ") + feature_kind_name(model.feature) + "\n";
  char hash_hex[20];
  std::snprintf(hash_hex, sizeof hash_hex, "%016llx",
                (unsigned long long)cfg.stable_hash());
  meta += std::string("config_hash = ") + hash_hex + "\n";
  atomic_write_file(model_out + ".meta", meta);

  if (!report_path.empty()) {
    std::string out;
    out += std::string("config_hash = ") + hash_hex + "\n";
    out += "folds = " + std::to_string(plan.k) + "\n\n";
    for (size_t f = 0; f < res.folds.size(); ++f) {
      out += "fold " + std::to_string(f) + " accuracy = " +
             fmt17(res.folds[f].accuracy) + "\n";
      out += format_report(res.folds[f]);
      out += "\n";
    }
    out += "mean accuracy = " + fmt17(res.mean_accuracy) + "\n";
    out += "min accuracy = " + fmt17(res.min_accuracy) + "\n";
    out += "max accuracy = " + fmt17(res.max_accuracy) + "\n";
    atomic_write_file(report_path, out);
  }
  if (!csv_path.empty()) {
    std::vector<std::pair<std::string, EvalReport>> reports;
    for (size_t f = 0; f < res.folds.size(); ++f)
      reports.emplace_back("fold" + std::to_string(f), res.folds[f]);
    write_class_accuracy_csv(csv_path, reports);
  }
  std::printf("saved model to %s\n", model_out.c_str());
  return kExitOk;
}

int cmd_predict(const std::string &model_path, const std::string &manifest_path,
                const std::string &feature_dir, const std::string &out_path,
                std::string model_id, std::string cv_accuracy_flag) {
  const TrainedModel model = load_model(model_path);
  const Manifest m = load_manifest(manifest_path);

  double cv_accuracy = 0.0;
  const std::string meta_path = model_path + ".meta";
  if (std::filesystem::exists(meta_path)) {
    const auto meta = parse_config_file(meta_path);
    if (model_id.empty() && meta.count("model_id"))
      model_id = meta.at("model_id");
    if (cv_accuracy_flag.empty() && meta.count("cv_accuracy"))
      cv_accuracy_flag = meta.at("cv_accuracy");
  }
  if (model_id.empty())
    model_id = stem_of(model_path);
  if (!cv_accuracy_flag.empty()) {
    size_t used = 0;
    cv_accuracy = std::stod(cv_accuracy_flag, &used);
    if (used != cv_accuracy_flag.size())
      throw ConfigError("cv accuracy is not a number: " + cv_accuracy_flag);
  }

  const ModelOutput out =
      predict_model_output(model, m, feature_dir, model_id, cv_accuracy);
  write_model_output(out_path, out);
  std::printf("wrote %d prediction rows to %s\n", out.clip_count(),
              out_path.c_str());
  return kExitOk;
}

int cmd_fuse(const RunConfig &cfg, const std::vector<std::string> &inputs,
             const std::string &out_path) {
  std::vector<ModelOutput> outputs;
  outputs.reserve(inputs.size());
  for (const std::string &path : inputs)
    outputs.push_back(read_model_output(path));
  FusionSpec spec = cfg.fusion;
  spec.seed = cfg.seed;
  const ModelOutput fused = fuse(outputs, spec);
  write_model_output(out_path, fused);
  std::printf("fused %zu outputs into %s\n", outputs.size(),
              out_path.c_str());
  return kExitOk;
}

int cmd_report(const std::string &predictions_path,
               const std::string &manifest_path, const std::string &csv_path) {
  const ModelOutput out = read_model_output(predictions_path);
  const Manifest m = load_manifest(manifest_path);
  if (out.labels != m.labels)
    throw DataError("prediction classes do not match the manifest");
  std::map<std::string, std::vector<double>> predictions;
  for (int i = 0; i < out.clip_count(); ++i) {
    std::vector<double> row(size_t(out.probs.cols));
    for (int j = 0; j < out.probs.cols; ++j)
      row[size_t(j)] = out.probs(i, j);
    predictions[out.clip_ids[size_t(i)]] = std::move(row);
  }
  const EvalReport report = evaluate(predictions, m);
  std::fputs(format_report(report).c_str(), stdout);
  if (!csv_path.empty())
    write_class_accuracy_csv(csv_path, {{out.model_id, report}});
  return kExitOk;
}

Net<float> &model_net(const TrainedModel &model, const char *analysis) {
  if (!model.net.has_value())
    throw ConfigError(std::string(analysis) + " needs a neural model, got " +
                      model_kind_name(model.kind));
  return const_cast<TrainedModel &>(model).net->net;
}

int cmd_inspect(const std::string &model_path, const std::string &analysis,
                const std::string &out_path, int layer,
                const std::string &feature_dir, const std::string &clip,
                const std::string &grid_path, int window, int order) {
  if (analysis == "weight_fft") {
    const TrainedModel model = load_model(model_path);
    Net<float> &net = model_net(model, "weight_fft");
    std::vector<int> dense_layers;
    for (int i = 0; i < net.n_layers(); ++i)
      if (net.layer(size_t(i)).kind() == LayerKind::dense)
        dense_layers.push_back(i);
    if (layer < 0 || layer >= int(dense_layers.size()))
      throw ConfigError("dense layer index out of range; model has " +
                        std::to_string(dense_layers.size()));
    const auto params = net.layer(size_t(dense_layers[size_t(layer)])).params();
    const Tensor<float> &w = *params.at(0).value; // {in_dim, units}
    const int in_dim = w.shape[0], units = w.shape[1];
    DMatrix rows(units, in_dim);
    for (int u = 0; u < units; ++u)
      for (int j = 0; j < in_dim; ++j)
        rows(u, j) = double(w.data[size_t(j) * size_t(units) + size_t(u)]);
    const DMatrix grid = weight_spectrum(rows);
    write_grid_tsv(out_path, grid);
    std::printf("wrote %d x %d magnitude grid to %s\n", grid.rows, grid.cols,
                out_path.c_str());
    return kExitOk;
  }
  if (analysis == "activation") {
    if (feature_dir.empty() || clip.empty())
      throw ConfigError("activation needs --features and --clip");
    const TrainedModel model = load_model(model_path);
    Net<float> &net = model_net(model, "activation");
    const DMatrix frames = load_clip_frames(feature_dir, clip, model.feature);
    const DMatrix std_frames = model.standardizer.transform(frames);
    Tensor<float> seq({frames.rows, frames.cols});
    for (int t = 0; t < frames.rows; ++t)
      for (int j = 0; j < frames.cols; ++j)
        seq.data[size_t(t) * size_t(frames.cols) + size_t(j)] =
            float(std_frames(t, j));
    const DMatrix grid = activation_trace(net, layer, seq);
    write_grid_tsv(out_path, grid);
    std::printf("wrote %d x %d activation grid to %s\n", grid.rows,
                grid.cols, out_path.c_str());
    return kExitOk;
  }
  if (analysis == "smooth") {
    if (grid_path.empty())
      throw ConfigError("smooth needs --grid");
    const DMatrix grid = read_grid_tsv(grid_path);
    DMatrix smoothed(grid.rows, grid.cols);
    for (int i = 0; i < grid.rows; ++i) {
      std::vector<double> row(size_t(grid.cols));
      for (int j = 0; j < grid.cols; ++j)
        row[size_t(j)] = grid(i, j);
      const std::vector<double> s = savgol_smooth(row, window, order);
      for (int j = 0; j < grid.cols; ++j)
        smoothed(i, j) = s[size_t(j)];
    }
    write_grid_tsv(out_path, smoothed);
    std::printf("wrote %d x %d smoothed grid to %s\n", smoothed.rows,
                smoothed.cols, out_path.c_str());
    return kExitOk;
  }
  throw ConfigError("unknown analysis: " + analysis +
                    " (expected weight_fft, activation, or smooth)");
}

} // namespace

int run_cli(int argc, const char *const *argv) {
  CLI::App app{"acoustic scene classification toolkit"};
  app.require_subcommand(0, 1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  bool show_schema = false;
  app.add_flag("--schema", show_schema, "print the config key reference");

  Common common;
  int rc = kExitOk;

  CLI::App *synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  synth->add_option("--out", synth_out, "output directory")->required();
  add_common(synth, common);
  add_kv(synth, common, "--classes", "synth.classes", "class count");
  add_kv(synth, common, "--clips", "synth.clips", "clips per class");
  add_kv(synth, common, "--duration", "synth.duration", "clip seconds");
  add_kv(synth, common, "--rate", "synth.sample_rate", "sample rate");
  synth->callback(
      [&] { rc = cmd_synth(common.resolve(), synth_out); });

  CLI::App *extract =
      app.add_subcommand("extract", "compute features for a manifest");
  std::string ex_manifest, ex_root, ex_out;
  extract->add_option("--manifest", ex_manifest, "manifest tsv")->required();
  extract->add_option("--out", ex_out, "feature directory")->required();
  extract->add_option("--audio-root", ex_root,
                      "audio tree root (default: data.root, then '.')");
  add_common(extract, common);
  add_kv(extract, common, "--feature", "feature.kind", "feature kind");
  extract->callback([&] {
    const RunConfig cfg = common.resolve();
    rc = cmd_extract(cfg, ex_manifest, resolve_audio_root(ex_root, cfg),
                     ex_out);
  });

  CLI::App *folds =
      app.add_subcommand("folds", "write a stratified fold plan");
  std::string fo_manifest, fo_out;
  folds->add_option("--manifest", fo_manifest, "manifest tsv")->required();
  folds->add_option("--out", fo_out, "fold plan tsv")->required();
  add_common(folds, common);
  add_kv(folds, common, "--k", "folds.k", "fold count");
  folds->callback(
      [&] { rc = cmd_folds(common.resolve(), fo_manifest, fo_out); });

  CLI::App *train =
      app.add_subcommand("train", "cross-validate and fit a model");
  std::string tr_manifest, tr_features, tr_out, tr_plan, tr_report, tr_csv;
  train->add_option("--manifest", tr_manifest, "manifest tsv")->required();
  train->add_option("--features", tr_features, "feature directory")
      ->required();
  train->add_option("--out", tr_out, "model file to write")->required();
  train->add_option("--folds", tr_plan, "fold plan tsv (default: derive)");
  train->add_option("--report", tr_report, "per-fold report file");
  train->add_option("--csv", tr_csv, "per-class accuracy csv");
  add_common(train, common);
  add_kv(train, common, "--model", "model.kind", "model family");
  add_kv(train, common, "--feature", "feature.kind", "feature kind");
  add_kv(train, common, "--k", "folds.k", "fold count");
  add_kv(train, common, "--epochs", "train.epochs", "training epochs");
  add_kv(train, common, "--components", "gmm.components", "gmm components");
  add_kv(train, common, "--rank", "ivector.rank", "ivector rank");
  train->callback([&] {
    rc = cmd_train(common.resolve(), tr_manifest, tr_features, tr_out,
                   tr_plan, tr_report, tr_csv);
  });

  CLI::App *predict =
      app.add_subcommand("predict", "score a manifest with a model");
  std::string pr_model, pr_manifest, pr_features, pr_out, pr_id, pr_acc;
  predict->add_option("--model", pr_model, "model file")->required();
  predict->add_option("--manifest", pr_manifest, "manifest tsv")->required();
  predict->add_option("--features", pr_features, "feature directory")
      ->required();
  predict->add_option("--out", pr_out, "prediction file to write")
      ->required();
  predict->add_option("--model-id", pr_id,
                      "header id (default: model meta, then file stem)");
  predict->add_option("--cv-accuracy", pr_acc,
                      "header accuracy (default: model meta, then 0)");
  predict->callback([&] {
    rc = cmd_predict(pr_model, pr_manifest, pr_features, pr_out, pr_id,
                     pr_acc);
  });

  CLI::App *fuse_cmd =
      app.add_subcommand("fuse", "average prediction files");
  std::vector<std::string> fu_inputs;
  std::string fu_out;
  fuse_cmd->add_option("inputs", fu_inputs, "prediction files")
      ->required()
      ->expected(-1);
  fuse_cmd->add_option("--out", fu_out, "fused prediction file")->required();
  add_common(fuse_cmd, common);
  add_kv(fuse_cmd, common, "--threshold", "fusion.threshold",
         "gate below this cv accuracy");
  add_kv(fuse_cmd, common, "--weight-mode", "fusion.weight_mode",
         "uniform|accuracy_proportional");
  add_kv(fuse_cmd, common, "--bags", "fusion.bag_count", "bagged subsets");
  add_kv(fuse_cmd, common, "--bag-fraction", "fusion.bag_fraction",
         "models per bag");
  fuse_cmd->callback(
      [&] { rc = cmd_fuse(common.resolve(), fu_inputs, fu_out); });

  CLI::App *report_cmd =
      app.add_subcommand("report", "evaluate predictions against truth");
  std::string re_pred, re_manifest, re_csv;
  report_cmd->add_option("--predictions", re_pred, "prediction file")
      ->required();
  report_cmd->add_option("--manifest", re_manifest, "manifest tsv")
      ->required();
  report_cmd->add_option("--csv", re_csv, "per-class accuracy csv");
  report_cmd->callback(
      [&] { rc = cmd_report(re_pred, re_manifest, re_csv); });

  CLI::App *inspect =
      app.add_subcommand("inspect", "diagnostics over a trained model");
  std::string in_model, in_analysis, in_out, in_features, in_clip, in_grid;
  int in_layer = 0, in_window = 9, in_order = 3;
  inspect->add_option("--model", in_model, "model file");
  inspect->add_option("--analysis", in_analysis,
                      "weight_fft|activation|smooth")
      ->required();
  inspect->add_option("--out", in_out, "grid file to write")->required();
  inspect->add_option("--layer", in_layer,
                      "dense index (weight_fft) or layer index (activation)");
  inspect->add_option("--features", in_features,
                      "feature directory (activation)");
  inspect->add_option("--clip", in_clip, "clip path (activation)");
  inspect->add_option("--grid", in_grid, "input grid file (smooth)");
  inspect->add_option("--window", in_window, "smoothing window (smooth)");
  inspect->add_option("--order", in_order, "polynomial order (smooth)");
  inspect->callback([&] {
    if (in_analysis != "smooth" && in_model.empty())
      throw ConfigError(in_analysis + " needs --model");
    rc = cmd_inspect(in_model, in_analysis, in_out, in_layer, in_features,
                     in_clip, in_grid, in_window, in_order);
  });

  try {
    app.parse(argc, argv);
    if (show_schema)
      std::fputs(config_schema().c_str(), stdout);
    else if (app.get_subcommands().empty()) {
      std::fputs(app.help().c_str(), stderr);
      return kExitConfig;
    }
  } catch (const CLI::ParseError &e) {
    const int cli_rc = app.exit(e);
    return cli_rc == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError &e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const Error &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitInternal;
  }
  return rc;
}

} // namespace skald
