// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "skald/eval.hpp"
#include "skald/io_util.hpp"

using namespace skald;
namespace fs = std::filesystem;

namespace {

Manifest grid_manifest(int n_classes, int clips_per_class) {
  std::vector<ManifestEntry> entries;
  for (int c = 0; c < n_classes; ++c) {
    const std::string label =
        std::string("class") + (c < 10 ? "0" : "") + std::to_string(c);
    for (int i = 0; i < clips_per_class; ++i)
      entries.push_back({"audio/c" + std::to_string(c) + "_" +
                             std::to_string(i) + ".wav",
                         label});
  }
  return make_manifest(std::move(entries));
}

fs::path temp_dir(const char *name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::create_directories(dir);
  return dir;
}

} // namespace

TEST_CASE("manifest loading parses, sorts labels, and rejects bad input") {
  const fs::path dir = temp_dir("skald_test_eval");
  const fs::path path = dir / "train.tsv";

  atomic_write_file(path, std::string("b/one.wav\tpark\n"
                                      "a/two.wav\tcafe\n"
                                      "c/three.wav\tpark\n"));
  Manifest m = load_manifest(path);
  REQUIRE(m.size() == 3);
  CHECK(m.entries[0].path == "b/one.wav");
  CHECK(m.labels == std::vector<std::string>{"cafe", "park"});
  CHECK(m.label_index("park") == 1);
  CHECK_THROWS_AS(m.label_index("beach"), DataError);

  save_manifest(dir / "copy.tsv", m);
  Manifest back = load_manifest(dir / "copy.tsv");
  CHECK(back.entries.size() == m.entries.size());
  CHECK(back.labels == m.labels);

  atomic_write_file(path, std::string(""));
  CHECK_THROWS_AS(load_manifest(path), DataError);

  atomic_write_file(path, std::string("a.wav\tcafe\nb.wav_no_tab\n"));
  try {
    load_manifest(path);
    FAIL("expected a parse error");
  } catch (const DataError &e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  atomic_write_file(path, std::string("a.wav\tcafe\na.wav\tpark\n"));
  CHECK_THROWS_AS(load_manifest(path), DataError);
  fs::remove_all(dir);
}

TEST_CASE("a 1170-clip, 15-class manifest round-trips with 15 labels") {
  Manifest m = grid_manifest(15, 78);
  CHECK(m.size() == 1170);
  CHECK(m.n_classes() == 15);
}

TEST_CASE("make_folds stratifies exactly and deterministically") {
  SUBCASE("perfect stratification at 4 clips per class") {
    Manifest m = grid_manifest(15, 4);
    FoldPlan plan = make_folds(m, 4, 9);
    for (int f = 0; f < 4; ++f) {
      std::map<std::string, int> counts;
      for (size_t i = 0; i < m.entries.size(); ++i)
        if (plan.assignment[i] == f)
          ++counts[m.entries[i].label];
      CHECK(counts.size() == 15);
      for (const auto &[label, n] : counts)
        CHECK(n == 1);
    }
  }
  SUBCASE("determinism and partition property") {
    Manifest m = grid_manifest(5, 13);
    FoldPlan a = make_folds(m, 4, 123);
    FoldPlan b = make_folds(m, 4, 123);
    CHECK(a.assignment == b.assignment);
    FoldPlan c = make_folds(m, 4, 124);
    CHECK(a.assignment != c.assignment);

    // Every clip lands in exactly one fold (assignment is total).
    for (int f : a.assignment)
      CHECK((f >= 0 && f < 4));
  }
  SUBCASE("per-class counts differ by at most one across folds") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<ManifestEntry> entries;
      const int n_classes = 2 + int(rng.uniform_int(6));
      for (int c = 0; c < n_classes; ++c) {
        const int n = 4 + int(rng.uniform_int(40));
        for (int i = 0; i < n; ++i)
          entries.push_back({"t" + std::to_string(trial) + "_c" +
                                 std::to_string(c) + "_" + std::to_string(i),
                             "label" + std::to_string(c)});
      }
      Manifest m = make_manifest(std::move(entries));
      const int k = 4;
      FoldPlan plan = make_folds(m, k, 1000 + uint64_t(trial));
      for (const auto &label : m.labels) {
        std::vector<int> counts(4, 0);
        for (size_t i = 0; i < m.entries.size(); ++i)
          if (m.entries[i].label == label)
            ++counts[size_t(plan.assignment[i])];
        const int lo = *std::min_element(counts.begin(), counts.end());
        const int hi = *std::max_element(counts.begin(), counts.end());
        CHECK(hi - lo <= 1);
      }
    }
  }
  SUBCASE("class smaller than k rejected") {
    Manifest m = grid_manifest(3, 3);
    CHECK_THROWS_AS(make_folds(m, 4, 1), DataError);
    CHECK_THROWS_AS(make_folds(m, 1, 1), ConfigError);
  }
}

TEST_CASE("fold plans round-trip through files and accept external plans") {
  const fs::path dir = temp_dir("skald_test_folds");
  Manifest m = grid_manifest(4, 8);
  FoldPlan plan = make_folds(m, 4, 3);
  save_fold_plan(dir / "folds.tsv", plan, m);
  FoldPlan back = load_fold_plan(dir / "folds.tsv", m);
  CHECK(back.k == 4);
  CHECK(back.assignment == plan.assignment);

  atomic_write_file(dir / "folds.tsv", std::string("only.wav\t0\n"));
  CHECK_THROWS_AS(load_fold_plan(dir / "folds.tsv", m), DataError);
  fs::remove_all(dir);
}

TEST_CASE("aggregate_clip modes") {
  SUBCASE("single segment passes through") {
    DMatrix logs(1, 3);
    logs.v = {-5.0, -2.0, -9.0};
    ClipScore s = aggregate_clip(logs, AggregationMode::sum_log);
    CHECK(s.scores == std::vector<double>{-5.0, -2.0, -9.0});
    CHECK(s.mode == AggregationMode::sum_log);

    DMatrix probs(1, 4, 0.25);
    ClipScore p = aggregate_clip(probs, AggregationMode::mean_prob);
    CHECK(p.scores == std::vector<double>(4, 0.25));
  }
  SUBCASE("mean of uniform rows is uniform") {
    DMatrix probs(7, 5, 0.2);
    ClipScore p = aggregate_clip(probs, AggregationMode::mean_prob);
    for (double v : p.scores)
      CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("sum_log sums columns") {
    DMatrix logs(3, 2);
    logs.v = {-1.0, -2.0, -3.0, -4.0, -5.0, -6.0};
    ClipScore s = aggregate_clip(logs, AggregationMode::sum_log);
    CHECK(s.scores[0] == doctest::Approx(-9.0));
    CHECK(s.scores[1] == doctest::Approx(-12.0));
  }
  SUBCASE("argmax of mean equals argmax of the plain sum") {
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
      const int s = 1 + int(rng.uniform_int(8));
      const int c = 2 + int(rng.uniform_int(10));
      DMatrix probs(s, c);
      for (int i = 0; i < s; ++i) {
        double total = 0.0;
        for (int j = 0; j < c; ++j) {
          probs(i, j) = rng.uniform(1e-6, 1.0);
          total += probs(i, j);
        }
        for (int j = 0; j < c; ++j)
          probs(i, j) /= total;
      }
      ClipScore mean = aggregate_clip(probs, AggregationMode::mean_prob);
      std::vector<double> plain_sum(size_t(c), 0.0);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < c; ++j)
          plain_sum[size_t(j)] += probs(i, j);
      const auto arg = [](const std::vector<double> &v) {
        return int(std::max_element(v.begin(), v.end()) - v.begin());
      };
      CHECK(arg(mean.scores) == arg(plain_sum));
    }
  }
  SUBCASE("errors") {
    DMatrix empty(0, 3);
    CHECK_THROWS_AS(aggregate_clip(empty, AggregationMode::sum_log),
                    DataError);
    DMatrix bad(2, 2, 0.9); // rows sum to 1.8
    CHECK_THROWS_AS(aggregate_clip(bad, AggregationMode::mean_prob),
                    DataError);
  }
}

TEST_CASE("evaluate builds confusion, per-class, and overall accuracy") {
  std::vector<ManifestEntry> entries = {
      {"x.wav", "cafe"}, {"y.wav", "park"}, {"z.wav", "park"}};
  Manifest m = make_manifest(std::move(entries));

  SUBCASE("all correct") {
    std::map<std::string, std::vector<double>> preds = {
        {"x.wav", {0.9, 0.1}}, {"y.wav", {0.2, 0.8}}, {"z.wav", {0.0, 1.0}}};
    EvalReport r = evaluate(preds, m);
    CHECK(r.accuracy == 1.0);
    CHECK(r.confusion(0, 0) == 1.0);
    CHECK(r.confusion(1, 1) == 2.0);
    CHECK(r.confusion(0, 1) == 0.0);
    CHECK(r.per_class == std::vector<double>{1.0, 1.0});
  }
  SUBCASE("two of three correct; row sums count clips") {
    std::map<std::string, std::vector<double>> preds = {
        {"x.wav", {0.9, 0.1}}, {"y.wav", {0.8, 0.2}}, {"z.wav", {0.0, 1.0}}};
    EvalReport r = evaluate(preds, m);
    CHECK(r.accuracy == doctest::Approx(2.0 / 3.0));
    double row0 = r.confusion(0, 0) + r.confusion(0, 1);
    double row1 = r.confusion(1, 0) + r.confusion(1, 1);
    CHECK(row0 == 1.0);
    CHECK(row1 == 2.0);
    // Recount the trace independently.
    CHECK((r.confusion(0, 0) + r.confusion(1, 1)) / 3.0 ==
          doctest::Approx(r.accuracy));
    const std::string text = format_report(r);
    CHECK(text.find("overall accuracy") != std::string::npos);
  }
  SUBCASE("monotone transforms leave predictions unchanged") {
    std::map<std::string, std::vector<double>> preds = {
        {"x.wav", {0.9, 0.1}}, {"y.wav", {0.8, 0.2}}, {"z.wav", {0.0, 1.0}}};
    EvalReport base = evaluate(preds, m);
    std::map<std::string, std::vector<double>> warped;
    for (const auto &[clip, scores] : preds) {
      std::vector<double> w;
      for (double v : scores)
        w.push_back(3.0 * std::exp(v) + 7.0);
      warped[clip] = w;
    }
    EvalReport same = evaluate(warped, m);
    CHECK(same.confusion.v == base.confusion.v);
  }
  SUBCASE("ties go to the lowest class index") {
    std::map<std::string, std::vector<double>> preds = {
        {"x.wav", {0.5, 0.5}}, {"y.wav", {0.5, 0.5}}, {"z.wav", {0.5, 0.5}}};
    EvalReport r = evaluate(preds, m);
    CHECK(r.confusion(0, 0) == 1.0);
    CHECK(r.confusion(1, 0) == 2.0);
  }
  SUBCASE("missing predictions are listed") {
    std::map<std::string, std::vector<double>> preds = {
        {"x.wav", {0.9, 0.1}}};
    try {
      evaluate(preds, m);
      FAIL("expected missing-clip error");
    } catch (const DataError &e) {
      CHECK(std::string(e.what()).find("y.wav") != std::string::npos);
      CHECK(std::string(e.what()).find("2 clips") != std::string::npos);
    }
  }
  SUBCASE("wrong score dimension rejected") {
    std::map<std::string, std::vector<double>> preds = {
        {"x.wav", {0.9}}, {"y.wav", {0.2, 0.8}}, {"z.wav", {0.0, 1.0}}};
    CHECK_THROWS_AS(evaluate(preds, m), DimensionError);
  }
}

TEST_CASE("class accuracy export mirrors a classes-by-models table") {
  const fs::path dir = temp_dir("skald_test_report");
  std::vector<ManifestEntry> entries = {{"x.wav", "a"}, {"y.wav", "b"}};
  Manifest m = make_manifest(std::move(entries));
  std::map<std::string, std::vector<double>> good = {{"x.wav", {1.0, 0.0}},
                                                     {"y.wav", {0.0, 1.0}}};
  std::map<std::string, std::vector<double>> bad = {{"x.wav", {0.0, 1.0}},
                                                    {"y.wav", {0.0, 1.0}}};
  EvalReport ra = evaluate(good, m);
  EvalReport rb = evaluate(bad, m);
  write_class_accuracy_csv(dir / "table.csv", {{"good", ra}, {"bad", rb}});
  const auto bytes = read_file(dir / "table.csv");
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.find("class,good,bad") == 0);
  CHECK(text.find("a,1,0") != std::string::npos);
  CHECK(text.find("overall,1,0.5") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cv_run trains on the complement and scores the held-out fold") {
  Manifest m = grid_manifest(3, 8);
  FoldPlan plan = make_folds(m, 4, 17);

  SUBCASE("constant prediction scores the majority prevalence") {
    // Always predicts class index 0.
    const FoldRunner constant = [&](const Manifest &, const Manifest &ev,
                                    int, uint64_t) {
      std::map<std::string, std::vector<double>> preds;
      for (const auto &e : ev.entries)
        preds[e.path] = {1.0, 0.0, 0.0};
      return preds;
    };
    CvResult res = cv_run(m, plan, constant, 5);
    REQUIRE(res.folds.size() == 4);
    for (const auto &r : res.folds) {
      double class0 = 0.0;
      for (int j = 0; j < 3; ++j)
        class0 += r.confusion(0, j);
      CHECK(r.accuracy == doctest::Approx(class0 / double(r.total)));
    }
    CHECK(res.mean_accuracy == doctest::Approx(1.0 / 3.0).epsilon(0.01));
  }
  SUBCASE("train and eval parts are disjoint and exhaustive") {
    std::vector<std::set<std::string>> seen_eval(4);
    const FoldRunner inspect = [&](const Manifest &tr, const Manifest &ev,
                                   int fold, uint64_t) {
      std::map<std::string, std::vector<double>> preds;
      std::set<std::string> train_paths;
      for (const auto &e : tr.entries)
        train_paths.insert(e.path);
      for (const auto &e : ev.entries) {
        CHECK(train_paths.count(e.path) == 0);
        seen_eval[size_t(fold)].insert(e.path);
        preds[e.path] = {1.0, 0.0, 0.0};
      }
      CHECK(tr.size() + ev.size() == m.size());
      return preds;
    };
    cv_run(m, plan, inspect, 5);
    size_t total = 0;
    for (const auto &s : seen_eval)
      total += s.size();
    CHECK(total == size_t(m.size()));
  }
  SUBCASE("mean, min, and max summarize the folds") {
    // Fold 0 gets everything right, the other folds get everything wrong.
    const FoldRunner skewed = [&](const Manifest &, const Manifest &ev,
                                  int fold, uint64_t) {
      std::map<std::string, std::vector<double>> preds;
      for (const auto &e : ev.entries) {
        std::vector<double> scores(3, 0.0);
        if (fold == 0)
          scores[size_t(ev.label_index(e.label))] = 1.0;
        else
          scores[size_t((ev.label_index(e.label) + 1) % 3)] = 1.0;
        preds[e.path] = scores;
      }
      return preds;
    };
    CvResult res = cv_run(m, plan, skewed, 5);
    CHECK(res.max_accuracy == 1.0);
    CHECK(res.min_accuracy == 0.0);
    CHECK(res.mean_accuracy == doctest::Approx(0.25));
  }
}
