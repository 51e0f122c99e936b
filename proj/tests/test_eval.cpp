#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <set>
#include <sstream>
#include <vector>

#include "linksight/eval.hpp"
#include "linksight/rng.hpp"

using namespace linksight;

namespace {

// Tiny but crisply separable corpus: anomalies are injected with extreme
// parameters so even a minimal network can reach a perfect score.
LabeledDataset toy_dataset(int base_count, std::uint64_t seed) {
  LabeledDataset base = generate_synthetic_normal(base_count, 24, 60.0, 1.0, seed);
  InjectionPlan plan = scale_plan(InjectionPlan{}, 300, 24);
  plan.affected_fraction = 0.9;
  plan.seed = seed + 1;
  return build_labeled_dataset(base.traces, plan);
}

NetworkConfig toy_network(int input) {
  NetworkConfig cfg;
  cfg.input_size = input;
  cfg.num_classes = 5;
  cfg.layers = {conv_layer(4, 3), maxpool_layer(3, 3), flatten_layer(),
                dense_layer(16), output_layer(5)};
  return cfg;
}

}  // namespace

TEST_CASE("shuffle_split arithmetic at ratio 0.8") {
  std::vector<int> labels(10, 0);
  Split s = shuffle_split(labels, 0.8, 1);
  REQUIRE(s.train.size() == 8);
  REQUIRE(s.test.size() == 2);
}

TEST_CASE("shuffle_split is deterministic in its seed") {
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(i % 5);
  Split a = shuffle_split(labels, 0.8, 42);
  Split b = shuffle_split(labels, 0.8, 42);
  REQUIRE(a.train == b.train);
  REQUIRE(a.test == b.test);
  Split c = shuffle_split(labels, 0.8, 43);
  REQUIRE((a.train != c.train || a.test != c.test));
}

TEST_CASE("shuffle_split keeps per-class proportions within one sample") {
  Rng rng(5);
  std::vector<int> labels;
  for (int i = 0; i < 200; ++i) labels.push_back(rng.uniform_int(0, 4));
  Split s = shuffle_split(labels, 0.8, 9);
  std::array<int, 5> total{}, in_train{};
  for (int l : labels) total[static_cast<std::size_t>(l)]++;
  for (std::size_t i : s.train) in_train[static_cast<std::size_t>(labels[i])]++;
  for (int c = 0; c < 5; ++c) {
    double expected = 0.8 * total[static_cast<std::size_t>(c)];
    REQUIRE(std::abs(in_train[static_cast<std::size_t>(c)] - expected) <= 1.0);
  }
}

TEST_CASE("shuffle_split covers the dataset with disjoint parts") {
  Rng rng(6);
  std::vector<int> labels;
  for (int i = 0; i < 83; ++i) labels.push_back(rng.uniform_int(0, 3));
  Split s = shuffle_split(labels, 0.7, 11);
  std::set<std::size_t> seen;
  for (std::size_t i : s.train) REQUIRE(seen.insert(i).second);
  for (std::size_t i : s.test) REQUIRE(seen.insert(i).second);
  REQUIRE(seen.size() == labels.size());
}

TEST_CASE("a single-member class goes to train with a warning") {
  std::vector<int> labels{0, 0, 0, 0, 1};
  std::vector<std::string> warnings;
  Split s = shuffle_split(labels, 0.5, 3, &warnings);
  REQUIRE(warnings.size() == 1);
  bool in_train = std::find(s.train.begin(), s.train.end(), 4) != s.train.end();
  REQUIRE(in_train);
}

TEST_CASE("shuffle_split validates its arguments") {
  std::vector<int> labels{0, 1};
  REQUIRE_THROWS_AS(shuffle_split(std::vector<int>{}, 0.8, 1), ParameterError);
  REQUIRE_THROWS_AS(shuffle_split(labels, 0.0, 1), ParameterError);
  REQUIRE_THROWS_AS(shuffle_split(labels, 1.0, 1), ParameterError);
}

TEST_CASE("precision, recall and F1 from confusion counts") {
  ClassMetrics m = precision_recall_f1({90, 10, 10, 0});
  REQUIRE_THAT(m.precision, Catch::Matchers::WithinAbs(0.9, 1e-12));
  REQUIRE_THAT(m.recall, Catch::Matchers::WithinAbs(0.9, 1e-12));
  REQUIRE_THAT(m.f1, Catch::Matchers::WithinAbs(0.9, 1e-12));
  REQUIRE_FALSE(m.precision_undefined);
}

TEST_CASE("degenerate confusion counts return flagged zeros") {
  ClassMetrics m = precision_recall_f1({0, 0, 5, 0});
  REQUIRE(m.precision == 0.0);
  REQUIRE(m.precision_undefined);
  REQUIRE(m.recall == 0.0);
  REQUIRE(m.f1 == 0.0);
  REQUIRE(m.f1_undefined);
}

TEST_CASE("f1 equals the harmonic mean recomputed independently") {
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    ConfusionCounts c{rng.uniform_int(0, 50), rng.uniform_int(0, 50),
                      rng.uniform_int(0, 50), rng.uniform_int(0, 50)};
    ClassMetrics m = precision_recall_f1(c);
    double p = c.tp + c.fp == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fp);
    double r = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fn);
    double f1 = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    REQUIRE_THAT(m.f1, Catch::Matchers::WithinAbs(f1, 1e-12));
  }
}

TEST_CASE("metrics are invariant under evaluation order") {
  Rng rng(8);
  std::vector<int> truth, pred;
  for (int i = 0; i < 60; ++i) {
    truth.push_back(rng.uniform_int(0, 4));
    pred.push_back(rng.uniform_int(0, 4));
  }
  auto base = confusion_from_predictions(truth, pred, 5);
  std::vector<std::size_t> perm(truth.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = 0; i + 1 < perm.size(); ++i)
    std::swap(perm[i],
              perm[i + static_cast<std::size_t>(rng.next_u64() %
                                                (perm.size() - i))]);
  std::vector<int> truth2, pred2;
  for (std::size_t i : perm) {
    truth2.push_back(truth[i]);
    pred2.push_back(pred[i]);
  }
  auto permuted = confusion_from_predictions(truth2, pred2, 5);
  for (int c = 0; c < 5; ++c) {
    REQUIRE(base[static_cast<std::size_t>(c)].tp ==
            permuted[static_cast<std::size_t>(c)].tp);
    REQUIRE(base[static_cast<std::size_t>(c)].fp ==
            permuted[static_cast<std::size_t>(c)].fp);
    REQUIRE(base[static_cast<std::size_t>(c)].fn ==
            permuted[static_cast<std::size_t>(c)].fn);
    REQUIRE(base[static_cast<std::size_t>(c)].tn ==
            permuted[static_cast<std::size_t>(c)].tn);
  }
}

TEST_CASE("confusion totals are consistent with the sample count") {
  Rng rng(9);
  std::vector<int> truth, pred;
  for (int i = 0; i < 40; ++i) {
    truth.push_back(rng.uniform_int(0, 4));
    pred.push_back(rng.uniform_int(0, 4));
  }
  for (const ConfusionCounts& c : confusion_from_predictions(truth, pred, 5))
    REQUIRE(c.tp + c.fp + c.fn + c.tn == 40);
}

TEST_CASE("run_experiment reaches a perfect score on a separable toy set") {
  LabeledDataset ds = toy_dataset(20, 100);
  ExperimentConfig cfg;
  cfg.repeats = 1;
  cfg.seed = 5;
  cfg.network = toy_network(ds.trace_length);
  cfg.epochs = 60;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 16;
  cfg.threads = 2;
  ExperimentReport report = run_experiment(cfg, ds);
  REQUIRE(report.repeats.size() == 1);
  REQUIRE(report.repeats[0].per_class.size() == 5);
  REQUIRE(report.macro_f1_mean == 1.0);
  REQUIRE(report.params == count_params(*cfg.network));
  REQUIRE(report.flops == count_flops(*cfg.network));
}

TEST_CASE("run_experiment reports are byte-identical under one seed") {
  LabeledDataset ds = toy_dataset(10, 200);
  ExperimentConfig cfg;
  cfg.repeats = 2;
  cfg.seed = 9;
  cfg.network = toy_network(ds.trace_length);
  cfg.epochs = 3;
  cfg.learning_rate = 0.01;
  cfg.threads = 2;
  std::string a = report_to_csv(run_experiment(cfg, ds));
  std::string b = report_to_csv(run_experiment(cfg, ds));
  REQUIRE(a == b);
}

TEST_CASE("binary experiments report two classes") {
  LabeledDataset ds = toy_dataset(10, 300);
  ExperimentConfig cfg;
  cfg.binary = true;
  cfg.repeats = 1;
  cfg.seed = 2;
  NetworkConfig net = toy_network(ds.trace_length);
  net.num_classes = 1;
  net.layers.back() = output_layer(1);
  cfg.network = net;
  cfg.epochs = 2;
  cfg.threads = 2;
  ExperimentReport report = run_experiment(cfg, ds);
  REQUIRE(report.class_names == std::vector<std::string>{"normal", "anomaly"});
  REQUIRE(report.repeats[0].per_class.size() == 2);
}

TEST_CASE("knn classifier plugs into the same protocol") {
  LabeledDataset ds = toy_dataset(8, 400);
  ExperimentConfig cfg;
  cfg.classifier = ClassifierKind::knn;
  cfg.repeats = 1;
  cfg.seed = 3;
  cfg.knn_k = 1;
  cfg.threads = 2;
  ExperimentReport report = run_experiment(cfg, ds);
  REQUIRE(report.repeats.size() == 1);
  REQUIRE(report.params == 0);
  REQUIRE(report.macro_f1_mean > 0.5);  // crisp toy corpus
}

TEST_CASE("report csv has one row per repeat and class plus a summary") {
  LabeledDataset ds = toy_dataset(8, 500);
  ExperimentConfig cfg;
  cfg.classifier = ClassifierKind::knn;
  cfg.repeats = 3;
  cfg.seed = 4;
  cfg.threads = 2;
  ExperimentReport report = run_experiment(cfg, ds);
  std::string csv = report_to_csv(report);
  std::istringstream lines(csv);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  // header + 3*5 rows + summary header + summary line
  REQUIRE(count == 1 + 15 + 2);

  SECTION("csv parses back to the same numbers") {
    std::istringstream in(csv);
    ExperimentReport back = parse_report_csv(in);
    REQUIRE(back.class_names == report.class_names);
    REQUIRE(back.repeats.size() == report.repeats.size());
    REQUIRE_THAT(back.macro_f1_mean,
                 Catch::Matchers::WithinAbs(report.macro_f1_mean, 1e-12));
    std::string text = report_to_text(back);
    REQUIRE_FALSE(text.empty());
  }
}

TEST_CASE("anomaly share sweep shapes and warnings") {
  LabeledDataset base = generate_synthetic_normal(12, 24, 60.0, 1.0, 600);
  InjectionPlan plan = scale_plan(InjectionPlan{}, 300, 24);
  ExperimentConfig cfg;
  cfg.classifier = ClassifierKind::knn;
  cfg.seed = 1;
  cfg.sweep_folds = 2;
  cfg.threads = 2;

  SECTION("a single share yields a single row") {
    cfg.anomaly_shares = {0.5};
    auto rows = anomaly_share_sweep(cfg, base.traces, plan);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].share == 0.5);
  }
  SECTION("too-small shares are skipped with a warning") {
    cfg.anomaly_shares = {0.01, 0.5};
    std::vector<std::string> warnings;
    auto rows = anomaly_share_sweep(cfg, base.traces, plan, &warnings);
    REQUIRE(rows.size() == 1);
    REQUIRE_FALSE(warnings.empty());
  }
  SECTION("csv rendering") {
    cfg.anomaly_shares = {0.5};
    auto rows = anomaly_share_sweep(cfg, base.traces, plan);
    std::ostringstream out;
    sweep_to_csv(out, rows);
    REQUIRE(out.str().substr(0, 14) == "share,mean_f1\n");
  }
}

TEST_CASE("macro F1 lies between the per-class extremes") {
  Rng rng(10);
  std::vector<int> truth, pred;
  for (int i = 0; i < 100; ++i) {
    truth.push_back(rng.uniform_int(0, 4));
    pred.push_back(rng.uniform_int(0, 4));
  }
  auto counts = confusion_from_predictions(truth, pred, 5);
  double lo = 1.0, hi = 0.0, macro = 0.0;
  for (const auto& c : counts) {
    double f1 = precision_recall_f1(c).f1;
    lo = std::min(lo, f1);
    hi = std::max(hi, f1);
    macro += f1 / 5.0;
  }
  REQUIRE(macro >= lo);
  REQUIRE(macro <= hi);
}
