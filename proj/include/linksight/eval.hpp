#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "linksight/baseline.hpp"
#include "linksight/error.hpp"
#include "linksight/imaging.hpp"
#include "linksight/inject.hpp"
#include "linksight/nn.hpp"
#include "linksight/rng.hpp"
#include "linksight/trace.hpp"
#include "linksight/util.hpp"

namespace linksight {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Precision, recall and F1 for one class. Division-by-zero cases yield 0
/// with the matching `*_undefined` flag raised.
struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

inline ClassMetrics precision_recall_f1(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0)
    throw ParameterError("eval: negative confusion counts");
  ClassMetrics m;
  if (c.tp + c.fp == 0)
    m.precision_undefined = true;
  else
    m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn == 0)
    m.recall_undefined = true;
  else
    m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision + m.recall == 0.0)
    m.f1_undefined = true;
  else
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

inline std::vector<ConfusionCounts> confusion_from_predictions(
    std::span<const int> truth, std::span<const int> predicted, int n_classes) {
  if (truth.size() != predicted.size())
    throw ParameterError("eval: truth/prediction size mismatch");
  std::vector<ConfusionCounts> counts(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int c = 0; c < n_classes; ++c) {
      bool is_true = truth[i] == c;
      bool is_pred = predicted[i] == c;
      ConfusionCounts& cc = counts[static_cast<std::size_t>(c)];
      if (is_true && is_pred) ++cc.tp;
      else if (!is_true && is_pred) ++cc.fp;
      else if (is_true && !is_pred) ++cc.fn;
      else ++cc.tn;
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Stratified shuffle split
// ---------------------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded permutation then prefix/suffix split at round(ratio * n), applied
/// per class so every class with at least two members lands in both parts.
/// A single-member class goes to the training side with a warning.
inline Split shuffle_split(std::span<const int> labels, double ratio,
                           std::uint64_t seed,
                           std::vector<std::string>* warnings = nullptr) {
  if (labels.empty()) throw ParameterError("eval: empty dataset");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ParameterError("eval: split ratio must be in (0, 1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(i);
  Split split;
  Rng rng(derive_seed(seed, "shuffle-split"));
  for (auto& [label, members] : by_class) {
    for (std::size_t i = 0; i + 1 < members.size(); ++i) {
      std::size_t j =
          i + static_cast<std::size_t>(rng.next_u64() % (members.size() - i));
      std::swap(members[i], members[j]);
    }
    std::size_t n = members.size();
    if (n == 1) {
      if (warnings)
        warnings->push_back("eval: class " + std::to_string(label) +
                            " has a single member; placed in train");
      split.train.push_back(members[0]);
      continue;
    }
    auto take = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(n)));
    take = std::clamp<std::size_t>(take, 1, n - 1);
    split.train.insert(split.train.end(), members.begin(), members.begin() + take);
    split.test.insert(split.test.end(), members.begin() + take, members.end());
  }
  return split;
}

// ---------------------------------------------------------------------------
// Experiment protocol
// ---------------------------------------------------------------------------

enum class ClassifierKind { cnn, knn };

struct ExperimentConfig {
  ImageKind transform = ImageKind::RP;
  ClassifierKind classifier = ClassifierKind::cnn;
  bool binary = false;  // two-class problem instead of five
  double split_ratio = 0.8;
  int repeats = 10;
  std::uint64_t seed = 0;
  std::vector<double> class_weights;  // empty -> default weighting
  std::vector<double> anomaly_shares = {0.01, 0.03, 0.10, 0.20, 0.33, 0.50};
  int sweep_folds = 5;
  // network knobs
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 32;
  int base_filters = 128;
  std::optional<NetworkConfig> network;  // overrides the default topology
  // baseline knobs
  int knn_k = 1;
  std::optional<int> dtw_window;
  int threads = 1;
};

struct RepeatResult {
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0.0;
};

struct ExperimentReport {
  std::vector<std::string> class_names;
  std::vector<RepeatResult> repeats;
  std::vector<ClassMetrics> mean_per_class;
  double macro_f1_mean = 0.0;
  double macro_f1_std = 0.0;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  double tec_joules = 0.0;
  std::vector<std::string> warnings;
};

inline int eval_label(AnomalyKind kind, bool binary) {
  if (binary) return kind == AnomalyKind::None ? 0 : 1;
  return static_cast<int>(kind);
}

inline std::vector<std::string> eval_class_names(bool binary) {
  if (binary) return {"normal", "anomaly"};
  return {"SuddenD", "SuddenR", "InstaD", "SlowD", "None"};
}

/// Model input for one image: the raw matrix, with unthresholded recurrence
/// plots scaled by the RSSI span so every transform feeds the network
/// values of order one.
inline Tensor make_model_input(const ImageMatrix& m) {
  Tensor t = Tensor::image(m.size, m.size, 1);
  t.values = m.cells;
  if (m.kind == ImageKind::RP) {
    const double scale = 1.0 / (kRssiCeil - kRssiFloor);
    for (double& v : t.values) v *= scale;
  }
  return t;
}

/// Applies one transform across the whole dataset; parallel and
/// slot-addressed, so the output order is the dataset order.
inline std::vector<Sample> transform_dataset(const LabeledDataset& dataset,
                                             ImageKind kind, bool binary,
                                             int threads = 1) {
  std::vector<Sample> samples(dataset.traces.size());
  detail::parallel_for(dataset.traces.size(), threads, [&](std::size_t i) {
    samples[i].image = make_model_input(transform(dataset.traces[i].values, kind));
    samples[i].label = eval_label(dataset.traces[i].label, binary);
  });
  return samples;
}

namespace detail {

inline RepeatResult metrics_from_predictions(std::span<const int> truth,
                                             std::span<const int> predicted,
                                             int n_classes) {
  RepeatResult result;
  std::vector<ConfusionCounts> counts =
      confusion_from_predictions(truth, predicted, n_classes);
  double macro = 0.0;
  for (const ConfusionCounts& c : counts) {
    ClassMetrics m = precision_recall_f1(c);
    macro += m.f1;
    result.per_class.push_back(m);
  }
  result.macro_f1 = macro / static_cast<double>(n_classes);
  return result;
}

}  // namespace detail

/// The shuffle-split protocol: `repeats` rounds of split, train and
/// evaluate, reported per repeat and as mean +- stddev of the macro F1.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                       const LabeledDataset& dataset) {
  if (dataset.traces.empty()) throw ParameterError("eval: empty dataset");
  if (cfg.repeats < 1) throw ParameterError("eval: repeats must be >= 1");
  const int n_classes = cfg.binary ? 2 : 5;
  std::vector<double> weights = cfg.class_weights;
  if (weights.empty()) weights = default_class_weights(cfg.binary ? 1 : 5);

  ExperimentReport report;
  report.class_names = eval_class_names(cfg.binary);

  std::vector<int> labels(dataset.traces.size());
  for (std::size_t i = 0; i < dataset.traces.size(); ++i)
    labels[i] = eval_label(dataset.traces[i].label, cfg.binary);

  std::vector<Sample> samples;
  NetworkConfig net;
  if (cfg.classifier == ClassifierKind::cnn) {
    samples = transform_dataset(dataset, cfg.transform, cfg.binary, cfg.threads);
    net = cfg.network ? *cfg.network
                      : default_network_config(dataset.trace_length,
                                               cfg.binary ? 1 : 5,
                                               cfg.base_filters);
    validate_config(net);
    report.params = count_params(net);
    report.flops = count_flops(net);
    report.tec_joules = tec(static_cast<double>(report.flops));
  }

  for (int r = 0; r < cfg.repeats; ++r) {
    try {
      Split split = shuffle_split(labels, cfg.split_ratio,
                                  derive_seed(cfg.seed, "repeat-split",
                                              static_cast<std::uint64_t>(r)),
                                  &report.warnings);
      std::vector<int> truth;
      truth.reserve(split.test.size());
      for (std::size_t i : split.test) truth.push_back(labels[i]);
      std::vector<int> predicted;

      if (cfg.classifier == ClassifierKind::cnn) {
        std::vector<Sample> train_set;
        train_set.reserve(split.train.size());
        for (std::size_t i : split.train) train_set.push_back(samples[i]);
        NetworkState state = init_network(
            net, derive_seed(cfg.seed, "repeat-init", static_cast<std::uint64_t>(r)));
        TrainOptions opts;
        opts.epochs = cfg.epochs;
        opts.learning_rate = cfg.learning_rate;
        opts.batch_size = cfg.batch_size;
        opts.seed = derive_seed(cfg.seed, "repeat-train", static_cast<std::uint64_t>(r));
        opts.threads = cfg.threads;
        train(state, net, train_set, weights, opts);
        std::vector<Sample> test_set;
        test_set.reserve(split.test.size());
        for (std::size_t i : split.test) test_set.push_back(samples[i]);
        predicted = predict_batch(state, net, test_set, cfg.threads);
      } else {
        std::vector<LabeledSequence> train_set;
        train_set.reserve(split.train.size());
        for (std::size_t i : split.train)
          train_set.push_back(
              {dataset.traces[i].values, dataset.traces[i].label});
        predicted.resize(split.test.size());
        DtwConfig dtw_cfg{cfg.dtw_window};
        // parallelism lives inside the per-query distance scan
        for (std::size_t q = 0; q < split.test.size(); ++q) {
          AnomalyKind kind =
              knn_classify(train_set, dataset.traces[split.test[q]].values,
                           cfg.knn_k, dtw_cfg, cfg.threads);
          predicted[q] = eval_label(kind, cfg.binary);
        }
      }
      report.repeats.push_back(
          detail::metrics_from_predictions(truth, predicted, n_classes));
    } catch (const Error& e) {
      throw Error(e.kind(), "eval: repeat " + std::to_string(r) + ": " + e.what());
    }
  }

  report.mean_per_class.assign(static_cast<std::size_t>(n_classes), {});
  for (const RepeatResult& rr : report.repeats) {
    for (int c = 0; c < n_classes; ++c) {
      report.mean_per_class[static_cast<std::size_t>(c)].precision +=
          rr.per_class[static_cast<std::size_t>(c)].precision;
      report.mean_per_class[static_cast<std::size_t>(c)].recall +=
          rr.per_class[static_cast<std::size_t>(c)].recall;
      report.mean_per_class[static_cast<std::size_t>(c)].f1 +=
          rr.per_class[static_cast<std::size_t>(c)].f1;
    }
  }
  double inv = 1.0 / static_cast<double>(report.repeats.size());
  for (ClassMetrics& m : report.mean_per_class) {
    m.precision *= inv;
    m.recall *= inv;
    m.f1 *= inv;
  }
  double mean = 0.0, sq = 0.0;
  for (const RepeatResult& rr : report.repeats) {
    mean += rr.macro_f1;
    sq += rr.macro_f1 * rr.macro_f1;
  }
  mean *= inv;
  report.macro_f1_mean = mean;
  report.macro_f1_std = std::sqrt(std::max(0.0, sq * inv - mean * mean));
  return report;
}

// ---------------------------------------------------------------------------
// Anomaly-share sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double share = 0.0;
  double mean_f1 = 0.0;
};

/// Rebuilds the labeled dataset at each anomaly share and evaluates it with
/// `sweep_folds` shuffle-split rounds, reporting the mean macro F1 per
/// share. Shares too small to inject a single trace are skipped.
inline std::vector<SweepRow> anomaly_share_sweep(
    const ExperimentConfig& cfg, const std::vector<Trace>& base,
    const InjectionPlan& plan, std::vector<std::string>* warnings = nullptr) {
  if (base.empty()) throw ParameterError("eval: sweep needs a base corpus");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < cfg.anomaly_shares.size(); ++i) {
    double share = cfg.anomaly_shares[i];
    if (static_cast<std::size_t>(share * static_cast<double>(base.size())) == 0) {
      if (warnings)
        warnings->push_back("eval: share " + format_double(share) +
                            " injects no traces; skipped");
      continue;
    }
    InjectionPlan share_plan = plan;
    share_plan.affected_fraction = share;
    share_plan.seed = derive_seed(cfg.seed, "sweep-inject", i);
    LabeledDataset dataset = build_labeled_dataset(base, share_plan, warnings);
    ExperimentConfig fold_cfg = cfg;
    fold_cfg.repeats = cfg.sweep_folds;
    fold_cfg.seed = derive_seed(cfg.seed, "sweep-eval", i);
    ExperimentReport report = run_experiment(fold_cfg, dataset);
    if (warnings)
      warnings->insert(warnings->end(), report.warnings.begin(),
                       report.warnings.end());
    rows.push_back({share, report.macro_f1_mean});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Report rendering: a machine CSV and a plain-text twin.
// ---------------------------------------------------------------------------

inline void report_to_csv(std::ostream& out, const ExperimentReport& report) {
  out << "repeat,class,precision,recall,f1\n";
  for (std::size_t r = 0; r < report.repeats.size(); ++r)
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
      const ClassMetrics& m = report.repeats[r].per_class[c];
      out << (r + 1) << "," << report.class_names[c] << ","
          << format_double(m.precision) << "," << format_double(m.recall)
          << "," << format_double(m.f1) << "\n";
    }
  out << "macro_f1_mean,macro_f1_std,params,flops,tec_joules\n";
  out << format_double(report.macro_f1_mean) << ","
      << format_double(report.macro_f1_std) << "," << report.params << ","
      << report.flops << "," << format_double(report.tec_joules) << "\n";
}

inline std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream out;
  report_to_csv(out, report);
  return out.str();
}

namespace detail {

inline std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace detail

inline void report_to_text(std::ostream& out, const ExperimentReport& report) {
  out << "class        precision  recall  f1\n";
  for (std::size_t c = 0; c < report.class_names.size(); ++c) {
    const ClassMetrics& m = report.mean_per_class[c];
    char line[96];
    std::snprintf(line, sizeof line, "%-12s %-10s %-7s %s\n",
                  report.class_names[c].c_str(),
                  detail::fixed3(m.precision).c_str(),
                  detail::fixed3(m.recall).c_str(),
                  detail::fixed3(m.f1).c_str());
    out << line;
  }
  out << "repeats: " << report.repeats.size() << " (macro F1:";
  for (const RepeatResult& r : report.repeats)
    out << " " << detail::fixed3(r.macro_f1);
  out << ")\n";
  out << "macro F1 mean " << detail::fixed3(report.macro_f1_mean) << ", std "
      << detail::fixed3(report.macro_f1_std) << "\n";
  out << "params " << report.params << ", flops " << report.flops << ", tec "
      << format_double(report.tec_joules) << " J\n";
}

inline std::string report_to_text(const ExperimentReport& report) {
  std::ostringstream out;
  report_to_text(out, report);
  return out.str();
}

/// Reads a report CSV back into a renderable report (per-class means are
/// recomputed from the per-repeat rows).
inline ExperimentReport parse_report_csv(std::istream& in) {
  ExperimentReport report;
  std::string line;
  if (!std::getline(in, line) || trim(line) != "repeat,class,precision,recall,f1")
    throw ParseError("eval: report csv missing column header");
  std::map<std::string, std::size_t> class_index;
  bool in_summary = false;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::string where = "eval: report line " + std::to_string(line_no);
    if (view == "macro_f1_mean,macro_f1_std,params,flops,tec_joules") {
      in_summary = true;
      continue;
    }
    auto fields = split(view, ',');
    if (in_summary) {
      if (fields.size() != 5) throw ParseError(where + ": expected 5 fields");
      report.macro_f1_mean = parse_double(trim(fields[0]), where);
      report.macro_f1_std = parse_double(trim(fields[1]), where);
      report.params = parse_int(trim(fields[2]), where);
      report.flops = parse_int(trim(fields[3]), where);
      report.tec_joules = parse_double(trim(fields[4]), where);
      continue;
    }
    if (fields.size() != 5) throw ParseError(where + ": expected 5 fields");
    std::size_t repeat =
        static_cast<std::size_t>(parse_int(trim(fields[0]), where));
    if (repeat == 0) throw ParseError(where + ": repeat must be >= 1");
    std::string name(trim(fields[1]));
    if (!class_index.contains(name)) {
      class_index[name] = report.class_names.size();
      report.class_names.push_back(name);
    }
    while (report.repeats.size() < repeat) report.repeats.push_back({});
    RepeatResult& rr = report.repeats[repeat - 1];
    while (rr.per_class.size() <= class_index[name]) rr.per_class.push_back({});
    ClassMetrics& m = rr.per_class[class_index[name]];
    m.precision = parse_double(trim(fields[2]), where);
    m.recall = parse_double(trim(fields[3]), where);
    m.f1 = parse_double(trim(fields[4]), where);
  }
  if (report.class_names.empty())
    throw ParseError("eval: report csv has no metric rows");
  report.mean_per_class.assign(report.class_names.size(), {});
  for (RepeatResult& rr : report.repeats) {
    rr.per_class.resize(report.class_names.size());
    double macro = 0.0;
    for (std::size_t c = 0; c < rr.per_class.size(); ++c) {
      macro += rr.per_class[c].f1;
      report.mean_per_class[c].precision += rr.per_class[c].precision;
      report.mean_per_class[c].recall += rr.per_class[c].recall;
      report.mean_per_class[c].f1 += rr.per_class[c].f1;
    }
    rr.macro_f1 = macro / static_cast<double>(rr.per_class.size());
  }
  double inv = report.repeats.empty()
                   ? 0.0
                   : 1.0 / static_cast<double>(report.repeats.size());
  for (ClassMetrics& m : report.mean_per_class) {
    m.precision *= inv;
    m.recall *= inv;
    m.f1 *= inv;
  }
  return report;
}

inline void sweep_to_csv(std::ostream& out, std::span<const SweepRow> rows) {
  out << "share,mean_f1\n";
  for (const SweepRow& r : rows)
    out << format_double(r.share) << "," << format_double(r.mean_f1) << "\n";
}

}  // namespace linksight
