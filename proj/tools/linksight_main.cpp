// linksight: wireless link anomaly toolkit.
//
// Pipeline commands: generate/ingest a trace corpus, inject anomalies,
// transform traces to images, train and evaluate the classifier, sweep the
// anomaly share, run the DTW baseline, and explain model decisions.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "linksight/linksight.hpp"

namespace fs = std::filesystem;
using namespace linksight;

namespace {

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string out = ".";
  int threads = 0;  // 0 = hardware concurrency
};

std::vector<double> parse_weights(const std::string& text) {
  std::vector<double> weights;
  for (auto part : split(text, ','))
    weights.push_back(parse_double(trim(part), "cli: --weights"));
  return weights;
}

fs::path out_dir(const GlobalOptions& g) {
  fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

InjectionPlan plan_for_dataset(const std::string& plan_file, double fraction,
                               std::uint64_t seed, int scale_from, int length) {
  InjectionPlan plan;
  if (!plan_file.empty()) {
    std::istringstream in(read_file(plan_file));
    plan = load_plan(in);
  }
  if (fraction > 0.0) plan.affected_fraction = fraction;
  plan.seed = seed;
  if (scale_from != length) plan = scale_plan(plan, scale_from, length);
  return plan;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_generate(const GlobalOptions& g, int count, int length, double mean,
                 double stddev) {
  LabeledDataset ds = generate_synthetic_normal(count, length, mean, stddev, g.seed);
  fs::path dir = out_dir(g);
  write_dataset(dir, ds);
  std::cout << "generate: wrote " << ds.traces.size() << " traces to "
            << dir.string() << "\n";
  return 0;
}

int cmd_ingest(const GlobalOptions& g, const std::string& in, int length,
               bool keep_lossy) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in))
    if (entry.is_regular_file() && entry.path().extension() == ".trace")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("cli: no .trace files under " + in);
  std::vector<Trace> traces;
  for (const fs::path& file : files) {
    Trace t = parse_trace(read_file(file), length);
    if (t.id.empty()) t.id = file.stem().string();
    traces.push_back(std::move(t));
  }
  std::size_t parsed = traces.size();
  std::vector<Trace> kept = filter_complete(traces, keep_lossy);
  LabeledDataset ds;
  ds.trace_length = length;
  ds.seed = g.seed;
  ds.traces = std::move(kept);
  ds.provenance = "ingest files=" + std::to_string(parsed) +
                  " kept=" + std::to_string(ds.traces.size()) +
                  (keep_lossy ? " keep_lossy=1" : "");
  fs::path dir = out_dir(g);
  write_dataset(dir, ds);
  std::cout << "ingest: kept " << ds.traces.size() << " of " << parsed
            << " traces in " << dir.string() << "\n";
  return 0;
}

int cmd_inject(const GlobalOptions& g, const std::string& in,
               const std::string& plan_file, double fraction, int scale_from) {
  LabeledDataset base = read_dataset(in);
  InjectionPlan plan = plan_for_dataset(plan_file, fraction, g.seed, scale_from,
                                        base.trace_length);
  std::vector<std::string> warnings;
  LabeledDataset ds = build_labeled_dataset(base.traces, plan, &warnings);
  print_warnings(warnings);
  fs::path dir = out_dir(g);
  write_dataset(dir, ds);
  std::cout << "inject: wrote " << ds.traces.size() << " traces to "
            << dir.string() << "\n";
  return 0;
}

int cmd_transform(const GlobalOptions& g, const std::string& in,
                  const std::string& kind_name, const std::string& format_name,
                  std::optional<double> epsilon) {
  ImageKind kind = image_kind_from_string(kind_name);
  ImageFormat format = image_format_from_string(format_name);
  LabeledDataset ds = read_dataset(in);
  fs::path dir = out_dir(g);
  const char* ext = format == ImageFormat::PGM ? ".pgm" : ".csv";
  for (const Trace& t : ds.traces) {
    ImageMatrix m = transform(t.values, kind, epsilon);
    write_file(dir / (t.id + "." + std::string(to_string(kind)) + ext),
               export_image(m, format));
  }
  std::cout << "transform: wrote " << ds.traces.size() << " " << kind_name
            << " images to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const GlobalOptions& g, const std::string& in,
              const std::string& kind_name, int classes, int epochs, double lr,
              int batch, int filters, const std::string& weights_text,
              const std::string& model_name, const std::string& history_name) {
  LabeledDataset ds = read_dataset(in);
  bool binary = classes == 2;
  ImageKind kind = image_kind_from_string(kind_name);
  std::vector<Sample> samples = transform_dataset(ds, kind, binary, g.threads);
  NetworkConfig net =
      default_network_config(ds.trace_length, binary ? 1 : 5, filters);
  std::vector<double> weights = weights_text.empty()
                                    ? default_class_weights(binary ? 1 : 5)
                                    : parse_weights(weights_text);
  NetworkState state = init_network(net, derive_seed(g.seed, "train-init"));
  TrainOptions opts;
  opts.epochs = epochs;
  opts.learning_rate = lr;
  opts.batch_size = batch;
  opts.seed = derive_seed(g.seed, "train-run");
  opts.threads = g.threads;
  TrainResult result = train(state, net, samples, weights, opts);

  fs::path dir = out_dir(g);
  {
    std::ostringstream out(std::ios::binary);
    save_network(out, net, state);
    write_file(dir / model_name, out.str());
  }
  {
    std::ostringstream out;
    out << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_history.size(); ++e)
      out << (e + 1) << "," << format_double(result.loss_history[e]) << "\n";
    write_file(dir / history_name, out.str());
  }
  std::cout << "train: " << samples.size() << " samples, " << epochs
            << " epochs, final loss "
            << (result.loss_history.empty()
                    ? std::string("n/a")
                    : format_double(result.loss_history.back()))
            << ", checkpoint " << (dir / model_name).string() << "\n";
  return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& in,
             const std::string& kind_name, int classes, int repeats,
             double ratio, int epochs, double lr, int batch, int filters,
             const std::string& weights_text) {
  LabeledDataset ds = read_dataset(in);
  ExperimentConfig cfg;
  cfg.transform = image_kind_from_string(kind_name);
  cfg.binary = classes == 2;
  cfg.split_ratio = ratio;
  cfg.repeats = repeats;
  cfg.seed = g.seed;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.base_filters = filters;
  cfg.threads = g.threads;
  if (!weights_text.empty()) cfg.class_weights = parse_weights(weights_text);
  ExperimentReport report = run_experiment(cfg, ds);
  print_warnings(report.warnings);
  fs::path dir = out_dir(g);
  write_file(dir / "report.csv", report_to_csv(report));
  write_file(dir / "report.txt", report_to_text(report));
  std::cout << "eval: macro F1 " << format_double(report.macro_f1_mean)
            << " +- " << format_double(report.macro_f1_std) << " over "
            << repeats << " repeats; report in " << dir.string() << "\n";
  return 0;
}

int cmd_sweep(const GlobalOptions& g, const std::string& in,
              const std::string& kind_name, const std::string& shares_text,
              int folds, int epochs, double lr, int batch, int filters,
              const std::string& plan_file, int scale_from) {
  LabeledDataset base = read_dataset(in);
  ExperimentConfig cfg;
  cfg.transform = image_kind_from_string(kind_name);
  cfg.seed = g.seed;
  cfg.sweep_folds = folds;
  cfg.epochs = epochs;
  cfg.learning_rate = lr;
  cfg.batch_size = batch;
  cfg.base_filters = filters;
  cfg.threads = g.threads;
  cfg.anomaly_shares.clear();
  for (auto part : split(shares_text, ','))
    cfg.anomaly_shares.push_back(parse_double(trim(part), "cli: --shares") / 100.0);
  InjectionPlan plan = plan_for_dataset(plan_file, 0.0, g.seed, scale_from,
                                        base.trace_length);
  std::vector<std::string> warnings;
  std::vector<SweepRow> rows =
      anomaly_share_sweep(cfg, base.traces, plan, &warnings);
  print_warnings(warnings);
  fs::path dir = out_dir(g);
  std::ostringstream out;
  sweep_to_csv(out, rows);
  write_file(dir / "sweep.csv", out.str());
  std::cout << "sweep: " << rows.size() << " shares evaluated; results in "
            << (dir / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_baseline_knn(const GlobalOptions& g, const std::string& in, int k,
                     std::optional<int> window, int classes, int repeats,
                     double ratio) {
  LabeledDataset ds = read_dataset(in);
  ExperimentConfig cfg;
  cfg.classifier = ClassifierKind::knn;
  cfg.binary = classes == 2;
  cfg.split_ratio = ratio;
  cfg.repeats = repeats;
  cfg.seed = g.seed;
  cfg.knn_k = k;
  cfg.dtw_window = window;
  cfg.threads = g.threads;
  ExperimentReport report = run_experiment(cfg, ds);
  print_warnings(report.warnings);
  fs::path dir = out_dir(g);
  write_file(dir / "report.csv", report_to_csv(report));
  write_file(dir / "report.txt", report_to_text(report));
  std::cout << "baseline knn: macro F1 " << format_double(report.macro_f1_mean)
            << " +- " << format_double(report.macro_f1_std) << "; report in "
            << dir.string() << "\n";
  return 0;
}

int cmd_explain(const GlobalOptions& g, const std::string& in,
                const std::string& model_file, const std::string& kind_name,
                const std::string& class_text, const std::string& format_name) {
  LabeledDataset ds = read_dataset(in);
  ImageKind kind = image_kind_from_string(kind_name);
  ImageFormat format = image_format_from_string(format_name);
  std::istringstream model_in(read_file(model_file), std::ios::binary);
  auto [net, state] = load_network(model_in);
  if (net.input_size != ds.trace_length)
    throw ParameterError("cli: checkpoint expects length " +
                         std::to_string(net.input_size) + ", dataset has " +
                         std::to_string(ds.trace_length));
  int target = -1;
  if (class_text != "auto")
    target = static_cast<int>(parse_int(class_text, "cli: --class"));
  fs::path dir = out_dir(g);
  const char* ext = format == ImageFormat::PGM ? ".pgm" : ".csv";
  for (const Trace& t : ds.traces) {
    Tensor input = make_model_input(transform(t.values, kind));
    SaliencyMap map = guided_backprop(state, net, input, target);
    map.image_id = t.id;
    write_file(dir / (t.id + ".saliency" + ext), render_saliency(map, format));
  }
  std::cout << "explain: wrote " << ds.traces.size() << " saliency maps to "
            << dir.string() << "\n";
  return 0;
}

int cmd_report(const GlobalOptions& g, const std::string& in) {
  std::istringstream csv(read_file(in));
  ExperimentReport report = parse_report_csv(csv);
  std::string text = report_to_text(report);
  fs::path dir = out_dir(g);
  write_file(dir / "report.txt", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wireless link anomaly toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "flat key=value configuration file");

  GlobalOptions g;
  app.add_option("--seed", g.seed, "root seed for all randomness")
      ->capture_default_str();
  app.add_option("--out", g.out, "output directory")
      ->envname("LINKSIGHT_OUT")
      ->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)")
      ->capture_default_str();

  // generate
  int gen_count = 100, gen_length = kDefaultTraceLength;
  double gen_mean = 40.0, gen_stddev = 3.0;
  auto* generate = app.add_subcommand("generate", "synthesize normal traces");
  generate->add_option("--count", gen_count)->capture_default_str();
  generate->add_option("--length", gen_length)->capture_default_str();
  generate->add_option("--mean", gen_mean)->capture_default_str();
  generate->add_option("--stddev", gen_stddev)->capture_default_str();

  // ingest
  std::string ingest_in;
  int ingest_length = kDefaultTraceLength;
  bool ingest_keep_lossy = false;
  auto* ingest =
      app.add_subcommand("ingest", "parse raw trace files and filter loss");
  ingest->add_option("--in", ingest_in, "directory of .trace files")->required();
  ingest->add_option("--length", ingest_length)->capture_default_str();
  ingest->add_flag("--keep-lossy", ingest_keep_lossy,
                   "keep lossy traces instead of complete ones");

  // inject
  std::string inject_in, inject_plan;
  double inject_fraction = 0.0;
  int inject_scale_from = kDefaultTraceLength;
  auto* inject = app.add_subcommand("inject", "inject synthetic anomalies");
  inject->add_option("--in", inject_in, "normal dataset directory")->required();
  inject->add_option("--plan", inject_plan, "injection plan file");
  inject->add_option("--fraction", inject_fraction,
                     "override the affected fraction");
  inject->add_option("--scale-from", inject_scale_from,
                     "trace length the plan ranges refer to")
      ->capture_default_str();

  // transform
  std::string tr_in, tr_kind = "rp", tr_format = "pgm";
  std::optional<double> tr_epsilon;
  auto* transform_cmd =
      app.add_subcommand("transform", "render traces as images");
  transform_cmd->add_option("--in", tr_in, "dataset directory")->required();
  transform_cmd->add_option("--kind", tr_kind,
                            "rp | rp-binary | gasf | gadf | snapshot")
      ->capture_default_str();
  transform_cmd->add_option("--format", tr_format, "pgm | csv")
      ->capture_default_str();
  transform_cmd->add_option("--epsilon", tr_epsilon,
                            "threshold for rp-binary");

  // train
  std::string train_in, train_kind = "rp", train_weights;
  std::string train_model = "model.ckpt", train_history = "history.csv";
  int train_classes = 5, train_epochs = 10, train_batch = 32, train_filters = 128;
  double train_lr = 1e-3;
  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  train_cmd->add_option("--in", train_in, "dataset directory")->required();
  train_cmd->add_option("--transform", train_kind)->capture_default_str();
  train_cmd->add_option("--classes", train_classes, "2 or 5")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train_epochs)->capture_default_str();
  train_cmd->add_option("--lr", train_lr)->capture_default_str();
  train_cmd->add_option("--batch", train_batch)->capture_default_str();
  train_cmd->add_option("--filters", train_filters,
                        "first conv layer filter count")
      ->capture_default_str();
  train_cmd->add_option("--weights", train_weights,
                        "per-class loss weights, comma separated");
  train_cmd->add_option("--model", train_model)->capture_default_str();
  train_cmd->add_option("--history", train_history)->capture_default_str();

  // eval
  std::string eval_in, eval_kind = "rp", eval_weights;
  int eval_classes = 5, eval_repeats = 10, eval_epochs = 10, eval_batch = 32,
      eval_filters = 128;
  double eval_ratio = 0.8, eval_lr = 1e-3;
  auto* eval_cmd =
      app.add_subcommand("eval", "shuffle-split evaluation protocol");
  eval_cmd->add_option("--in", eval_in, "dataset directory")->required();
  eval_cmd->add_option("--transform", eval_kind)->capture_default_str();
  eval_cmd->add_option("--classes", eval_classes, "2 or 5")->capture_default_str();
  eval_cmd->add_option("--repeats", eval_repeats)->capture_default_str();
  eval_cmd->add_option("--ratio", eval_ratio)->capture_default_str();
  eval_cmd->add_option("--epochs", eval_epochs)->capture_default_str();
  eval_cmd->add_option("--lr", eval_lr)->capture_default_str();
  eval_cmd->add_option("--batch", eval_batch)->capture_default_str();
  eval_cmd->add_option("--filters", eval_filters)->capture_default_str();
  eval_cmd->add_option("--weights", eval_weights);

  // sweep
  std::string sweep_in, sweep_kind = "rp", sweep_shares = "1,3,10,20,33,50";
  std::string sweep_plan;
  int sweep_folds = 5, sweep_epochs = 10, sweep_batch = 32, sweep_filters = 128;
  int sweep_scale_from = kDefaultTraceLength;
  double sweep_lr = 1e-3;
  auto* sweep_cmd =
      app.add_subcommand("sweep", "anomaly share versus mean F1");
  sweep_cmd->add_option("--in", sweep_in, "normal dataset directory")->required();
  sweep_cmd->add_option("--transform", sweep_kind)->capture_default_str();
  sweep_cmd->add_option("--shares", sweep_shares, "percentages, comma separated")
      ->capture_default_str();
  sweep_cmd->add_option("--folds", sweep_folds)->capture_default_str();
  sweep_cmd->add_option("--epochs", sweep_epochs)->capture_default_str();
  sweep_cmd->add_option("--lr", sweep_lr)->capture_default_str();
  sweep_cmd->add_option("--batch", sweep_batch)->capture_default_str();
  sweep_cmd->add_option("--filters", sweep_filters)->capture_default_str();
  sweep_cmd->add_option("--plan", sweep_plan, "injection plan file");
  sweep_cmd->add_option("--scale-from", sweep_scale_from)->capture_default_str();

  // baseline knn
  auto* baseline_cmd = app.add_subcommand("baseline", "classical baselines");
  baseline_cmd->require_subcommand(1);
  std::string knn_in;
  int knn_k = 1, knn_classes = 5, knn_repeats = 10;
  double knn_ratio = 0.8;
  std::optional<int> knn_window;
  auto* knn_cmd =
      baseline_cmd->add_subcommand("knn", "DTW nearest-neighbor classifier");
  knn_cmd->add_option("--in", knn_in, "dataset directory")->required();
  knn_cmd->add_option("--k", knn_k)->capture_default_str();
  knn_cmd->add_option("--window", knn_window, "Sakoe-Chiba band radius");
  knn_cmd->add_option("--classes", knn_classes, "2 or 5")->capture_default_str();
  knn_cmd->add_option("--repeats", knn_repeats)->capture_default_str();
  knn_cmd->add_option("--ratio", knn_ratio)->capture_default_str();

  // explain
  std::string explain_in, explain_model, explain_kind = "rp";
  std::string explain_class = "auto", explain_format = "pgm";
  auto* explain_cmd =
      app.add_subcommand("explain", "guided-backpropagation saliency maps");
  explain_cmd->add_option("--in", explain_in, "dataset directory")->required();
  explain_cmd->add_option("--model", explain_model, "checkpoint file")
      ->required();
  explain_cmd->add_option("--transform", explain_kind)->capture_default_str();
  explain_cmd->add_option("--class", explain_class, "auto or 0..4")
      ->capture_default_str();
  explain_cmd->add_option("--format", explain_format, "pgm | csv")
      ->capture_default_str();

  // report
  std::string report_in;
  auto* report_cmd =
      app.add_subcommand("report", "render a report csv as text");
  report_cmd->add_option("--in", report_in, "report.csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*generate) return cmd_generate(g, gen_count, gen_length, gen_mean, gen_stddev);
    if (*ingest) return cmd_ingest(g, ingest_in, ingest_length, ingest_keep_lossy);
    if (*inject) return cmd_inject(g, inject_in, inject_plan, inject_fraction,
                                   inject_scale_from);
    if (*transform_cmd)
      return cmd_transform(g, tr_in, tr_kind, tr_format, tr_epsilon);
    if (*train_cmd)
      return cmd_train(g, train_in, train_kind, train_classes, train_epochs,
                       train_lr, train_batch, train_filters, train_weights,
                       train_model, train_history);
    if (*eval_cmd)
      return cmd_eval(g, eval_in, eval_kind, eval_classes, eval_repeats,
                      eval_ratio, eval_epochs, eval_lr, eval_batch,
                      eval_filters, eval_weights);
    if (*sweep_cmd)
      return cmd_sweep(g, sweep_in, sweep_kind, sweep_shares, sweep_folds,
                       sweep_epochs, sweep_lr, sweep_batch, sweep_filters,
                       sweep_plan, sweep_scale_from);
    if (*knn_cmd)
      return cmd_baseline_knn(g, knn_in, knn_k, knn_window, knn_classes,
                              knn_repeats, knn_ratio);
    if (*explain_cmd)
      return cmd_explain(g, explain_in, explain_model, explain_kind,
                         explain_class, explain_format);
    if (*report_cmd) return cmd_report(g, report_in);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
