// End-to-end walk through the library: synthesize a corpus, inject the four
// anomaly shapes, train a small recurrence-plot classifier, evaluate it and
// pull a saliency map for one test image.

#include <iostream>

#include "linksight/linksight.hpp"

using namespace linksight;

int main() {
  const std::uint64_t seed = 7;

  LabeledDataset base = generate_synthetic_normal(60, 32, 40.0, 2.0, seed);
  InjectionPlan plan = scale_plan(InjectionPlan{}, kDefaultTraceLength, 32);
  plan.seed = derive_seed(seed, "inject");
  LabeledDataset dataset = build_labeled_dataset(base.traces, plan);
  std::cout << "dataset: " << dataset.traces.size() << " traces of length "
            << dataset.trace_length << "\n";

  ExperimentConfig cfg;
  cfg.transform = ImageKind::RP;
  cfg.repeats = 1;
  cfg.seed = seed;
  cfg.epochs = 8;
  cfg.learning_rate = 0.01;
  cfg.base_filters = 16;
  cfg.threads = 0;
  ExperimentReport report = run_experiment(cfg, dataset);
  std::cout << report_to_text(report);

  // train a final model on everything and explain one decision
  std::vector<Sample> samples = transform_dataset(dataset, cfg.transform, false);
  NetworkConfig net = default_network_config(dataset.trace_length, 5, 16);
  NetworkState state = init_network(net, derive_seed(seed, "final-init"));
  TrainOptions opts;
  opts.epochs = 8;
  opts.learning_rate = 0.01;
  opts.seed = derive_seed(seed, "final-train");
  opts.threads = 0;
  train(state, net, samples, default_class_weights(5), opts);

  const Sample& probe = samples.front();
  SaliencyMap map = guided_backprop(state, net, probe.image, -1);
  std::cout << "saliency for class " << map.target_class << " over a "
            << map.size << "x" << map.size << " input\n";
  return 0;
}
