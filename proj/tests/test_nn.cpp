#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "linksight/nn.hpp"
#include "linksight/rng.hpp"

using namespace linksight;

namespace {

Tensor random_image(Rng& rng, int n, double lo = 0.0, double hi = 1.0) {
  Tensor t = Tensor::image(n, n, 1);
  for (double& v : t.values) v = rng.uniform_real(lo, hi);
  return t;
}

NetworkConfig small_config(int input, int num_classes) {
  NetworkConfig cfg;
  cfg.input_size = input;
  cfg.num_classes = num_classes;
  cfg.layers = {conv_layer(2, 3), maxpool_layer(2, 2), flatten_layer(),
                dense_layer(4), output_layer(num_classes)};
  return cfg;
}

// Straight-line reimplementation of the forward pass for the small config
// above, written against the documented layouts without the engine's
// im2col/GEMM machinery.
std::vector<double> naive_forward_small(const NetworkState& state,
                                        const NetworkConfig& cfg,
                                        const Tensor& image) {
  const int n = cfg.input_size;
  const LayerSpec& conv = cfg.layers[0];
  const int co = n - conv.kernel_rows + 1;
  std::vector<std::vector<std::vector<double>>> conv_out(
      static_cast<std::size_t>(co),
      std::vector<std::vector<double>>(
          static_cast<std::size_t>(co),
          std::vector<double>(static_cast<std::size_t>(conv.filters))));
  for (int oy = 0; oy < co; ++oy)
    for (int ox = 0; ox < co; ++ox)
      for (int f = 0; f < conv.filters; ++f) {
        double acc = state.layers[0].biases[static_cast<std::size_t>(f)];
        for (int ky = 0; ky < conv.kernel_rows; ++ky)
          for (int kx = 0; kx < conv.kernel_cols; ++kx) {
            double w = state.layers[0].weights[static_cast<std::size_t>(
                (f * conv.kernel_rows + ky) * conv.kernel_cols + kx)];
            acc += w * image.at(oy + ky, ox + kx, 0);
          }
        conv_out[static_cast<std::size_t>(oy)][static_cast<std::size_t>(ox)]
                [static_cast<std::size_t>(f)] = std::max(0.0, acc);
      }
  const int po = co / 2;
  std::vector<double> flat;
  for (int oy = 0; oy < po; ++oy)
    for (int ox = 0; ox < po; ++ox)
      for (int f = 0; f < conv.filters; ++f) {
        double best = conv_out[static_cast<std::size_t>(2 * oy)]
                              [static_cast<std::size_t>(2 * ox)]
                              [static_cast<std::size_t>(f)];
        for (int ky = 0; ky < 2; ++ky)
          for (int kx = 0; kx < 2; ++kx)
            best = std::max(best, conv_out[static_cast<std::size_t>(2 * oy + ky)]
                                          [static_cast<std::size_t>(2 * ox + kx)]
                                          [static_cast<std::size_t>(f)]);
        flat.push_back(best);
      }
  const LayerSpec& dense = cfg.layers[3];
  std::vector<double> hidden(static_cast<std::size_t>(dense.units));
  for (int o = 0; o < dense.units; ++o) {
    double acc = state.layers[3].biases[static_cast<std::size_t>(o)];
    for (std::size_t i = 0; i < flat.size(); ++i)
      acc += state.layers[3].weights[static_cast<std::size_t>(o) * flat.size() + i] *
             flat[i];
    hidden[static_cast<std::size_t>(o)] = std::max(0.0, acc);
  }
  const LayerSpec& out = cfg.layers[4];
  std::vector<double> scores(static_cast<std::size_t>(out.units));
  for (int o = 0; o < out.units; ++o) {
    double acc = state.layers[4].biases[static_cast<std::size_t>(o)];
    for (std::size_t i = 0; i < hidden.size(); ++i)
      acc += state.layers[4].weights[static_cast<std::size_t>(o) * hidden.size() + i] *
             hidden[i];
    scores[static_cast<std::size_t>(o)] = 1.0 / (1.0 + std::exp(-acc));
  }
  return scores;
}

// Central finite differences against the analytic gradients; the loose
// relative metric uses an absolute floor of 1 so near-zero pairs compare
// absolutely.
void check_gradients(const NetworkConfig& cfg, std::uint64_t seed, int target,
                     std::span<const double> class_weights) {
  NetworkState state = init_network(cfg, seed);
  Rng rng(derive_seed(seed, "fd-image"));
  Tensor image = random_image(rng, cfg.input_size, 0.05, 1.0);
  Gradients analytic = gradients(state, cfg, image, target, class_weights);
  const double h = 1e-4;
  double worst = 0.0;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    auto probe = [&](std::vector<double>& params, std::size_t i,
                     double analytic_g) {
      double saved = params[i];
      params[i] = saved + h;
      double up = sample_loss(state, cfg, image, target, class_weights);
      params[i] = saved - h;
      double down = sample_loss(state, cfg, image, target, class_weights);
      params[i] = saved;
      double fd = (up - down) / (2.0 * h);
      double rel = std::abs(analytic_g - fd) /
                   std::max({1.0, std::abs(analytic_g), std::abs(fd)});
      worst = std::max(worst, rel);
    };
    for (std::size_t i = 0; i < state.layers[l].weights.size(); ++i)
      probe(state.layers[l].weights, i, analytic.layers[l].weights[i]);
    for (std::size_t i = 0; i < state.layers[l].biases.size(); ++i)
      probe(state.layers[l].biases, i, analytic.layers[l].biases[i]);
  }
  // the input gradient feeds the saliency path; check it the same way
  for (std::size_t i = 0; i < image.values.size(); ++i) {
    double saved = image.values[i];
    image.values[i] = saved + h;
    double up = sample_loss(state, cfg, image, target, class_weights);
    image.values[i] = saved - h;
    double down = sample_loss(state, cfg, image, target, class_weights);
    image.values[i] = saved;
    double fd = (up - down) / (2.0 * h);
    double a = analytic.input_gradient.values[i];
    double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
    worst = std::max(worst, rel);
  }
  REQUIRE(worst <= 1e-4);
}

}  // namespace

TEST_CASE("layer_shapes of the reference topology at full scale") {
  NetworkConfig cfg = default_network_config(300, 5);
  auto shapes = layer_shapes(cfg);
  REQUIRE(shapes[1].rows == 298);
  REQUIRE(shapes[1].channels == 128);
  REQUIRE(shapes[2].rows == 292);
  REQUIRE(shapes[3].rows == 286);
  REQUIRE(shapes[4].rows == 280);
  REQUIRE(shapes[5].rows == 140);
  REQUIRE(shapes[6].count() == 140 * 140 * 16);
  REQUIRE(shapes[7].count() == 64);
  REQUIRE(shapes[8].count() == 5);
}

TEST_CASE("config validation rejects bad topologies") {
  NetworkConfig cfg = small_config(8, 5);
  SECTION("non-integral conv extent") {
    cfg.layers[0] = conv_layer(2, 3, 2, 1);  // (8-3+2)/2 is not integral
    REQUIRE_THROWS_AS(validate_config(cfg), ParameterError);
  }
  SECTION("conv after flatten") {
    cfg.layers = {flatten_layer(), conv_layer(2, 3), output_layer(5)};
    REQUIRE_THROWS_AS(validate_config(cfg), ParameterError);
  }
  SECTION("output units must match num_classes") {
    cfg.layers.back() = output_layer(4);
    REQUIRE_THROWS_AS(validate_config(cfg), ParameterError);
  }
  SECTION("num_classes is 1 or 5") {
    cfg.num_classes = 3;
    cfg.layers.back() = output_layer(3);
    REQUIRE_THROWS_AS(validate_config(cfg), ParameterError);
  }
  SECTION("dense before flatten") {
    cfg.layers = {dense_layer(4), output_layer(5)};
    REQUIRE_THROWS_AS(validate_config(cfg), ParameterError);
  }
}

TEST_CASE("count_params worked values") {
  // conv(128, 3x3) on one channel
  NetworkConfig cfg;
  cfg.input_size = 300;
  cfg.num_classes = 1;
  cfg.layers = {conv_layer(128, 3), flatten_layer(), output_layer(1)};
  auto shapes = layer_shapes(cfg);
  auto [w, b] = detail::layer_param_counts(cfg.layers[0], shapes[0]);
  REQUIRE(w + b == 1280);

  // dense 100 -> 64
  LayerShape flat100{100, 1, 1, true};
  auto [dw, db] = detail::layer_param_counts(dense_layer(64), flat100);
  REQUIRE(dw + db == 6464);

  // pooling carries no parameters
  auto [pw, pb] = detail::layer_param_counts(maxpool_layer(2, 2),
                                             LayerShape{8, 8, 4, false});
  REQUIRE(pw + pb == 0);
}

TEST_CASE("parameter count matches the state tensors") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = init_network(cfg, 3);
  std::int64_t total = 0;
  for (const LayerState& l : state.layers)
    total += static_cast<std::int64_t>(l.weights.size() + l.biases.size());
  REQUIRE(total == state.parameter_count);
  REQUIRE(total == count_params(cfg));
}

TEST_CASE("flops per filter worked value") {
  LayerShape in{300, 300, 1, false};
  REQUIRE(conv_flops_per_filter(conv_layer(1, 3), in) == 1687276);
}

TEST_CASE("flops of a single-position 1x1 conv") {
  LayerShape in{1, 1, 1, false};
  REQUIRE(conv_flops_per_filter(conv_layer(1, 1), in) == 3);
}

TEST_CASE("per-layer flops match hand-computed values") {
  NetworkConfig cfg;
  cfg.input_size = 10;
  cfg.num_classes = 5;
  cfg.layers = {conv_layer(2, 3), conv_layer(3, 3), maxpool_layer(2, 2),
                flatten_layer(), dense_layer(4), output_layer(5)};
  auto shapes = layer_shapes(cfg);
  REQUIRE(layer_flops(cfg.layers[0], shapes[0]) == 2470);   // (1216 + 19) * 2
  REQUIRE(layer_flops(cfg.layers[1], shapes[1]) == 4107);   // (1332 + 37) * 3
  REQUIRE(layer_flops(cfg.layers[2], shapes[2]) == 81);     // 9 windows * 3 ch * 3
  REQUIRE(layer_flops(cfg.layers[3], shapes[3]) == 0);
  REQUIRE(layer_flops(cfg.layers[4], shapes[4]) == 228);    // 2*27*4 + 4 + 8
  REQUIRE(layer_flops(cfg.layers[5], shapes[5]) == 45);     // 2*4*5 + 5
  // total is the sum of its layers
  REQUIRE(count_flops(cfg) == 2470 + 4107 + 81 + 228 + 45);
}

TEST_CASE("tec worked values") {
  REQUIRE_THAT(tec(2.1e9), Catch::Matchers::WithinRel(0.039, 0.01));
  REQUIRE_THAT(tec(26.5e9), Catch::Matchers::WithinRel(0.49, 0.01));
  REQUIRE(tec(0.0) == 0.0);
  REQUIRE_THROWS_AS(tec(1.0, 0.0), ParameterError);
  REQUIRE_THROWS_AS(tec(1.0, -2.0), ParameterError);
}

TEST_CASE("forward with all-zero parameters yields 0.5 everywhere") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = zero_network(cfg);
  Rng rng(17);
  std::vector<double> scores = forward(state, cfg, random_image(rng, 8));
  REQUIRE(scores.size() == 5);
  for (double s : scores) REQUIRE(s == 0.5);
}

TEST_CASE("a large output bias saturates the score towards 1") {
  NetworkConfig cfg = small_config(8, 1);
  NetworkState state = zero_network(cfg);
  state.layers[4].biases[0] = 1e3;
  Rng rng(18);
  std::vector<double> scores = forward(state, cfg, random_image(rng, 8));
  REQUIRE(scores[0] > 1.0 - 1e-9);
  REQUIRE(scores[0] < 1.0);  // sigmoid output stays strictly inside (0, 1)
}

TEST_CASE("forward rejects mismatched input shapes") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = zero_network(cfg);
  REQUIRE_THROWS_AS(forward(state, cfg, Tensor::image(9, 9, 1)), ShapeError);
}

TEST_CASE("forward matches a straight-line reimplementation") {
  NetworkConfig cfg = small_config(8, 5);
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    NetworkState state = init_network(cfg, rng.next_u64());
    for (LayerState& l : state.layers)
      for (double& b : l.biases) b = rng.uniform_real(-0.3, 0.3);
    Tensor image = random_image(rng, 8);
    std::vector<double> expected = naive_forward_small(state, cfg, image);
    std::vector<double> got = forward(state, cfg, image);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE_THAT(got[i], Catch::Matchers::WithinAbs(expected[i], 1e-10));
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  SECTION("conv + maxpool + dense + output head") {
    check_gradients(small_config(8, 5), 101, 2, default_class_weights(5));
  }
  SECTION("strided padded conv with a binary head") {
    NetworkConfig cfg;
    cfg.input_size = 9;
    cfg.num_classes = 1;
    cfg.layers = {conv_layer(2, 3, 2, 1), flatten_layer(), dense_layer(3),
                  output_layer(1)};
    check_gradients(cfg, 102, 1, default_class_weights(1));
  }
  SECTION("overlapping maxpool") {
    NetworkConfig cfg;
    cfg.input_size = 6;
    cfg.num_classes = 5;
    cfg.layers = {conv_layer(1, 3), maxpool_layer(2, 1), flatten_layer(),
                  output_layer(5)};
    check_gradients(cfg, 103, 0, default_class_weights(5));
  }
  SECTION("sigmoid hidden conv") {
    NetworkConfig cfg;
    cfg.input_size = 6;
    cfg.num_classes = 1;
    cfg.layers = {conv_layer(1, 3, 1, 0, Activation::sigmoid), flatten_layer(),
                  output_layer(1)};
    check_gradients(cfg, 104, 0, default_class_weights(1));
  }
  SECTION("stacked convs") {
    NetworkConfig cfg;
    cfg.input_size = 8;
    cfg.num_classes = 5;
    cfg.layers = {conv_layer(2, 3), conv_layer(2, 3), flatten_layer(),
                  output_layer(5)};
    check_gradients(cfg, 105, 4, default_class_weights(5));
  }
}

TEST_CASE("zero weight on the target class zeroes every gradient") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = init_network(cfg, 31);
  Rng rng(32);
  Tensor image = random_image(rng, 8);
  std::vector<double> weights{1.0, 1.0, 0.0, 1.0, 1.0};
  Gradients g = gradients(state, cfg, image, 2, weights);
  REQUIRE(g.loss == 0.0);
  for (const LayerState& l : g.layers) {
    for (double w : l.weights) REQUIRE(w == 0.0);
    for (double b : l.biases) REQUIRE(b == 0.0);
  }
  for (double v : g.input_gradient.values) REQUIRE(v == 0.0);
}

TEST_CASE("a duplicated sample in a batch behaves like the single sample") {
  NetworkConfig cfg = small_config(8, 5);
  Rng rng(33);
  Sample s{random_image(rng, 8), 1};
  auto weights = default_class_weights(5);

  TrainOptions opts;
  opts.epochs = 1;
  opts.learning_rate = 0.1;
  opts.seed = 5;

  NetworkState a = init_network(cfg, 77);
  opts.batch_size = 2;
  std::vector<Sample> two{s, s};
  train(a, cfg, two, weights, opts);

  NetworkState b = init_network(cfg, 77);
  opts.batch_size = 1;
  std::vector<Sample> one{s};
  train(b, cfg, one, weights, opts);

  REQUIRE(a == b);
}

TEST_CASE("training separates a linearly separable toy problem") {
  // class 1 images are bright, class 0 images are dark
  NetworkConfig cfg = small_config(8, 1);
  Rng rng(41);
  std::vector<Sample> data;
  for (int i = 0; i < 40; ++i) {
    int label = i % 2;
    Tensor img = Tensor::image(8, 8, 1);
    double base = label == 1 ? 0.8 : 0.2;
    for (double& v : img.values) v = base + rng.uniform_real(-0.05, 0.05);
    data.push_back({std::move(img), label});
  }
  NetworkState state = init_network(cfg, 7);
  TrainOptions opts;
  opts.epochs = 50;
  opts.learning_rate = 0.05;
  opts.batch_size = 8;
  opts.seed = 11;
  std::vector<double> weights{1.0, 1.0};
  TrainResult result = train(state, cfg, data, weights, opts);
  REQUIRE(result.loss_history.size() == 50);
  REQUIRE(result.loss_history.back() < result.loss_history.front());
  int correct = 0;
  for (const Sample& s : data)
    if (predict(state, cfg, s.image) == s.label) ++correct;
  REQUIRE(correct == 40);
}

TEST_CASE("a zero learning rate leaves the state unchanged") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = init_network(cfg, 5);
  NetworkState before = state;
  Rng rng(42);
  std::vector<Sample> data{{random_image(rng, 8), 0}, {random_image(rng, 8), 3}};
  TrainOptions opts;
  opts.epochs = 3;
  opts.learning_rate = 0.0;
  opts.seed = 1;
  train(state, cfg, data, default_class_weights(5), opts);
  REQUIRE(state == before);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
  NetworkConfig cfg = small_config(8, 5);
  Rng rng(43);
  std::vector<Sample> data;
  for (int i = 0; i < 10; ++i)
    data.push_back({random_image(rng, 8), i % 5});
  auto weights = default_class_weights(5);
  TrainOptions opts;
  opts.epochs = 4;
  opts.learning_rate = 0.01;
  opts.batch_size = 4;
  opts.seed = 77;

  NetworkState a = init_network(cfg, 9);
  TrainResult ra = train(a, cfg, data, weights, opts);
  NetworkState b = init_network(cfg, 9);
  TrainResult rb = train(b, cfg, data, weights, opts);
  REQUIRE(ra.loss_history == rb.loss_history);
  REQUIRE(a == b);

  SECTION("two workers agree with themselves") {
    opts.threads = 2;
    NetworkState c = init_network(cfg, 9);
    TrainResult rc = train(c, cfg, data, weights, opts);
    NetworkState d = init_network(cfg, 9);
    TrainResult rd = train(d, cfg, data, weights, opts);
    REQUIRE(rc.loss_history == rd.loss_history);
    REQUIRE(c == d);
  }
}

TEST_CASE("training reports divergence with the epoch index") {
  NetworkConfig cfg = small_config(8, 1);
  NetworkState state = init_network(cfg, 5);
  Rng rng(44);
  std::vector<Sample> data{{random_image(rng, 8), 1}, {random_image(rng, 8), 0}};
  TrainOptions opts;
  opts.epochs = 50;
  opts.learning_rate = 1e120;
  opts.seed = 3;
  REQUIRE_THROWS_MATCHES(
      train(state, cfg, data, default_class_weights(1), opts), TrainingError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("epoch")));
}

TEST_CASE("training rejects an empty dataset") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = init_network(cfg, 5);
  REQUIRE_THROWS_AS(train(state, cfg, std::vector<Sample>{},
                          default_class_weights(5), TrainOptions{}),
                    TrainingError);
}

TEST_CASE("predict_label thresholds and argmaxes") {
  REQUIRE(predict_label(std::vector<double>{0.49}, 1) == 0);
  REQUIRE(predict_label(std::vector<double>{0.5}, 1) == 1);
  REQUIRE(predict_label(std::vector<double>{0.1, 0.2, 0.9, 0.3, 0.2}, 5) == 2);
}

TEST_CASE("checkpoint round trip is bit exact") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = init_network(cfg, 12345);
  Rng rng(46);
  for (LayerState& l : state.layers)
    for (double& b : l.biases) b = rng.uniform_real(-1.0, 1.0);
  std::ostringstream out(std::ios::binary);
  save_network(out, cfg, state);
  std::istringstream in(out.str(), std::ios::binary);
  auto [cfg2, state2] = load_network(in);
  REQUIRE(cfg2 == cfg);
  REQUIRE(state2 == state);

  SECTION("corrupted magic is rejected") {
    std::string bytes = out.str();
    bytes[0] = 'X';
    std::istringstream bad(bytes, std::ios::binary);
    REQUIRE_THROWS_AS(load_network(bad), ParseError);
  }
  SECTION("truncated file is rejected") {
    std::string bytes = out.str().substr(0, 40);
    std::istringstream bad(bytes, std::ios::binary);
    REQUIRE_THROWS_AS(load_network(bad), Error);
  }
}

TEST_CASE("scores stay strictly inside (0, 1) and losses stay finite") {
  Rng rng(47);
  NetworkConfig cfg = small_config(8, 5);
  for (int rep = 0; rep < 10; ++rep) {
    NetworkState state = init_network(cfg, rng.next_u64());
    // exaggerate the head so saturation is actually exercised
    for (double& w : state.layers[4].weights) w *= 50.0;
    Tensor image = random_image(rng, 8, 0.0, 127.0);
    std::vector<double> scores = forward(state, cfg, image);
    for (double s : scores) {
      REQUIRE(s > 0.0);
      REQUIRE(s < 1.0);
    }
    double loss =
        sample_loss(state, cfg, image, rng.uniform_int(0, 4),
                    default_class_weights(5));
    REQUIRE(std::isfinite(loss));
  }
}

TEST_CASE("batch prediction is order-stable and matches single prediction") {
  NetworkConfig cfg = small_config(8, 5);
  NetworkState state = init_network(cfg, 50);
  Rng rng(51);
  std::vector<Sample> data;
  for (int i = 0; i < 9; ++i) data.push_back({random_image(rng, 8), 0});
  std::vector<int> batch = predict_batch(state, cfg, data, 2);
  for (std::size_t i = 0; i < data.size(); ++i)
    REQUIRE(batch[i] == predict(state, cfg, data[i].image));
}
