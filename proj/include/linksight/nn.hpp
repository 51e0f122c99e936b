#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/rng.hpp"
#include "linksight/util.hpp"

namespace linksight {

// ---------------------------------------------------------------------------
// Tensors and layer specifications
// ---------------------------------------------------------------------------

/// Dense value container, either an image block (rows x cols x channels,
/// channel index fastest) or a flat vector (cols = channels = 1).
struct Tensor {
  int rows = 0, cols = 0, channels = 0;
  std::vector<double> values;

  static Tensor image(int rows, int cols, int channels) {
    Tensor t;
    t.rows = rows;
    t.cols = cols;
    t.channels = channels;
    t.values.assign(static_cast<std::size_t>(rows) * cols * channels, 0.0);
    return t;
  }
  static Tensor flat(int n) { return image(n, 1, 1); }

  int count() const { return rows * cols * channels; }
  double& at(int r, int c, int k) {
    return values[(static_cast<std::size_t>(r) * cols + c) * channels + k];
  }
  double at(int r, int c, int k) const {
    return values[(static_cast<std::size_t>(r) * cols + c) * channels + k];
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind { conv, maxpool, flatten, dense, output };
enum class Activation { relu, sigmoid };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int filters = 0;
  int kernel_rows = 0, kernel_cols = 0;
  int stride_rows = 1, stride_cols = 1;
  int pad_rows = 0, pad_cols = 0;
  int units = 0;
  Activation activation = Activation::relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec conv_layer(int filters, int kernel, int stride = 1,
                            int padding = 0,
                            Activation act = Activation::relu) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.filters = filters;
  s.kernel_rows = s.kernel_cols = kernel;
  s.stride_rows = s.stride_cols = stride;
  s.pad_rows = s.pad_cols = padding;
  s.activation = act;
  return s;
}

inline LayerSpec maxpool_layer(int kernel, int stride) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.kernel_rows = s.kernel_cols = kernel;
  s.stride_rows = s.stride_cols = stride;
  return s;
}

inline LayerSpec flatten_layer() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

inline LayerSpec dense_layer(int units, Activation act = Activation::relu) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  s.activation = act;
  return s;
}

inline LayerSpec output_layer(int units) {
  LayerSpec s;
  s.kind = LayerKind::output;
  s.units = units;
  s.activation = Activation::sigmoid;
  return s;
}

struct NetworkConfig {
  int input_size = 300;
  int input_channels = 1;
  std::vector<LayerSpec> layers;
  int num_classes = 5;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// The reference topology: four convolutions (3x3 then three 7x7, halving
/// the filter count), one 2x2 max-pool, a 64-unit dense layer and a sigmoid
/// output head. `base_filters` = 128 gives the full-scale stack
/// {128, 64, 32, 16}; smaller bases scale every stage down proportionally.
inline NetworkConfig default_network_config(int input_size, int num_classes,
                                            int base_filters = 128) {
  if (base_filters < 8 || base_filters % 8 != 0)
    throw ParameterError("nn: base_filters must be a positive multiple of 8");
  NetworkConfig cfg;
  cfg.input_size = input_size;
  cfg.input_channels = 1;
  cfg.num_classes = num_classes;
  cfg.layers = {conv_layer(base_filters, 3),
                conv_layer(base_filters / 2, 7),
                conv_layer(base_filters / 4, 7),
                conv_layer(base_filters / 8, 7),
                maxpool_layer(2, 2),
                flatten_layer(),
                dense_layer(64, Activation::relu),
                output_layer(num_classes)};
  return cfg;
}

// ---------------------------------------------------------------------------
// Shape propagation and validation
// ---------------------------------------------------------------------------

struct LayerShape {
  int rows = 0, cols = 0, channels = 0;
  bool flat = false;
  int count() const { return rows * cols * channels; }
};

namespace detail {

/// Output extent of a windowed dimension; rejects non-integral positions.
inline int window_extent(int input, int kernel, int stride, int pad,
                         const char* what) {
  if (kernel < 1 || stride < 1 || pad < 0)
    throw ParameterError(std::string("nn: bad ") + what + " geometry");
  int span = input - kernel + 2 * pad;
  if (span < 0 || span % stride != 0)
    throw ParameterError(std::string("nn: ") + what +
                         " output extent is not a positive integer");
  return span / stride + 1;
}

}  // namespace detail

/// Per-layer output shapes; index 0 is the input shape.
inline std::vector<LayerShape> layer_shapes(const NetworkConfig& cfg) {
  if (cfg.input_size < 1 || cfg.input_channels < 1)
    throw ParameterError("nn: bad input shape");
  if (cfg.num_classes != 1 && cfg.num_classes != 5)
    throw ParameterError("nn: num_classes must be 1 or 5");
  if (cfg.layers.empty()) throw ParameterError("nn: empty layer list");
  std::vector<LayerShape> shapes;
  shapes.push_back({cfg.input_size, cfg.input_size, cfg.input_channels, false});
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const LayerSpec& spec = cfg.layers[l];
    const LayerShape& in = shapes.back();
    LayerShape out;
    switch (spec.kind) {
      case LayerKind::conv: {
        if (in.flat) throw ParameterError("nn: conv layer after flatten");
        if (spec.filters < 1) throw ParameterError("nn: conv needs filters >= 1");
        out.rows = detail::window_extent(in.rows, spec.kernel_rows,
                                         spec.stride_rows, spec.pad_rows, "conv");
        out.cols = detail::window_extent(in.cols, spec.kernel_cols,
                                         spec.stride_cols, spec.pad_cols, "conv");
        out.channels = spec.filters;
        break;
      }
      case LayerKind::maxpool: {
        if (in.flat) throw ParameterError("nn: maxpool after flatten");
        if (spec.pad_rows != 0 || spec.pad_cols != 0)
          throw ParameterError("nn: maxpool does not support padding");
        out.rows = detail::window_extent(in.rows, spec.kernel_rows,
                                         spec.stride_rows, 0, "maxpool");
        out.cols = detail::window_extent(in.cols, spec.kernel_cols,
                                         spec.stride_cols, 0, "maxpool");
        out.channels = in.channels;
        break;
      }
      case LayerKind::flatten: {
        if (in.flat) throw ParameterError("nn: flatten after flatten");
        out = {in.count(), 1, 1, true};
        break;
      }
      case LayerKind::dense:
      case LayerKind::output: {
        if (!in.flat) throw ParameterError("nn: dense layer needs flat input");
        if (spec.units < 1) throw ParameterError("nn: dense needs units >= 1");
        out = {spec.units, 1, 1, true};
        break;
      }
    }
    shapes.push_back(out);
  }
  const LayerSpec& last = cfg.layers.back();
  if (last.kind != LayerKind::output)
    throw ParameterError("nn: last layer must be the output layer");
  if (last.units != cfg.num_classes)
    throw ParameterError("nn: output units must equal num_classes");
  for (std::size_t l = 0; l + 1 < cfg.layers.size(); ++l)
    if (cfg.layers[l].kind == LayerKind::output)
      throw ParameterError("nn: output layer before the end");
  return shapes;
}

inline void validate_config(const NetworkConfig& cfg) { (void)layer_shapes(cfg); }

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LayerState {
  std::vector<double> weights;
  std::vector<double> biases;

  friend bool operator==(const LayerState&, const LayerState&) = default;
};

struct NetworkState {
  std::vector<LayerState> layers;
  std::int64_t parameter_count = 0;

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

namespace detail {

/// Weight/bias element counts for one layer (zeros for pool/flatten).
inline std::pair<std::int64_t, std::int64_t> layer_param_counts(
    const LayerSpec& spec, const LayerShape& in) {
  switch (spec.kind) {
    case LayerKind::conv:
      return {static_cast<std::int64_t>(spec.filters) * spec.kernel_rows *
                  spec.kernel_cols * in.channels,
              spec.filters};
    case LayerKind::dense:
    case LayerKind::output:
      return {static_cast<std::int64_t>(spec.units) * in.count(), spec.units};
    case LayerKind::maxpool:
    case LayerKind::flatten:
      return {0, 0};
  }
  return {0, 0};
}

}  // namespace detail

inline std::int64_t count_params(const NetworkConfig& cfg) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  std::int64_t total = 0;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    auto [w, b] = detail::layer_param_counts(cfg.layers[l], shapes[l]);
    total += w + b;
  }
  return total;
}

inline NetworkState zero_network(const NetworkConfig& cfg) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  NetworkState state;
  state.layers.resize(cfg.layers.size());
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    auto [w, b] = detail::layer_param_counts(cfg.layers[l], shapes[l]);
    state.layers[l].weights.assign(static_cast<std::size_t>(w), 0.0);
    state.layers[l].biases.assign(static_cast<std::size_t>(b), 0.0);
    state.parameter_count += w + b;
  }
  return state;
}

/// Glorot-uniform weights (±sqrt(6/(fan_in+fan_out))), zero biases.
inline NetworkState init_network(const NetworkConfig& cfg, std::uint64_t seed) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  NetworkState state = zero_network(cfg);
  Rng rng(derive_seed(seed, "weight-init"));
  for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
    const LayerSpec& spec = cfg.layers[l];
    double fan_in = 0, fan_out = 0;
    if (spec.kind == LayerKind::conv) {
      fan_in = static_cast<double>(spec.kernel_rows) * spec.kernel_cols *
               shapes[l].channels;
      fan_out = static_cast<double>(spec.kernel_rows) * spec.kernel_cols *
                spec.filters;
    } else if (spec.kind == LayerKind::dense || spec.kind == LayerKind::output) {
      fan_in = shapes[l].count();
      fan_out = spec.units;
    } else {
      continue;
    }
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& w : state.layers[l].weights)
      w = rng.uniform_real(-bound, bound);
  }
  return state;
}

// ---------------------------------------------------------------------------
// FLOPs model: one multiply-accumulate pair counts as two operations plus
// one per-position bias add; ReLU adds one comparison and one multiplication.
// ---------------------------------------------------------------------------

/// Operations one conv filter spends scanning its input:
/// out_rows * out_cols * (2 * channels * kernel_rows * kernel_cols + 1).
inline std::int64_t conv_flops_per_filter(const LayerSpec& spec,
                                          const LayerShape& in) {
  if (spec.kind != LayerKind::conv)
    throw ParameterError("nn: conv_flops_per_filter on a non-conv layer");
  std::int64_t out_r = detail::window_extent(in.rows, spec.kernel_rows,
                                             spec.stride_rows, spec.pad_rows, "conv");
  std::int64_t out_c = detail::window_extent(in.cols, spec.kernel_cols,
                                             spec.stride_cols, spec.pad_cols, "conv");
  std::int64_t per_position =
      2ll * in.channels * spec.kernel_rows * spec.kernel_cols + 1;
  return out_r * out_c * per_position;
}

inline std::int64_t layer_flops(const LayerSpec& spec, const LayerShape& in) {
  switch (spec.kind) {
    case LayerKind::conv: {
      std::int64_t per_filter = conv_flops_per_filter(spec, in);
      std::int64_t relu_surcharge =
          spec.activation == Activation::relu
              ? 2ll * in.channels * spec.kernel_rows * spec.kernel_cols + 1
              : 0;
      return (per_filter + relu_surcharge) * spec.filters;
    }
    case LayerKind::maxpool: {
      std::int64_t out_r = detail::window_extent(in.rows, spec.kernel_rows,
                                                 spec.stride_rows, 0, "maxpool");
      std::int64_t out_c = detail::window_extent(in.cols, spec.kernel_cols,
                                                 spec.stride_cols, 0, "maxpool");
      // one comparison per reduction step inside each window
      return out_r * out_c * in.channels *
             (static_cast<std::int64_t>(spec.kernel_rows) * spec.kernel_cols - 1);
    }
    case LayerKind::flatten:
      return 0;
    case LayerKind::dense:
    case LayerKind::output: {
      std::int64_t in_n = in.count();
      std::int64_t base = 2ll * in_n * spec.units + spec.units;
      std::int64_t relu_surcharge =
          spec.activation == Activation::relu ? 2ll * spec.units : 0;
      return base + relu_surcharge;
    }
  }
  return 0;
}

inline std::int64_t count_flops(const NetworkConfig& cfg) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  std::int64_t total = 0;
  for (std::size_t l = 0; l < cfg.layers.size(); ++l)
    total += layer_flops(cfg.layers[l], shapes[l]);
  return total;
}

/// Theoretical energy cost of one prediction in joules; the default divisor
/// is the 53.8 GFLOPS/W figure of an RTX 2080 Ti at float32.
inline double tec(double flops, double flops_per_watt = 53.8e9) {
  if (!(flops_per_watt > 0.0))
    throw ParameterError("nn: flops_per_watt must be > 0");
  return flops / flops_per_watt;
}

// ---------------------------------------------------------------------------
// Forward / backward passes
// ---------------------------------------------------------------------------

namespace detail {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline double sigmoid_clamped(double z) {
  double p = 1.0 / (1.0 + std::exp(-z));
  if (p <= 0.0) return std::numeric_limits<double>::min();
  if (p >= 1.0) return std::nextafter(1.0, 0.0);
  return p;
}

/// Forward tape: activations per layer (index 0 = the input) plus
/// pre-activations and pool argmax indices where applicable.
struct ForwardTape {
  std::vector<Tensor> acts;
  std::vector<Tensor> pres;
  std::vector<std::vector<int>> pool_argmax;
};

/// Scratch shared across samples by one worker; avoids reallocating the
/// im2col buffers, which dominate transient memory.
struct NnWorkspace {
  std::vector<double> col;
  std::vector<double> mat;
  std::vector<double> dcol;
  std::vector<double> dmat;
  ForwardTape tape;
};

// im2col row blocks are capped so the buffer never exceeds ~64 MB no matter
// how large the network input is.
inline constexpr std::size_t kColBlockCap = std::size_t{1} << 23;

inline int conv_block_rows(std::int64_t col_rows, std::int64_t out_cols,
                           int out_rows) {
  std::int64_t per_row = col_rows * out_cols;
  if (per_row <= 0) return out_rows;
  std::int64_t rows = static_cast<std::int64_t>(kColBlockCap) / per_row;
  return static_cast<int>(std::clamp<std::int64_t>(rows, 1, out_rows));
}

/// Gathers input patches for output rows [oy0, oy1) into a
/// (K_r*K_c*C) x ((oy1-oy0)*out_cols) column matrix. Out-of-bounds taps
/// (padding) contribute zeros.
inline void im2col_block(const Tensor& in, const LayerSpec& spec, int out_cols,
                         int oy0, int oy1, std::vector<double>& col) {
  const int kr = spec.kernel_rows, kc = spec.kernel_cols;
  const int sr = spec.stride_rows, sc = spec.stride_cols;
  const int pr = spec.pad_rows, pc = spec.pad_cols;
  const int channels = in.channels;
  const std::size_t block = static_cast<std::size_t>(oy1 - oy0) * out_cols;
  col.assign(static_cast<std::size_t>(kr) * kc * channels * block, 0.0);
  for (int ky = 0; ky < kr; ++ky) {
    for (int kx = 0; kx < kc; ++kx) {
      for (int ci = 0; ci < channels; ++ci) {
        double* dst =
            col.data() +
            (static_cast<std::size_t>(ky) * kc + kx) * channels * block +
            static_cast<std::size_t>(ci) * block;
        for (int oy = oy0; oy < oy1; ++oy) {
          int iy = oy * sr + ky - pr;
          double* row_dst = dst + static_cast<std::size_t>(oy - oy0) * out_cols;
          if (iy < 0 || iy >= in.rows) continue;
          for (int ox = 0; ox < out_cols; ++ox) {
            int ix = ox * sc + kx - pc;
            if (ix < 0 || ix >= in.cols) continue;
            row_dst[ox] = in.at(iy, ix, ci);
          }
        }
      }
    }
  }
}

/// Scatter-add of a column-matrix gradient block back onto the input.
inline void col2im_block(const std::vector<double>& dcol, const LayerSpec& spec,
                         int out_cols, int oy0, int oy1, Tensor& din) {
  const int kr = spec.kernel_rows, kc = spec.kernel_cols;
  const int sr = spec.stride_rows, sc = spec.stride_cols;
  const int pr = spec.pad_rows, pc = spec.pad_cols;
  const int channels = din.channels;
  const std::size_t block = static_cast<std::size_t>(oy1 - oy0) * out_cols;
  for (int ky = 0; ky < kr; ++ky) {
    for (int kx = 0; kx < kc; ++kx) {
      for (int ci = 0; ci < channels; ++ci) {
        const double* src =
            dcol.data() +
            (static_cast<std::size_t>(ky) * kc + kx) * channels * block +
            static_cast<std::size_t>(ci) * block;
        for (int oy = oy0; oy < oy1; ++oy) {
          int iy = oy * sr + ky - pr;
          if (iy < 0 || iy >= din.rows) continue;
          const double* row_src = src + static_cast<std::size_t>(oy - oy0) * out_cols;
          for (int ox = 0; ox < out_cols; ++ox) {
            int ix = ox * sc + kx - pc;
            if (ix < 0 || ix >= din.cols) continue;
            din.at(iy, ix, ci) += row_src[ox];
          }
        }
      }
    }
  }
}

inline void conv_forward(const LayerSpec& spec, const LayerState& params,
                         const Tensor& in, Tensor& pre, Tensor& act,
                         NnWorkspace& ws) {
  const int filters = spec.filters;
  const int col_rows = spec.kernel_rows * spec.kernel_cols * in.channels;
  const int out_rows = pre.rows, out_cols = pre.cols;
  const int block_rows = conv_block_rows(col_rows, out_cols, out_rows);
  ConstMatMap weights(params.weights.data(), filters, col_rows);
  for (int oy0 = 0; oy0 < out_rows; oy0 += block_rows) {
    int oy1 = std::min(out_rows, oy0 + block_rows);
    std::size_t block = static_cast<std::size_t>(oy1 - oy0) * out_cols;
    im2col_block(in, spec, out_cols, oy0, oy1, ws.col);
    ws.mat.resize(static_cast<std::size_t>(filters) * block);
    MatMap out_mat(ws.mat.data(), filters, static_cast<Eigen::Index>(block));
    ConstMatMap col(ws.col.data(), col_rows, static_cast<Eigen::Index>(block));
    out_mat.noalias() = weights * col;
    for (int f = 0; f < filters; ++f) {
      const double bias = params.biases[static_cast<std::size_t>(f)];
      const double* src = ws.mat.data() + static_cast<std::size_t>(f) * block;
      for (std::size_t p = 0; p < block; ++p) {
        int oy = oy0 + static_cast<int>(p) / out_cols;
        int ox = static_cast<int>(p) % out_cols;
        double z = src[p] + bias;
        pre.at(oy, ox, f) = z;
        act.at(oy, ox, f) =
            spec.activation == Activation::relu ? std::max(0.0, z)
                                                : sigmoid_clamped(z);
      }
    }
  }
}

/// Backward step of one conv layer. `dout` holds dL/dz of this layer
/// (activation derivative already applied). Accumulates weight/bias
/// gradients when `grad` is given and input gradients when `din` is given.
inline void conv_backward(const LayerSpec& spec, const LayerState& params,
                          const Tensor& in, const Tensor& dout,
                          LayerState* grad, Tensor* din, NnWorkspace& ws) {
  const int filters = spec.filters;
  const int col_rows = spec.kernel_rows * spec.kernel_cols * in.channels;
  const int out_rows = dout.rows, out_cols = dout.cols;
  const int block_rows = conv_block_rows(col_rows, out_cols, out_rows);
  ConstMatMap weights(params.weights.data(), filters, col_rows);
  for (int oy0 = 0; oy0 < out_rows; oy0 += block_rows) {
    int oy1 = std::min(out_rows, oy0 + block_rows);
    std::size_t block = static_cast<std::size_t>(oy1 - oy0) * out_cols;
    // gather dL/dz for the block into filter-major form
    ws.dmat.resize(static_cast<std::size_t>(filters) * block);
    for (int f = 0; f < filters; ++f) {
      double* dst = ws.dmat.data() + static_cast<std::size_t>(f) * block;
      for (std::size_t p = 0; p < block; ++p) {
        int oy = oy0 + static_cast<int>(p) / out_cols;
        int ox = static_cast<int>(p) % out_cols;
        dst[p] = dout.at(oy, ox, f);
      }
    }
    MatMap dout_mat(ws.dmat.data(), filters, static_cast<Eigen::Index>(block));
    if (grad) {
      im2col_block(in, spec, out_cols, oy0, oy1, ws.col);
      ConstMatMap col(ws.col.data(), col_rows, static_cast<Eigen::Index>(block));
      MatMap dweights(grad->weights.data(), filters, col_rows);
      dweights.noalias() += dout_mat * col.transpose();
      for (int f = 0; f < filters; ++f)
        grad->biases[static_cast<std::size_t>(f)] +=
            dout_mat.row(f).sum();
    }
    if (din) {
      ws.dcol.resize(static_cast<std::size_t>(col_rows) * block);
      MatMap dcol(ws.dcol.data(), col_rows, static_cast<Eigen::Index>(block));
      dcol.noalias() = weights.transpose() * dout_mat;
      col2im_block(ws.dcol, spec, out_cols, oy0, oy1, *din);
    }
  }
}

inline void maxpool_forward(const LayerSpec& spec, const Tensor& in,
                            Tensor& out, std::vector<int>& argmax) {
  argmax.assign(static_cast<std::size_t>(out.count()), 0);
  for (int oy = 0; oy < out.rows; ++oy) {
    for (int ox = 0; ox < out.cols; ++ox) {
      for (int k = 0; k < out.channels; ++k) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = 0;
        for (int ky = 0; ky < spec.kernel_rows; ++ky) {
          for (int kx = 0; kx < spec.kernel_cols; ++kx) {
            int iy = oy * spec.stride_rows + ky;
            int ix = ox * spec.stride_cols + kx;
            double v = in.at(iy, ix, k);
            if (v > best) {
              best = v;
              best_idx = (iy * in.cols + ix) * in.channels + k;
            }
          }
        }
        out.at(oy, ox, k) = best;
        argmax[(static_cast<std::size_t>(oy) * out.cols + ox) * out.channels + k] =
            best_idx;
      }
    }
  }
}

inline void dense_forward(const LayerSpec& spec, const LayerState& params,
                          const Tensor& in, Tensor& pre, Tensor& act) {
  const int n_in = in.count();
  const int n_out = spec.units;
  ConstMatMap weights(params.weights.data(), n_out, n_in);
  ConstVecMap x(in.values.data(), n_in);
  ConstVecMap b(params.biases.data(), n_out);
  VecMap z(pre.values.data(), n_out);
  z.noalias() = weights * x + b;
  for (int o = 0; o < n_out; ++o)
    act.values[static_cast<std::size_t>(o)] =
        spec.activation == Activation::relu
            ? std::max(0.0, pre.values[static_cast<std::size_t>(o)])
            : sigmoid_clamped(pre.values[static_cast<std::size_t>(o)]);
}

inline void run_forward(const NetworkState& state, const NetworkConfig& cfg,
                        const std::vector<LayerShape>& shapes,
                        const Tensor& input, ForwardTape& tape,
                        NnWorkspace& ws) {
  const std::size_t n_layers = cfg.layers.size();
  tape.acts.resize(n_layers + 1);
  tape.pres.resize(n_layers);
  tape.pool_argmax.resize(n_layers);
  tape.acts[0] = input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerSpec& spec = cfg.layers[l];
    const LayerShape& os = shapes[l + 1];
    Tensor& out = tape.acts[l + 1];
    if (out.rows != os.rows || out.cols != os.cols || out.channels != os.channels)
      out = Tensor::image(os.rows, os.cols, os.channels);
    switch (spec.kind) {
      case LayerKind::conv: {
        Tensor& pre = tape.pres[l];
        if (pre.rows != os.rows || pre.cols != os.cols ||
            pre.channels != os.channels)
          pre = Tensor::image(os.rows, os.cols, os.channels);
        conv_forward(spec, state.layers[l], tape.acts[l], pre, out, ws);
        break;
      }
      case LayerKind::maxpool:
        maxpool_forward(spec, tape.acts[l], out, tape.pool_argmax[l]);
        break;
      case LayerKind::flatten:
        out.values = tape.acts[l].values;
        break;
      case LayerKind::dense:
      case LayerKind::output: {
        Tensor& pre = tape.pres[l];
        if (pre.rows != os.count() || pre.cols != 1 || pre.channels != 1)
          pre = Tensor::flat(os.count());
        dense_forward(spec, state.layers[l], tape.acts[l], pre, out);
        break;
      }
    }
  }
}

enum class ReluGate { standard, guided };

/// Observer called at every ReLU during the backward pass with the layer
/// index, the pre-activations and the gated gradient that continues
/// downward.
using ReluObserver =
    std::function<void(int, std::span<const double>, std::span<const double>)>;

/// Backward pass from dL/dz of the output layer down to the input.
/// `param_grads` (when given) receives += contributions; `input_grad` (when
/// given) receives the gradient with respect to the network input.
inline void run_backward(const NetworkState& state, const NetworkConfig& cfg,
                         const std::vector<LayerShape>& shapes,
                         const ForwardTape& tape,
                         std::span<const double> output_dz, ReluGate gate,
                         std::vector<LayerState>* param_grads,
                         Tensor* input_grad, NnWorkspace& ws,
                         const ReluObserver* observer = nullptr) {
  const std::size_t n_layers = cfg.layers.size();
  Tensor d_act;  // dL/d(activation of layer l), walking downward
  Tensor d_below;
  for (std::size_t li = n_layers; li-- > 0;) {
    const LayerSpec& spec = cfg.layers[li];
    const LayerShape& os = shapes[li + 1];
    const LayerShape& is = shapes[li];
    const bool need_below = li > 0 || input_grad != nullptr;

    // dL/dz for this layer
    Tensor d_pre;
    if (li == n_layers - 1) {
      d_pre = Tensor::flat(os.count());
      std::copy(output_dz.begin(), output_dz.end(), d_pre.values.begin());
    } else if (spec.kind == LayerKind::conv || spec.kind == LayerKind::dense) {
      d_pre = std::move(d_act);
      const Tensor& pre = tape.pres[li];
      if (spec.activation == Activation::relu) {
        for (std::size_t i = 0; i < d_pre.values.size(); ++i) {
          bool pass = pre.values[i] > 0.0 &&
                      (gate == ReluGate::standard || d_pre.values[i] > 0.0);
          if (!pass) d_pre.values[i] = 0.0;
        }
        if (observer)
          (*observer)(static_cast<int>(li), pre.values, d_pre.values);
      } else {
        const Tensor& act = tape.acts[li + 1];
        for (std::size_t i = 0; i < d_pre.values.size(); ++i)
          d_pre.values[i] *= act.values[i] * (1.0 - act.values[i]);
      }
    } else {
      d_pre = std::move(d_act);  // pool/flatten have no activation
    }

    // propagate through the layer body
    switch (spec.kind) {
      case LayerKind::conv: {
        if (need_below) {
          d_below = Tensor::image(is.rows, is.cols, is.channels);
          std::fill(d_below.values.begin(), d_below.values.end(), 0.0);
        }
        conv_backward(spec, state.layers[li], tape.acts[li], d_pre,
                      param_grads ? &(*param_grads)[li] : nullptr,
                      need_below ? &d_below : nullptr, ws);
        break;
      }
      case LayerKind::maxpool: {
        if (!need_below) break;
        d_below = Tensor::image(is.rows, is.cols, is.channels);
        std::fill(d_below.values.begin(), d_below.values.end(), 0.0);
        const std::vector<int>& argmax = tape.pool_argmax[li];
        for (std::size_t p = 0; p < d_pre.values.size(); ++p)
          d_below.values[static_cast<std::size_t>(argmax[p])] += d_pre.values[p];
        break;
      }
      case LayerKind::flatten: {
        if (!need_below) break;
        d_below = Tensor::image(is.rows, is.cols, is.channels);
        d_below.values = std::move(d_pre.values);
        break;
      }
      case LayerKind::dense:
      case LayerKind::output: {
        const int n_in = is.count();
        const int n_out = spec.units;
        ConstMatMap weights(state.layers[li].weights.data(), n_out, n_in);
        ConstVecMap dz(d_pre.values.data(), n_out);
        if (param_grads) {
          LayerState& g = (*param_grads)[li];
          ConstVecMap x(tape.acts[li].values.data(), n_in);
          MatMap dweights(g.weights.data(), n_out, n_in);
          dweights.noalias() += dz * x.transpose();
          VecMap dbias(g.biases.data(), n_out);
          dbias.noalias() += dz;
        }
        if (need_below) {
          d_below = Tensor::flat(n_in);
          VecMap dx(d_below.values.data(), n_in);
          dx.noalias() = weights.transpose() * dz;
        }
        break;
      }
    }
    if (li == 0) {
      if (input_grad) *input_grad = std::move(d_below);
    } else {
      d_act = std::move(d_below);
    }
  }
}

/// Numerically stable binary cross entropy on a logit.
inline double bce_from_logit(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

inline void check_class_weights(std::span<const double> weights,
                                int num_classes) {
  std::size_t expected = num_classes == 1 ? 2 : static_cast<std::size_t>(num_classes);
  if (weights.size() != expected)
    throw ParameterError("nn: class_weights must have " +
                         std::to_string(expected) + " entries");
  for (double w : weights)
    if (w < 0.0) throw ParameterError("nn: class weights must be >= 0");
}

/// Weighted one-vs-all BCE loss and its gradient on the output logits.
/// The whole sample loss scales with the weight of the sample's true class.
inline double loss_and_output_dz(std::span<const double> logits,
                                 std::span<const double> scores, int target,
                                 std::span<const double> class_weights,
                                 int num_classes, std::vector<double>& dz) {
  int label_space = num_classes == 1 ? 2 : num_classes;
  if (target < 0 || target >= label_space)
    throw ParameterError("nn: target class out of range");
  double w = class_weights[static_cast<std::size_t>(target)];
  double loss = 0.0;
  dz.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    double t;
    if (num_classes == 1)
      t = target == 1 ? 1.0 : 0.0;
    else
      t = static_cast<int>(c) == target ? 1.0 : 0.0;
    loss += bce_from_logit(logits[c], t);
    dz[c] = w * (scores[c] - t);
  }
  return w * loss;
}

}  // namespace detail

inline std::vector<double> default_class_weights(int num_classes) {
  if (num_classes == 1) return {0.1, 1.0};  // {normal, anomalous}
  std::vector<double> w(static_cast<std::size_t>(num_classes), 1.0);
  w.back() = 0.1;  // the majority "no anomaly" class sits last
  return w;
}

inline void check_input_shape(const NetworkConfig& cfg, const Tensor& image) {
  if (image.rows != cfg.input_size || image.cols != cfg.input_size ||
      image.channels != cfg.input_channels)
    throw ShapeError("nn: input tensor is " + std::to_string(image.rows) + "x" +
                     std::to_string(image.cols) + "x" +
                     std::to_string(image.channels) + ", expected " +
                     std::to_string(cfg.input_size) + "x" +
                     std::to_string(cfg.input_size) + "x" +
                     std::to_string(cfg.input_channels));
}

/// Class scores in (0, 1), one sigmoid per output unit.
inline std::vector<double> forward(const NetworkState& state,
                                   const NetworkConfig& cfg,
                                   const Tensor& image) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  check_input_shape(cfg, image);
  detail::NnWorkspace ws;
  detail::run_forward(state, cfg, shapes, image, ws.tape, ws);
  return ws.tape.acts.back().values;
}

/// Predicted label: argmax score for the multiclass head, score >= 0.5 for
/// the single-unit binary head.
inline int predict_label(std::span<const double> scores, int num_classes) {
  if (num_classes == 1) return scores[0] >= 0.5 ? 1 : 0;
  return static_cast<int>(
      std::max_element(scores.begin(), scores.end()) - scores.begin());
}

inline int predict(const NetworkState& state, const NetworkConfig& cfg,
                   const Tensor& image) {
  return predict_label(forward(state, cfg, image), cfg.num_classes);
}

struct Sample {
  Tensor image;
  int label = 0;
};

/// Weighted loss of one sample at the current parameters.
inline double sample_loss(const NetworkState& state, const NetworkConfig& cfg,
                          const Tensor& image, int target,
                          std::span<const double> class_weights) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  check_input_shape(cfg, image);
  detail::check_class_weights(class_weights, cfg.num_classes);
  detail::NnWorkspace ws;
  detail::run_forward(state, cfg, shapes, image, ws.tape, ws);
  std::vector<double> dz;
  return detail::loss_and_output_dz(ws.tape.pres.back().values,
                                    ws.tape.acts.back().values, target,
                                    class_weights, cfg.num_classes, dz);
}

struct Gradients {
  std::vector<LayerState> layers;
  Tensor input_gradient;
  std::vector<double> scores;
  double loss = 0.0;
};

/// Exact analytic gradients of the weighted loss for one sample.
inline Gradients gradients(const NetworkState& state, const NetworkConfig& cfg,
                           const Tensor& image, int target,
                           std::span<const double> class_weights) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  check_input_shape(cfg, image);
  detail::check_class_weights(class_weights, cfg.num_classes);
  detail::NnWorkspace ws;
  detail::run_forward(state, cfg, shapes, image, ws.tape, ws);
  Gradients out;
  out.layers = zero_network(cfg).layers;
  out.scores = ws.tape.acts.back().values;
  std::vector<double> dz;
  out.loss = detail::loss_and_output_dz(ws.tape.pres.back().values, out.scores,
                                        target, class_weights, cfg.num_classes,
                                        dz);
  detail::run_backward(state, cfg, shapes, ws.tape, dz,
                       detail::ReluGate::standard, &out.layers,
                       &out.input_gradient, ws);
  return out;
}

struct TrainOptions {
  int epochs = 10;
  double learning_rate = 1e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean weighted loss per epoch
};

/// Mini-batch gradient descent with a fixed learning rate. Shuffling is
/// seeded; per-worker gradient blocks are reduced in worker order, so a run
/// is fully reproducible for a given (seed, threads) pair.
inline TrainResult train(NetworkState& state, const NetworkConfig& cfg,
                         std::span<const Sample> data,
                         std::span<const double> class_weights,
                         const TrainOptions& opts) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  detail::check_class_weights(class_weights, cfg.num_classes);
  if (data.empty()) throw TrainingError("nn: empty training set");
  if (opts.epochs < 0) throw ParameterError("nn: epochs must be >= 0");
  if (opts.batch_size < 1) throw ParameterError("nn: batch_size must be >= 1");
  for (const Sample& s : data) check_input_shape(cfg, s.image);

  const std::size_t n = data.size();
  const int workers = std::max(
      1, std::min(detail::resolve_threads(opts.threads),
                  static_cast<int>(std::min<std::size_t>(
                      n, static_cast<std::size_t>(opts.batch_size)))));
  std::vector<detail::NnWorkspace> workspaces(static_cast<std::size_t>(workers));
  std::vector<std::vector<LayerState>> worker_grads(
      static_cast<std::size_t>(workers), zero_network(cfg).layers);
  std::vector<double> sample_losses(n);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(opts.epochs));
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(opts.seed, "epoch-shuffle",
                                static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = 0; i + 1 < n; ++i) {
      std::size_t j = i + static_cast<std::size_t>(shuffle_rng.next_u64() % (n - i));
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t batch_lo = 0; batch_lo < n;
         batch_lo += static_cast<std::size_t>(opts.batch_size)) {
      std::size_t batch_hi =
          std::min(n, batch_lo + static_cast<std::size_t>(opts.batch_size));
      std::size_t batch_n = batch_hi - batch_lo;
      for (auto& wg : worker_grads)
        for (auto& layer : wg) {
          std::fill(layer.weights.begin(), layer.weights.end(), 0.0);
          std::fill(layer.biases.begin(), layer.biases.end(), 0.0);
        }
      detail::parallel_chunks(
          batch_n, workers, [&](int w, std::size_t lo, std::size_t hi) {
            detail::NnWorkspace& ws = workspaces[static_cast<std::size_t>(w)];
            std::vector<double> dz;
            for (std::size_t b = lo; b < hi; ++b) {
              const Sample& sample = data[order[batch_lo + b]];
              detail::run_forward(state, cfg, shapes, sample.image, ws.tape, ws);
              double loss = detail::loss_and_output_dz(
                  ws.tape.pres.back().values, ws.tape.acts.back().values,
                  sample.label, class_weights, cfg.num_classes, dz);
              sample_losses[batch_lo + b] = loss;
              detail::run_backward(state, cfg, shapes, ws.tape, dz,
                                   detail::ReluGate::standard,
                                   &worker_grads[static_cast<std::size_t>(w)],
                                   nullptr, ws);
            }
          });
      double batch_loss = 0.0;
      for (std::size_t b = batch_lo; b < batch_hi; ++b)
        batch_loss += sample_losses[b];
      if (!std::isfinite(batch_loss))
        throw TrainingError("nn: non-finite loss at epoch " +
                            std::to_string(epoch));
      epoch_loss += batch_loss;
      const double scale = opts.learning_rate / static_cast<double>(batch_n);
      for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        LayerState& target = state.layers[l];
        if (target.weights.empty() && target.biases.empty()) continue;
        for (int w = 0; w < workers; ++w) {
          const LayerState& g = worker_grads[static_cast<std::size_t>(w)][l];
          for (std::size_t i = 0; i < target.weights.size(); ++i)
            target.weights[i] -= scale * g.weights[i];
          for (std::size_t i = 0; i < target.biases.size(); ++i)
            target.biases[i] -= scale * g.biases[i];
        }
      }
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  return result;
}

/// Batch prediction; parallel across samples with slot-addressed outputs.
inline std::vector<int> predict_batch(const NetworkState& state,
                                      const NetworkConfig& cfg,
                                      std::span<const Sample> data,
                                      int threads = 1) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  for (const Sample& s : data) check_input_shape(cfg, s.image);
  std::vector<int> out(data.size());
  detail::parallel_chunks(data.size(), threads,
                          [&](int, std::size_t lo, std::size_t hi) {
                            detail::NnWorkspace ws;
                            for (std::size_t i = lo; i < hi; ++i) {
                              detail::run_forward(state, cfg, shapes,
                                                  data[i].image, ws.tape, ws);
                              out[i] = predict_label(ws.tape.acts.back().values,
                                                     cfg.num_classes);
                            }
                          });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "LSNC" magic, format version, byte-order tag, topology,
// then per-layer weight/bias blocks as little-endian 64-bit floats.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void write_f64(std::ostream& out, double v) {
  write_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("nn: truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw IoError("nn: truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& in) {
  return std::bit_cast<double>(read_u64(in));
}

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kByteOrderTag = 0x01020304;

}  // namespace detail

inline void save_network(std::ostream& out, const NetworkConfig& cfg,
                         const NetworkState& state) {
  if (state.layers.size() != cfg.layers.size())
    throw ShapeError("nn: state does not match config");
  out.write("LSNC", 4);
  detail::write_u32(out, detail::kCheckpointVersion);
  detail::write_u32(out, detail::kByteOrderTag);
  detail::write_u32(out, static_cast<std::uint32_t>(cfg.input_size));
  detail::write_u32(out, static_cast<std::uint32_t>(cfg.input_channels));
  detail::write_u32(out, static_cast<std::uint32_t>(cfg.num_classes));
  detail::write_u32(out, static_cast<std::uint32_t>(cfg.layers.size()));
  for (const LayerSpec& s : cfg.layers) {
    detail::write_u32(out, static_cast<std::uint32_t>(s.kind));
    detail::write_u32(out, static_cast<std::uint32_t>(s.activation));
    detail::write_u32(out, static_cast<std::uint32_t>(s.filters));
    detail::write_u32(out, static_cast<std::uint32_t>(s.kernel_rows));
    detail::write_u32(out, static_cast<std::uint32_t>(s.kernel_cols));
    detail::write_u32(out, static_cast<std::uint32_t>(s.stride_rows));
    detail::write_u32(out, static_cast<std::uint32_t>(s.stride_cols));
    detail::write_u32(out, static_cast<std::uint32_t>(s.pad_rows));
    detail::write_u32(out, static_cast<std::uint32_t>(s.pad_cols));
    detail::write_u32(out, static_cast<std::uint32_t>(s.units));
  }
  detail::write_u64(out, static_cast<std::uint64_t>(state.parameter_count));
  for (const LayerState& layer : state.layers) {
    detail::write_u64(out, layer.weights.size());
    for (double w : layer.weights) detail::write_f64(out, w);
    detail::write_u64(out, layer.biases.size());
    for (double b : layer.biases) detail::write_f64(out, b);
  }
  if (!out) throw IoError("nn: checkpoint write failed");
}

inline std::pair<NetworkConfig, NetworkState> load_network(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "LSNC", 4) != 0)
    throw ParseError("nn: not a checkpoint file");
  if (detail::read_u32(in) != detail::kCheckpointVersion)
    throw ParseError("nn: unsupported checkpoint version");
  if (detail::read_u32(in) != detail::kByteOrderTag)
    throw ParseError("nn: checkpoint byte order mismatch");
  NetworkConfig cfg;
  cfg.input_size = static_cast<int>(detail::read_u32(in));
  cfg.input_channels = static_cast<int>(detail::read_u32(in));
  cfg.num_classes = static_cast<int>(detail::read_u32(in));
  std::uint32_t n_layers = detail::read_u32(in);
  cfg.layers.resize(n_layers);
  for (LayerSpec& s : cfg.layers) {
    s.kind = static_cast<LayerKind>(detail::read_u32(in));
    s.activation = static_cast<Activation>(detail::read_u32(in));
    s.filters = static_cast<int>(detail::read_u32(in));
    s.kernel_rows = static_cast<int>(detail::read_u32(in));
    s.kernel_cols = static_cast<int>(detail::read_u32(in));
    s.stride_rows = static_cast<int>(detail::read_u32(in));
    s.stride_cols = static_cast<int>(detail::read_u32(in));
    s.pad_rows = static_cast<int>(detail::read_u32(in));
    s.pad_cols = static_cast<int>(detail::read_u32(in));
    s.units = static_cast<int>(detail::read_u32(in));
  }
  validate_config(cfg);
  std::uint64_t expected_params = detail::read_u64(in);
  NetworkState state;
  state.layers.resize(n_layers);
  for (LayerState& layer : state.layers) {
    layer.weights.resize(detail::read_u64(in));
    for (double& w : layer.weights) w = detail::read_f64(in);
    layer.biases.resize(detail::read_u64(in));
    for (double& b : layer.biases) b = detail::read_f64(in);
    state.parameter_count +=
        static_cast<std::int64_t>(layer.weights.size() + layer.biases.size());
  }
  if (static_cast<std::uint64_t>(state.parameter_count) != expected_params)
    throw ParseError("nn: checkpoint parameter count mismatch");
  if (state.parameter_count != count_params(cfg))
    throw ParseError("nn: checkpoint parameters do not match topology");
  return {std::move(cfg), std::move(state)};
}

}  // namespace linksight
