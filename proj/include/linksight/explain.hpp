#pragma once

#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "linksight/error.hpp"
#include "linksight/imaging.hpp"
#include "linksight/nn.hpp"

namespace linksight {

/// Input-gradient map for one image and one output unit. Signed values are
/// kept; rendering rescales per image, so lighter pixels mark the inputs
/// the class score is most sensitive to.
struct SaliencyMap {
  int size = 0;
  std::vector<double> cells;  // row-major, size x size
  int target_class = 0;
  std::string image_id;

  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;
};

/// One ReLU's view of the guided backward pass: the forward pre-activations
/// and the gradient that survived the gates.
struct ReluTap {
  int layer_index = 0;
  std::vector<double> pre_activation;
  std::vector<double> gated_gradient;
};

/// Guided backpropagation of the target class score down to the input
/// image. At every ReLU the propagated gradient is zeroed where the forward
/// pre-activation was <= 0 or where the incoming gradient is negative.
/// `target_class` of -1 picks the predicted class.
inline SaliencyMap guided_backprop(const NetworkState& state,
                                   const NetworkConfig& cfg,
                                   const Tensor& image, int target_class,
                                   std::vector<ReluTap>* taps = nullptr) {
  std::vector<LayerShape> shapes = layer_shapes(cfg);
  check_input_shape(cfg, image);
  if (cfg.input_channels != 1)
    throw ParameterError("explain: saliency expects single-channel inputs");
  int label_space = cfg.num_classes == 1 ? 2 : cfg.num_classes;
  if (target_class < -1 || target_class >= label_space)
    throw ParameterError("explain: target class " +
                         std::to_string(target_class) + " out of range");

  detail::NnWorkspace ws;
  detail::run_forward(state, cfg, shapes, image, ws.tape, ws);
  const std::vector<double>& scores = ws.tape.acts.back().values;
  if (target_class < 0) target_class = predict_label(scores, cfg.num_classes);

  // Seed with d(score)/d(logit) of the chosen unit; the binary head's two
  // labels share its single output unit.
  int unit = cfg.num_classes == 1 ? 0 : target_class;
  std::vector<double> dz(scores.size(), 0.0);
  dz[static_cast<std::size_t>(unit)] =
      scores[static_cast<std::size_t>(unit)] *
      (1.0 - scores[static_cast<std::size_t>(unit)]);

  detail::ReluObserver observer;
  detail::ReluObserver* observer_ptr = nullptr;
  if (taps) {
    observer = [taps](int layer, std::span<const double> pre,
                      std::span<const double> gated) {
      ReluTap tap;
      tap.layer_index = layer;
      tap.pre_activation.assign(pre.begin(), pre.end());
      tap.gated_gradient.assign(gated.begin(), gated.end());
      taps->push_back(std::move(tap));
    };
    observer_ptr = &observer;
  }

  Tensor input_grad;
  detail::run_backward(state, cfg, shapes, ws.tape, dz,
                       detail::ReluGate::guided, nullptr, &input_grad, ws,
                       observer_ptr);
  SaliencyMap map;
  map.size = cfg.input_size;
  map.target_class = target_class;
  map.cells = std::move(input_grad.values);
  return map;
}

/// PGM or CSV rendering with the same linear min-max mapping as image
/// export; the largest cell renders as 255.
inline void render_saliency(std::ostream& out, const SaliencyMap& map,
                            ImageFormat format) {
  if (map.size < 1 ||
      map.cells.size() != static_cast<std::size_t>(map.size) * map.size)
    throw ShapeError("explain: malformed saliency map");
  switch (format) {
    case ImageFormat::PGM:
      detail::write_pgm(out, map.size, map.size, map.cells.data());
      return;
    case ImageFormat::CSV:
      detail::write_csv(out, map.size, map.size, map.cells.data());
      return;
  }
  throw ParameterError("explain: unknown image format");
}

inline std::string render_saliency(const SaliencyMap& map, ImageFormat format) {
  std::ostringstream out;
  render_saliency(out, map, format);
  return out.str();
}

}  // namespace linksight
