#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "semfuse/tensor.hpp"

/// Minimal inference engine for plain feed-forward CNNs (VGG-style).
///
/// Only what image optimisation and Grad-CAM need is provided: a forward pass
/// that keeps every intermediate output and a backward pass that propagates
/// gradients to the input or to chosen intermediate outputs. Parameters are
/// never updated.
namespace semfuse::nn {

/// Square convolution, stride 1, zero padding kernel/2. Weights are
/// [out][in][k][k] row-major, matching the torch layout.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  std::vector<float> weight;
  std::vector<float> bias;
};

struct Relu {};

/// 2x2 max pooling, stride 2, ceil mode (a trailing odd row/column forms a partial window).
struct MaxPool2 {};

/// Torch-style adaptive average pooling to a fixed grid.
struct AdaptiveAvgPool {
  int out_height = 7;
  int out_width = 7;
};

/// Fully connected layer on the flattened input. Weights are [out][in].
struct Linear {
  int in_features = 0;
  int out_features = 0;
  std::vector<float> weight;
  std::vector<float> bias;
};

using Layer = std::variant<Conv2d, Relu, MaxPool2, AdaptiveAvgPool, Linear>;

/// Intermediate results of one forward pass; `outputs[i]` is the output of layer i.
struct Activations {
  Tensor input;
  std::vector<Tensor> outputs;

  const Tensor& input_of(std::size_t layer) const { return layer == 0 ? input : outputs[layer - 1]; }
};

/// Gradient of the objective with respect to the output of `layer`.
struct GradientSeed {
  std::size_t layer = 0;
  Tensor gradient;
};

struct BackwardResult {
  Tensor input_gradient;                   ///< empty unless requested
  std::map<std::size_t, Tensor> captured;  ///< gradient w.r.t. the output of each captured layer
};

class Network {
 public:
  /// Appends a layer; `name` (optional) makes its output addressable as a tap.
  std::size_t add(Layer layer, std::string name = {});

  std::size_t size() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Like `find` but throws TapError for unknown names.
  std::size_t index_of(std::string_view name) const;

  /// Runs layers [0, last_layer]. Each call owns its buffers, so concurrent
  /// calls on one network are safe.
  Activations forward(const Tensor& input, std::size_t last_layer) const;
  Activations forward(const Tensor& input) const { return forward(input, size() - 1); }

  /// Backpropagates the seeded gradients. Seeds may sit on any computed
  /// layer and are summed where they meet. Propagation stops at the lowest
  /// captured layer unless `want_input_gradient` is set.
  BackwardResult backward(const Activations& activations, std::span<const GradientSeed> seeds,
                          std::span<const std::size_t> capture, bool want_input_gradient) const;

 private:
  std::vector<Layer> layers_;
  std::vector<std::string> names_;
};

}  // namespace semfuse::nn
