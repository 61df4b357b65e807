#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semfuse/image.hpp"
#include "semfuse/nn.hpp"
#include "semfuse/safetensors.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

/// The sixteen convolutional outputs of VGG19, shallow to deep.
inline constexpr std::array<std::string_view, 16> kVgg19ConvLayers = {
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4",
    "conv4_1", "conv4_2", "conv4_3", "conv4_4", "conv5_1", "conv5_2", "conv5_3", "conv5_4"};

/// Per-channel ImageNet statistics applied by `preprocess`.
inline constexpr std::array<float, 3> kImageNetMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kImageNetStd = {0.229f, 0.224f, 0.225f};

/// Spatial size the classifier head was trained at.
inline constexpr int kClassifierSide = 224;

/// A named post-ReLU convolutional output of VGG19.
struct LayerTap {
  std::string name;
  int resolution_divisor = 1;

  /// Throws TapError unless `name` is one of kVgg19ConvLayers.
  static LayerTap named(std::string_view name);

  friend auto operator<=>(const LayerTap&, const LayerTap&) = default;
};

/// Layer set used by the fusion loss by default: {conv1_1}.
std::vector<LayerTap> default_loss_layers();
/// Layer set combined into CAM maps: {conv3_4, conv4_4, conv5_4}.
std::vector<LayerTap> cam_layers();
/// Parses a comma separated list such as "conv1_1,conv2_1".
std::vector<LayerTap> parse_layer_list(std::string_view text);

struct FeatureMap {
  Tensor values;  ///< C_l x ceil(H/d) x ceil(W/d)
  LayerTap source_layer;
  std::string source_image_id;
};

using FeatureMaps = std::map<LayerTap, FeatureMap>;

/// Normalised 3-channel network input.
struct NetworkInput {
  Tensor values;
};

struct ClassPrediction {
  int class_id = -1;
  std::string class_label;
  double probability = 0.0;
};

/// Objective evaluated on tapped feature maps together with its gradient
/// with respect to each of them.
struct ObjectiveValue {
  double value = 0.0;
  std::map<LayerTap, Tensor> gradients;
};
using Objective = std::function<ObjectiveValue(const FeatureMaps&)>;

struct GradientResult {
  double value = 0.0;
  Tensor gradient;  ///< d objective / d input, shaped like NetworkInput
};

/// Replicates grayscale to RGB and applies ImageNet mean/std per channel.
/// No resizing; throws SizeError below 32x32 and ContractError for
/// non-finite pixels. Values outside [0, 1] are accepted so optimisation
/// candidates can be fed directly.
NetworkInput preprocess(const Image& image);

/// Chain rule through `preprocess`: maps d/d(network input) to d/d(image
/// pixels) for an image of colour space `cs`.
Tensor input_gradient_to_image(const Tensor& input_gradient, ColourSpace cs);

/// Frozen ImageNet VGG19 (16 conv layers, 1000-way head) backed by safetensors
/// weights in torchvision naming (features.N.*, classifier.N.*).
///
/// Immutable after construction; all queries are const and thread-safe.
class Backbone {
 public:
  /// Throws LoadError for unreadable/truncated files and ShapeError naming
  /// the first tensor that does not match the architecture.
  static Backbone load(const std::filesystem::path& weights_path);
  static Backbone from_tensors(TensorFile file);

  const nn::Network& network() const noexcept { return net_; }
  /// Checkpoint name (from the file metadata, if any) and SHA-256 of the file.
  const std::string& checkpoint_id() const noexcept { return checkpoint_id_; }
  /// Network layer whose output is `tap`; TapError unless it names a conv output.
  std::size_t layer_index(const LayerTap& tap) const;

  FeatureMaps forward_taps(const NetworkInput& input, std::span<const LayerTap> taps,
                           const std::string& image_id = {}) const;

  /// Pre-softmax class scores for a network input at any size >= 32x32.
  std::vector<double> logits(const NetworkInput& input) const;
  /// Softmax over the 1000 classes, evaluated on a 224x224 bilinear resize.
  std::vector<double> class_probabilities(const Image& image) const;
  ClassPrediction classify(const Image& image) const;

  GradientResult input_gradient(const NetworkInput& input, std::span<const LayerTap> taps,
                                const Objective& objective) const;

 private:
  nn::Network net_;
  std::string checkpoint_id_;
};

/// Parameter names and shapes of torchvision's VGG19 in architecture order.
std::vector<std::pair<std::string, std::vector<std::int64_t>>> vgg19_parameter_shapes();

/// Builds the VGG19 layer graph from already validated parameters.
nn::Network build_vgg19(std::map<std::string, NamedTensor> tensors);

/// He-normal weights with zero biases, reproducible from `seed`. Used where no
/// pretrained checkpoint is available; classifications made with these
/// weights carry no semantic meaning.
std::map<std::string, NamedTensor> synthetic_vgg19_weights(std::uint64_t seed);

}  // namespace semfuse
