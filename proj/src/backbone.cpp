#include "semfuse/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "semfuse/error.hpp"
#include "semfuse/imagenet_labels.hpp"

namespace semfuse {

namespace {

// Channel widths of the conv layers in each of the five blocks.
constexpr std::array<int, 5> kBlockWidth = {64, 128, 256, 512, 512};
constexpr std::array<int, 5> kBlockDepth = {2, 2, 4, 4, 4};
// torchvision `features` indices of the conv layers and `classifier` indices of the linear layers.
constexpr std::array<int, 16> kFeatureIndex = {0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28, 30, 32, 34};
constexpr std::array<int, 3> kClassifierIndex = {0, 3, 6};
constexpr std::array<int, 4> kLinearWidth = {512 * 7 * 7, 4096, 4096, 1000};

void require_finite(const Image& image) {
  for (float v : image.pixels().values()) {
    if (!std::isfinite(v)) throw ContractError("image contains non-finite pixels");
  }
}

}  // namespace

LayerTap LayerTap::named(std::string_view name) {
  const auto it = std::find(kVgg19ConvLayers.begin(), kVgg19ConvLayers.end(), name);
  if (it == kVgg19ConvLayers.end()) {
    throw TapError("'" + std::string(name) + "' is not a VGG19 convolutional layer");
  }
  const int block = name[4] - '1';
  return LayerTap{std::string(name), 1 << block};
}

std::vector<LayerTap> default_loss_layers() { return {LayerTap::named("conv1_1")}; }

std::vector<LayerTap> cam_layers() {
  return {LayerTap::named("conv3_4"), LayerTap::named("conv4_4"), LayerTap::named("conv5_4")};
}

std::vector<LayerTap> parse_layer_list(std::string_view text) {
  std::vector<LayerTap> taps;
  while (!text.empty()) {
    const auto comma = text.find(',');
    auto item = text.substr(0, comma);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) taps.push_back(LayerTap::named(item));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (taps.empty()) throw TapError("empty layer list");
  return taps;
}

NetworkInput preprocess(const Image& image) {
  if (image.height() < kMinImageSide || image.width() < kMinImageSide) {
    throw SizeError("image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                    ", the network needs at least " + std::to_string(kMinImageSide) + "x" +
                    std::to_string(kMinImageSide));
  }
  require_finite(image);
  NetworkInput input{Tensor(3, image.height(), image.width())};
  const bool gray = image.colour_space() == ColourSpace::Grayscale;
  for (int c = 0; c < 3; ++c) {
    const auto src = image.pixels().plane(gray ? 0 : c);
    auto dst = input.values.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (src[i] - kImageNetMean[c]) / kImageNetStd[c];
  }
  return input;
}

Tensor input_gradient_to_image(const Tensor& input_gradient, ColourSpace cs) {
  if (input_gradient.channels() != 3) throw ContractError("network input gradient must have 3 channels");
  const int out_channels = cs == ColourSpace::Grayscale ? 1 : 3;
  Tensor g(out_channels, input_gradient.height(), input_gradient.width());
  for (int c = 0; c < 3; ++c) {
    const auto src = input_gradient.plane(c);
    auto dst = g.plane(out_channels == 1 ? 0 : c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] / kImageNetStd[c];
  }
  return g;
}

std::vector<std::pair<std::string, std::vector<std::int64_t>>> vgg19_parameter_shapes() {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> shapes;
  int in = 3;
  int conv = 0;
  for (std::size_t b = 0; b < kBlockWidth.size(); ++b) {
    for (int d = 0; d < kBlockDepth[b]; ++d, ++conv) {
      const std::string prefix = "features." + std::to_string(kFeatureIndex[conv]);
      shapes.push_back({prefix + ".weight", {kBlockWidth[b], in, 3, 3}});
      shapes.push_back({prefix + ".bias", {kBlockWidth[b]}});
      in = kBlockWidth[b];
    }
  }
  for (std::size_t i = 0; i < kClassifierIndex.size(); ++i) {
    const std::string prefix = "classifier." + std::to_string(kClassifierIndex[i]);
    shapes.push_back({prefix + ".weight", {kLinearWidth[i + 1], kLinearWidth[i]}});
    shapes.push_back({prefix + ".bias", {kLinearWidth[i + 1]}});
  }
  return shapes;
}

nn::Network build_vgg19(std::map<std::string, NamedTensor> tensors) {
  auto take = [&](const std::string& name) { return std::move(tensors.at(name).values); };

  nn::Network net;
  int in = 3;
  int conv = 0;
  for (std::size_t b = 0; b < kBlockWidth.size(); ++b) {
    for (int d = 0; d < kBlockDepth[b]; ++d, ++conv) {
      const std::string prefix = "features." + std::to_string(kFeatureIndex[conv]);
      nn::Conv2d layer{in, kBlockWidth[b], 3, take(prefix + ".weight"), take(prefix + ".bias")};
      net.add(std::move(layer), std::string(kVgg19ConvLayers[conv]) + "_pre");
      net.add(nn::Relu{}, std::string(kVgg19ConvLayers[conv]));
      in = kBlockWidth[b];
    }
    net.add(nn::MaxPool2{}, "pool" + std::to_string(b + 1));
  }
  net.add(nn::AdaptiveAvgPool{7, 7}, "avgpool");
  for (std::size_t i = 0; i < kClassifierIndex.size(); ++i) {
    const std::string prefix = "classifier." + std::to_string(kClassifierIndex[i]);
    nn::Linear fc{kLinearWidth[i], kLinearWidth[i + 1], take(prefix + ".weight"), take(prefix + ".bias")};
    const bool last = i + 1 == kClassifierIndex.size();
    net.add(std::move(fc), last ? "logits" : "fc" + std::to_string(i + 6) + "_pre");
    if (!last) net.add(nn::Relu{}, "fc" + std::to_string(i + 6));
  }
  return net;
}

Backbone Backbone::load(const std::filesystem::path& weights_path) {
  return from_tensors(read_safetensors(weights_path));
}

Backbone Backbone::from_tensors(TensorFile file) {
  for (const auto& [name, shape] : vgg19_parameter_shapes()) {
    const auto it = file.tensors.find(name);
    if (it == file.tensors.end()) throw ShapeError("weights lack VGG19 tensor '" + name + "'");
    if (it->second.shape != shape) {
      std::string got;
      for (auto d : it->second.shape) got += (got.empty() ? "" : ",") + std::to_string(d);
      std::string want;
      for (auto d : shape) want += (want.empty() ? "" : ",") + std::to_string(d);
      throw ShapeError("tensor '" + name + "' has shape [" + got + "], VGG19 expects [" + want + "]");
    }
  }
  Backbone bb;
  bb.net_ = build_vgg19(std::move(file.tensors));
  const auto meta = file.metadata.find("checkpoint");
  bb.checkpoint_id_ = (meta != file.metadata.end() ? meta->second + " " : std::string()) + "sha256:" + file.sha256;
  return bb;
}

std::size_t Backbone::layer_index(const LayerTap& tap) const {
  if (LayerTap::named(tap.name) != tap) throw TapError("tap '" + tap.name + "' has a wrong resolution divisor");
  return net_.index_of(tap.name);
}

FeatureMaps Backbone::forward_taps(const NetworkInput& input, std::span<const LayerTap> taps,
                                   const std::string& image_id) const {
  if (taps.empty()) return {};
  std::size_t deepest = 0;
  for (const auto& tap : taps) deepest = std::max(deepest, layer_index(tap));
  const auto acts = net_.forward(input.values, deepest);
  FeatureMaps maps;
  for (const auto& tap : taps) maps[tap] = FeatureMap{acts.outputs[layer_index(tap)], tap, image_id};
  return maps;
}

std::vector<double> Backbone::logits(const NetworkInput& input) const {
  const auto acts = net_.forward(input.values);
  const auto& out = acts.outputs.back();
  return {out.values().begin(), out.values().end()};
}

std::vector<double> Backbone::class_probabilities(const Image& image) const {
  preprocess(image);  // size and finiteness checks at native resolution
  Image resized(resize_bilinear(image.pixels(), kClassifierSide, kClassifierSide), image.colour_space());
  auto scores = logits(preprocess(resized));
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& s : scores) {
    s = std::exp(s - top);
    total += s;
  }
  for (double& s : scores) s /= total;
  return scores;
}

ClassPrediction Backbone::classify(const Image& image) const {
  const auto probs = class_probabilities(image);
  const auto best = std::max_element(probs.begin(), probs.end());
  const int id = static_cast<int>(best - probs.begin());
  return {id, std::string(imagenet_label(id)), *best};
}

GradientResult Backbone::input_gradient(const NetworkInput& input, std::span<const LayerTap> taps,
                                        const Objective& objective) const {
  if (taps.empty()) throw ContractError("input_gradient needs at least one tapped layer");
  std::size_t deepest = 0;
  for (const auto& tap : taps) deepest = std::max(deepest, layer_index(tap));
  const auto acts = net_.forward(input.values, deepest);

  FeatureMaps maps;
  for (const auto& tap : taps) maps[tap] = FeatureMap{acts.outputs[layer_index(tap)], tap, {}};
  const ObjectiveValue obj = objective(maps);
  if (!std::isfinite(obj.value)) throw ContractError("objective returned a non-finite value");

  std::vector<nn::GradientSeed> seeds;
  for (const auto& [tap, grad] : obj.gradients) {
    const auto m = maps.find(tap);
    if (m == maps.end()) throw ContractError("objective gradient for untapped layer " + tap.name);
    if (!grad.same_shape(m->second.values)) {
      throw ContractError("objective gradient for " + tap.name + " has shape " + grad.shape_string() +
                          ", feature map is " + m->second.values.shape_string());
    }
    seeds.push_back({layer_index(tap), grad});
  }
  GradientResult result{obj.value, Tensor(3, input.values.height(), input.values.width())};
  if (seeds.empty()) return result;  // constant objective
  result.gradient = net_.backward(acts, seeds, {}, true).input_gradient;
  return result;
}

std::map<std::string, NamedTensor> synthetic_vgg19_weights(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Box-Muller on raw engine output so the stream is identical across standard libraries.
  auto uniform = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  auto normal_fill = [&](std::vector<float>& v, double stddev) {
    for (std::size_t i = 0; i < v.size(); i += 2) {
      const double r = std::sqrt(-2.0 * std::log(uniform()));
      const double t = 2.0 * std::numbers::pi * uniform();
      v[i] = static_cast<float>(stddev * r * std::cos(t));
      if (i + 1 < v.size()) v[i + 1] = static_cast<float>(stddev * r * std::sin(t));
    }
  };

  std::map<std::string, NamedTensor> out;
  const auto shapes = vgg19_parameter_shapes();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, shape] = shapes[i];
    std::size_t count = 1;
    for (auto d : shape) count *= static_cast<std::size_t>(d);
    NamedTensor t{shape, std::vector<float>(count, 0.0f)};
    if (shape.size() > 1) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < shape.size(); ++d) fan_in *= static_cast<std::size_t>(shape[d]);
      const bool logits_layer = i + 2 == shapes.size();
      normal_fill(t.values, std::sqrt((logits_layer ? 1.0 : 2.0) / static_cast<double>(fan_in)));
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace semfuse
