#include "semfuse/cam.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "semfuse/error.hpp"

namespace semfuse {

namespace {

void require_same_size(const Plane& a, const Plane& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ContractError(std::string(what) + ": maps differ in size (" + std::to_string(a.height) + "x" +
                        std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                        std::to_string(b.width) + ")");
  }
}

}  // namespace

Plane MixingMap::p_m1() const {
  Plane out = p_m0;
  for (double& v : out.values) v = 1.0 - v;
  return out;
}

std::optional<Plane> normalise_map(const Plane& map) {
  if (map.values.empty()) throw ContractError("cannot normalise an empty map");
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ContractError("map contains non-finite values");
  if (hi - lo <= kDegenerateRelTol * std::max(std::fabs(hi), std::fabs(lo))) return std::nullopt;
  Plane out = map;
  const double range = hi - lo;
  for (double& v : out.values) v = (v - lo) / range;
  // Exact end points despite rounding in the division.
  out.values[lo_it - map.values.begin()] = 0.0;
  out.values[hi_it - map.values.begin()] = 1.0;
  return out;
}

std::vector<Plane> grad_cam_layers(const nn::Network& net, const Tensor& input, int class_id,
                                   std::span<const std::size_t> layers) {
  if (layers.empty()) throw ContractError("grad_cam needs at least one layer");
  const auto acts = net.forward(input);
  const Tensor& scores = acts.outputs.back();
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= scores.size()) {
    throw ContractError("class id " + std::to_string(class_id) + " outside [0, " + std::to_string(scores.size()) +
                        ")");
  }
  nn::GradientSeed seed{net.size() - 1, Tensor(scores.channels(), scores.height(), scores.width())};
  seed.gradient.values()[static_cast<std::size_t>(class_id)] = 1.0f;
  const auto back = net.backward(acts, std::span(&seed, 1), layers, false);

  std::vector<Plane> maps;
  for (std::size_t layer : layers) {
    const Tensor& a = acts.outputs[layer];
    const Tensor& g = back.captured.at(layer);
    Plane map(a.height(), a.width());
    for (int c = 0; c < a.channels(); ++c) {
      double weight = 0.0;
      for (float v : g.plane(c)) weight += v;
      weight /= static_cast<double>(g.plane_size());
      const auto act = a.plane(c);
      for (std::size_t i = 0; i < act.size(); ++i) map.values[i] += weight * act[i];
    }
    for (double& v : map.values) v = std::max(v, 0.0);
    maps.push_back(std::move(map));
  }
  return maps;
}

std::vector<Plane> grad_cams(const Backbone& backbone, const Image& image, int class_id,
                             std::span<const LayerTap> layers) {
  std::vector<std::size_t> indices;
  for (const auto& tap : layers) indices.push_back(backbone.layer_index(tap));
  return grad_cam_layers(backbone.network(), preprocess(image).values, class_id, indices);
}

Plane grad_cam(const Backbone& backbone, const Image& image, int class_id, const LayerTap& layer) {
  return grad_cams(backbone, image, class_id, std::span(&layer, 1)).front();
}

CamMap combine_cams(std::span<const Plane> maps, DegeneratePolicy policy) {
  if (maps.empty()) throw ContractError("combine_cams needs at least one map");
  Plane product(maps.front().height, maps.front().width, 1.0);
  for (const Plane& m : maps) {
    require_same_size(product, m, "combine_cams");
    const auto normed = normalise_map(m);
    if (!normed) continue;
    for (std::size_t i = 0; i < product.size(); ++i) product.values[i] *= normed->values[i];
  }
  CamMap cam;
  if (auto normed = normalise_map(product)) {
    cam.values = std::move(*normed);
    return cam;
  }
  if (policy == DegeneratePolicy::Throw) throw DegenerateMapError("combined CAM is constant");
  cam.values = Plane(product.height, product.width, 0.5);
  cam.degenerate = true;
  return cam;
}

CamMap class_cam(const Backbone& backbone, const Image& image, int class_id, std::span<const LayerTap> layers,
                 DegeneratePolicy policy) {
  auto raw = grad_cams(backbone, image, class_id, layers);
  for (Plane& m : raw) m = resize_bilinear(m, image.height(), image.width());
  CamMap cam = combine_cams(raw, policy);
  cam.class_id = class_id;
  cam.source_layers.assign(layers.begin(), layers.end());
  return cam;
}

MixingMap mixing_map(const CamMap& p0, const CamMap& p1) {
  require_same_size(p0.values, p1.values, "mixing_map");
  MixingMap mix{Plane(p0.values.height, p0.values.width)};
  for (std::size_t i = 0; i < mix.p_m0.size(); ++i) {
    mix.p_m0.values[i] = 0.5 * (1.0 + (p0.values.values[i] - p1.values.values[i]));
  }
  return mix;
}

Image cam_fuse(const Image& i0, const Image& i1, const MixingMap& mix) {
  if (!i0.same_geometry(i1)) throw ContractError("cam_fuse: input images differ in size or colour space");
  if (mix.p_m0.height != i0.height() || mix.p_m0.width != i0.width()) {
    throw ContractError("cam_fuse: mixing map size does not match the images");
  }
  Image out(i0.height(), i0.width(), i0.colour_space());
  for (int c = 0; c < i0.channels(); ++c) {
    const auto a = i0.pixels().plane(c);
    const auto b = i1.pixels().plane(c);
    auto dst = out.pixels().plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double w = mix.p_m0.values[i];
      dst[i] = static_cast<float>(w * a[i] + (1.0 - w) * b[i]);
    }
  }
  return out;
}

FeatureMap cam_weight_features(const FeatureMap& f, const CamMap& p) {
  const Plane grid = resize_area(p.values, f.values.height(), f.values.width());
  FeatureMap out = f;
  for (int c = 0; c < out.values.channels(); ++c) {
    auto plane = out.values.plane(c);
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = static_cast<float>(plane[i] * grid.values[i]);
  }
  return out;
}

Image cam_overlay(const Image& image, const CamMap& cam) {
  if (cam.values.height != image.height() || cam.values.width != image.width()) {
    throw ContractError("cam_overlay: map size does not match the image");
  }
  cv::Mat heat8(image.height(), image.width(), CV_8UC1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      heat8.at<std::uint8_t>(y, x) =
          static_cast<std::uint8_t>(std::lround(std::clamp(cam.values.at(y, x), 0.0, 1.0) * 255.0));
    }
  }
  cv::Mat colour;
  cv::applyColorMap(heat8, colour, cv::COLORMAP_JET);  // BGR
  const Image rgb = to_rgb(image);
  Image out(image.height(), image.width(), ColourSpace::Rgb);
  for (int y = 0; y < image.height(); ++y) {
    const auto* row = colour.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(c, y, x) = 0.5f * rgb.at(c, y, x) + 0.5f * row[3 * x + (2 - c)] / 255.0f;
      }
    }
  }
  return out;
}

}  // namespace semfuse
