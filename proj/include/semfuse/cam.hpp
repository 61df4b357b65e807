#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "semfuse/backbone.hpp"
#include "semfuse/image.hpp"
#include "semfuse/nn.hpp"

namespace semfuse {

/// Class relevance map in [0, 1] at input resolution.
struct CamMap {
  Plane values;
  int class_id = -1;
  std::vector<LayerTap> source_layers;
  bool degenerate = false;  ///< the combined map was constant and replaced by 0.5
};

/// Per-pixel weight of image 0 in the fused output; image 1 gets 1 - p_m0.
struct MixingMap {
  Plane p_m0;

  Plane p_m1() const;
};

enum class DegeneratePolicy {
  Throw,        ///< DegenerateMapError on a constant map
  UniformHalf,  ///< constant map becomes 0.5 everywhere and is flagged
};

/// Maps are treated as constant when max - min <= this * max(|max|, |min|).
inline constexpr double kDegenerateRelTol = 1e-9;

/// Min-max normalisation (z - min) / (max - min). Returns nullopt for constant input.
std::optional<Plane> normalise_map(const Plane& map);

/// Grad-CAM on an arbitrary network: channel weights are the spatial mean of
/// d(score of class_id)/d(activation); the map is ReLU of the weighted channel
/// sum. `layers` are network layer indices; maps stay at layer resolution.
/// The class score is the last layer's output (pre-softmax).
std::vector<Plane> grad_cam_layers(const nn::Network& net, const Tensor& input, int class_id,
                                   std::span<const std::size_t> layers);

/// Raw Grad-CAM of one VGG19 tap at layer resolution.
Plane grad_cam(const Backbone& backbone, const Image& image, int class_id, const LayerTap& layer);

/// Raw Grad-CAMs of several taps from a single backward pass.
std::vector<Plane> grad_cams(const Backbone& backbone, const Image& image, int class_id,
                             std::span<const LayerTap> layers);

/// Product of per-layer normalised maps followed by a final normalisation.
/// Maps must already share one (input) resolution. A constant individual
/// layer contributes a neutral factor.
CamMap combine_cams(std::span<const Plane> maps, DegeneratePolicy policy = DegeneratePolicy::Throw);

/// Full class map P_c: Grad-CAM on `layers`, bilinear upsampling to the
/// image size, combination.
CamMap class_cam(const Backbone& backbone, const Image& image, int class_id,
                 std::span<const LayerTap> layers, DegeneratePolicy policy = DegeneratePolicy::UniformHalf);

/// p_m0 = 0.5 (1 + p0 - p1).
MixingMap mixing_map(const CamMap& p0, const CamMap& p1);

/// I = p_m0 * i0 + (1 - p_m0) * i1, applied to every channel.
Image cam_fuse(const Image& i0, const Image& i1, const MixingMap& mix);

/// Multiplies every channel of `f` by `p` area-resampled to the feature grid.
FeatureMap cam_weight_features(const FeatureMap& f, const CamMap& p);

/// Input blended 50/50 with a jet colour map of the CAM, for inspection.
Image cam_overlay(const Image& image, const CamMap& cam);

}  // namespace semfuse
