#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <vector>

#include "semfuse/backbone.hpp"
#include "semfuse/fusion_rules.hpp"
#include "semfuse/image.hpp"

namespace semfuse {

struct OptimizerConfig {
  int epochs = 100;
  int iterations_per_epoch = 100;
  double initial_learning_rate = 0.05;  ///< in [0, 1] image units
  double lr_decay_per_epoch = 0.97;     ///< lr(epoch) = initial * decay^epoch
  std::vector<LayerTap> loss_layers = default_loss_layers();
  /// Stop once the epoch-mean loss improves by less than this fraction; 0 disables.
  double convergence_tol = 1e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws ContractError for out-of-range fields.
  void validate() const;
};

/// Fused targets keyed by layer.
using FusedTargets = std::map<LayerTap, FusedTarget>;

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

struct OptimizationTrace {
  std::vector<EpochRecord> epochs;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  long steps = 0;
  double wall_seconds = 0.0;
  int target_builds = 0;  ///< number of times fused targets were computed
  bool stopped_early = false;
};

struct OptimizationResult {
  Image image;  ///< clamped to [0, 1]
  OptimizationTrace trace;
};

/// Sum over layers of ||G - N(candidate)||^2.
double fusion_loss(const Backbone& backbone, const Image& candidate, const FusedTargets& targets);

/// Optional hook applied to the feature maps of input `index` (0 or 1)
/// before the fusion rule, e.g. CAM weighting.
using FeatureTransform = std::function<FeatureMaps(FeatureMaps maps, int index)>;

/// Runs the backbone on both inputs and fuses each loss layer with `rule`.
FusedTargets build_targets(const Backbone& backbone, const Image& i0, const Image& i1, FusionRule rule,
                           std::span<const LayerTap> layers, const FeatureTransform& transform = {});

/// ADAM descent on the image pixels against fixed targets, starting from `initial`.
OptimizationResult recover_image(const Backbone& backbone, const Image& initial, const FusedTargets& targets,
                                  const OptimizerConfig& config);

/// Full image-optimisation fusion: targets from (i0, i1) once, start at the
/// pixelwise mean, descend, clamp.
OptimizationResult optimise_image(const Backbone& backbone, const Image& i0, const Image& i1, FusionRule rule,
                                  const OptimizerConfig& config, const FeatureTransform& transform = {});

/// Writes the per-epoch trace as CSV (epoch, loss, lr).
void write_trace_csv(const std::filesystem::path& path, const OptimizationTrace& trace);

}  // namespace semfuse
