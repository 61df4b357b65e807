#include "semfuse/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "semfuse/error.hpp"

namespace semfuse {

namespace {

std::vector<LayerTap> target_layers(const FusedTargets& targets) {
  std::vector<LayerTap> taps;
  for (const auto& [tap, target] : targets) taps.push_back(tap);
  return taps;
}

void require_target_shape(const FusedTarget& target, const FeatureMap& map) {
  if (!target.values.same_shape(map.values)) {
    throw ContractError("target for " + map.source_layer.name + " has shape " + target.values.shape_string() +
                        ", candidate feature map is " + map.values.shape_string());
  }
}

// Sum of squared differences and its gradient 2 (N - G) for every layer.
ObjectiveValue squared_distance(const FeatureMaps& maps, const FusedTargets& targets) {
  ObjectiveValue obj;
  for (const auto& [tap, map] : maps) {
    const FusedTarget& target = targets.at(tap);
    require_target_shape(target, map);
    Tensor grad(map.values.channels(), map.values.height(), map.values.width());
    auto n = map.values.values();
    auto g = target.values.values();
    auto d = grad.values();
    double sum = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
      const float diff = n[i] - g[i];
      sum += static_cast<double>(diff) * diff;
      d[i] = 2.0f * diff;
    }
    obj.value += sum;
    obj.gradients.emplace(tap, std::move(grad));
  }
  return obj;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (epochs <= 0) throw ContractError("epochs must be positive");
  if (iterations_per_epoch < 0) throw ContractError("iterations per epoch must be non-negative");
  if (!(initial_learning_rate > 0.0)) throw ContractError("initial learning rate must be positive");
  if (!(lr_decay_per_epoch > 0.0 && lr_decay_per_epoch <= 1.0)) throw ContractError("lr decay must lie in (0, 1]");
  if (loss_layers.empty()) throw ContractError("no loss layers configured");
  if (!(convergence_tol >= 0.0)) throw ContractError("convergence tolerance must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ContractError("ADAM betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ContractError("ADAM epsilon must be positive");
}

double fusion_loss(const Backbone& backbone, const Image& candidate, const FusedTargets& targets) {
  if (targets.empty()) throw ContractError("fusion loss needs at least one target layer");
  const auto taps = target_layers(targets);
  return squared_distance(backbone.forward_taps(preprocess(candidate), taps), targets).value;
}

FusedTargets build_targets(const Backbone& backbone, const Image& i0, const Image& i1, FusionRule rule,
                           std::span<const LayerTap> layers, const FeatureTransform& transform) {
  if (!i0.same_geometry(i1)) {
    throw ContractError("input images differ in size or colour space (" + i0.pixels().shape_string() + " vs " +
                        i1.pixels().shape_string() + ")");
  }
  auto f0 = backbone.forward_taps(preprocess(i0), layers, "i0");
  auto f1 = backbone.forward_taps(preprocess(i1), layers, "i1");
  if (transform) {
    f0 = transform(std::move(f0), 0);
    f1 = transform(std::move(f1), 1);
  }
  FusedTargets targets;
  for (const auto& tap : layers) targets.emplace(tap, apply_rule(rule, f0.at(tap), f1.at(tap)));
  return targets;
}

OptimizationResult recover_image(const Backbone& backbone, const Image& initial, const FusedTargets& targets,
                                  const OptimizerConfig& config) {
  config.validate();
  if (targets.empty()) throw ContractError("no fused targets");
  const auto start = std::chrono::steady_clock::now();
  const auto taps = target_layers(targets);
  const auto objective = [&](const FeatureMaps& maps) { return squared_distance(maps, targets); };

  OptimizationResult result;
  OptimizationTrace& trace = result.trace;
  Image candidate = initial;
  auto x = candidate.pixels().values();
  std::vector<double> m(x.size(), 0.0);
  std::vector<double> v(x.size(), 0.0);
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  double b1_pow = 1.0;
  double b2_pow = 1.0;
  double previous_mean = 0.0;

  for (int epoch = 0; epoch < config.epochs && config.iterations_per_epoch > 0; ++epoch) {
    const double lr = config.initial_learning_rate * std::pow(config.lr_decay_per_epoch, epoch);
    double loss_sum = 0.0;
    for (int it = 0; it < config.iterations_per_epoch; ++it) {
      const GradientResult g = backbone.input_gradient(preprocess(candidate), taps, objective);
      if (!std::isfinite(g.value)) {
        throw DivergenceError("fusion loss became non-finite in epoch " + std::to_string(epoch), epoch);
      }
      if (trace.steps == 0) trace.initial_loss = g.value;
      loss_sum += g.value;

      const Tensor grad = input_gradient_to_image(g.gradient, candidate.colour_space());
      const auto gv = grad.values();
      b1_pow *= b1;
      b2_pow *= b2;
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * gv[i];
        v[i] = b2 * v[i] + (1.0 - b2) * static_cast<double>(gv[i]) * gv[i];
        const double m_hat = m[i] / (1.0 - b1_pow);
        const double v_hat = v[i] / (1.0 - b2_pow);
        x[i] = static_cast<float>(x[i] - lr * m_hat / (std::sqrt(v_hat) + config.adam_eps));
        if (!std::isfinite(x[i])) {
          throw DivergenceError("image update became non-finite in epoch " + std::to_string(epoch), epoch);
        }
      }
      ++trace.steps;
    }
    const double mean = loss_sum / config.iterations_per_epoch;
    trace.epochs.push_back({epoch, mean, lr});
    if (config.convergence_tol > 0.0 && epoch > 0) {
      if (previous_mean <= 0.0 || (previous_mean - mean) < config.convergence_tol * previous_mean) {
        trace.stopped_early = epoch + 1 < config.epochs;
        break;
      }
    }
    previous_mean = mean;
  }

  trace.final_loss = fusion_loss(backbone, candidate, targets);
  if (!std::isfinite(trace.final_loss)) {
    throw DivergenceError("final fusion loss is non-finite", static_cast<int>(trace.epochs.size()));
  }
  if (trace.steps == 0) trace.initial_loss = trace.final_loss;
  result.image = clamp_unit(candidate);
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

OptimizationResult optimise_image(const Backbone& backbone, const Image& i0, const Image& i1, FusionRule rule,
                                  const OptimizerConfig& config, const FeatureTransform& transform) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const FusedTargets targets = build_targets(backbone, i0, i1, rule, config.loss_layers, transform);
  OptimizationResult result = recover_image(backbone, average(i0, i1), targets, config);
  result.trace.target_builds = 1;
  result.trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void write_trace_csv(const std::filesystem::path& path, const OptimizationTrace& trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write trace " + path.string());
  out.precision(10);
  out << "epoch,loss,lr\n";
  for (const auto& e : trace.epochs) out << e.epoch << ',' << e.mean_loss << ',' << e.learning_rate << '\n';
}

}  // namespace semfuse
