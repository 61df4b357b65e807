#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "semfuse/backbone.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

enum class FusionRule {
  ChooseMax,  ///< psi0: per element, the value with the larger magnitude
  Majority,   ///< psi1: per channel, 3x3 majority vote on |f0| > |f1|
};

std::string to_string(FusionRule rule);
/// Accepts "psi0" / "psi1"; throws ContractError otherwise.
FusionRule parse_fusion_rule(std::string_view text);

/// Fused target feature map G = rule(F0, F1).
struct FusedTarget {
  Tensor values;
  FusionRule rule = FusionRule::ChooseMax;
  std::vector<std::uint8_t> selection_mask;  ///< 1 where the element was taken from f0
  LayerTap layer;
};

/// Elementwise choose-max by absolute value; ties go to f0.
FusedTarget choose_max(const FeatureMap& f0, const FeatureMap& f1);

/// Channelwise 3x3 majority filter of the decision map |f0| > |f1| (replicate
/// padding at the borders, 5 of 9 votes needed); the filtered map selects
/// elements of f0 or f1.
FusedTarget majority_filter(const FeatureMap& f0, const FeatureMap& f1);

FusedTarget apply_rule(FusionRule rule, const FeatureMap& f0, const FeatureMap& f1);

}  // namespace semfuse
