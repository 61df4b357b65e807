#include "semfuse/fusion_rules.hpp"

#include <algorithm>
#include <cmath>

#include "semfuse/error.hpp"

namespace semfuse {

namespace {

constexpr int kMajorityRadius = 1;
constexpr int kMajorityVotes = 5;  // of 9

void require_compatible(const FeatureMap& f0, const FeatureMap& f1) {
  if (!f0.values.same_shape(f1.values)) {
    throw ContractError("feature maps differ in shape: " + f0.values.shape_string() + " vs " +
                        f1.values.shape_string());
  }
  if (f0.source_layer != f1.source_layer) {
    throw ContractError("feature maps come from different layers: " + f0.source_layer.name + " vs " +
                        f1.source_layer.name);
  }
}

FusedTarget select(const FeatureMap& f0, const FeatureMap& f1, FusionRule rule, std::vector<std::uint8_t> mask) {
  FusedTarget out{f1.values, rule, std::move(mask), f0.source_layer};
  auto dst = out.values.values();
  auto src = f0.values.values();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (out.selection_mask[i]) dst[i] = src[i];
  }
  return out;
}

}  // namespace

std::string to_string(FusionRule rule) { return rule == FusionRule::ChooseMax ? "psi0" : "psi1"; }

FusionRule parse_fusion_rule(std::string_view text) {
  if (text == "psi0") return FusionRule::ChooseMax;
  if (text == "psi1") return FusionRule::Majority;
  throw ContractError("unknown fusion rule '" + std::string(text) + "' (expected psi0 or psi1)");
}

FusedTarget choose_max(const FeatureMap& f0, const FeatureMap& f1) {
  require_compatible(f0, f1);
  auto a = f0.values.values();
  auto b = f1.values.values();
  std::vector<std::uint8_t> mask(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mask[i] = std::fabs(a[i]) >= std::fabs(b[i]);
  return select(f0, f1, FusionRule::ChooseMax, std::move(mask));
}

FusedTarget majority_filter(const FeatureMap& f0, const FeatureMap& f1) {
  require_compatible(f0, f1);
  const Tensor& a = f0.values;
  const Tensor& b = f1.values;
  const int H = a.height();
  const int W = a.width();
  std::vector<std::uint8_t> mask(a.size());
  std::vector<std::uint8_t> decision(a.plane_size());
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.plane(c);
    const auto pb = b.plane(c);
    for (std::size_t i = 0; i < decision.size(); ++i) decision[i] = std::fabs(pa[i]) > std::fabs(pb[i]);
    std::uint8_t* out = mask.data() + c * a.plane_size();
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        int votes = 0;
        for (int dy = -kMajorityRadius; dy <= kMajorityRadius; ++dy) {
          const int sy = std::clamp(y + dy, 0, H - 1);
          for (int dx = -kMajorityRadius; dx <= kMajorityRadius; ++dx) {
            votes += decision[static_cast<std::size_t>(sy) * W + std::clamp(x + dx, 0, W - 1)];
          }
        }
        out[static_cast<std::size_t>(y) * W + x] = votes >= kMajorityVotes;
      }
    }
  }
  return select(f0, f1, FusionRule::Majority, std::move(mask));
}

FusedTarget apply_rule(FusionRule rule, const FeatureMap& f0, const FeatureMap& f1) {
  return rule == FusionRule::ChooseMax ? choose_max(f0, f1) : majority_filter(f0, f1);
}

}  // namespace semfuse
