#pragma once

#include <array>
#include <string_view>

namespace semfuse {

inline constexpr int kImageNetClasses = 1000;

/// Human-readable ImageNet-1k label; empty for out-of-range ids.
std::string_view imagenet_label(int class_id);

}  // namespace semfuse
