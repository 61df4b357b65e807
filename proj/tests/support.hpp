#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "semfuse/backbone.hpp"
#include "semfuse/image.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse::test {

/// Backbone built from the seeded test checkpoint, loaded once per process.
const Backbone& backbone();
std::filesystem::path weights_path();
std::filesystem::path corpus_dir();
/// Fresh, empty scratch directory under the build tree.
std::filesystem::path scratch_dir(const std::string& name);

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f);
Image random_image(int h, int w, ColourSpace cs, std::mt19937_64& rng);

/// Smooth structured image (blobs, bars, gradients) with values in [0, 1].
Image textured_image(int h, int w, ColourSpace cs, std::uint64_t seed);

}  // namespace semfuse::test
