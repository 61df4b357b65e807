#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace semfuse::test {

namespace fs = std::filesystem;

fs::path weights_path() { return SEMFUSE_TEST_WEIGHTS; }
fs::path corpus_dir() { return SEMFUSE_CORPUS_DIR; }

const Backbone& backbone() {
  static const Backbone b = Backbone::load(weights_path());
  return b;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::path(SEMFUSE_TEST_SCRATCH) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  Tensor t(c, h, w);
  for (float& v : t.values()) v = dist(rng);
  return t;
}

Image random_image(int h, int w, ColourSpace cs, std::mt19937_64& rng) {
  return Image(random_tensor(cs == ColourSpace::Rgb ? 3 : 1, h, w, rng, 0.0f, 1.0f), cs);
}

Image textured_image(int h, int w, ColourSpace cs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image image(h, w, cs);
  for (int c = 0; c < image.channels(); ++c) {
    const double fx = 2 + 6 * u(rng), fy = 2 + 6 * u(rng), phase = 6.28 * u(rng);
    const double cx = w * u(rng), cy = h * u(rng), radius = 0.15 * std::min(h, w) + 0.2 * std::min(h, w) * u(rng);
    const double tilt = u(rng);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double v = 0.35 + 0.2 * std::sin(2 * std::numbers::pi * (fx * x / w + fy * y / h) + phase);
        v += 0.15 * (tilt * x / w + (1 - tilt) * y / h);
        if (std::hypot(x - cx, y - cy) < radius) v += 0.25;
        if ((x / 8 + y / 8) % 5 == 0) v -= 0.1;
        image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return image;
}

}  // namespace semfuse::test
