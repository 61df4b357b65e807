#include "semfuse/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "semfuse/error.hpp"

namespace semfuse {

Tensor::Tensor(int channels, int height, int width, float fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    throw ContractError("negative tensor dimension");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

std::string Tensor::shape_string() const {
  return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

// Source sample positions for one output axis, half-pixel convention.
std::vector<Tap> bilinear_taps(int src, int dst) {
  std::vector<Tap> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double pos = (i + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, src - 1);
    taps[i] = {lo, hi, pos - lo};
  }
  return taps;
}

template <typename Get, typename Set>
void bilinear_plane(int sh, int sw, int dh, int dw, Get get, Set set) {
  const auto ty = bilinear_taps(sh, dh);
  const auto tx = bilinear_taps(sw, dw);
  for (int y = 0; y < dh; ++y) {
    for (int x = 0; x < dw; ++x) {
      const double top = get(ty[y].lo, tx[x].lo) * (1.0 - tx[x].frac) + get(ty[y].lo, tx[x].hi) * tx[x].frac;
      const double bot = get(ty[y].hi, tx[x].lo) * (1.0 - tx[x].frac) + get(ty[y].hi, tx[x].hi) * tx[x].frac;
      set(y, x, top * (1.0 - ty[y].frac) + bot * ty[y].frac);
    }
  }
}

}  // namespace

Tensor resize_bilinear(const Tensor& src, int height, int width) {
  if (height <= 0 || width <= 0 || src.empty()) throw ContractError("resize to empty size");
  Tensor out(src.channels(), height, width);
  for (int c = 0; c < src.channels(); ++c) {
    bilinear_plane(
        src.height(), src.width(), height, width,
        [&](int y, int x) { return static_cast<double>(src.at(c, y, x)); },
        [&](int y, int x, double v) { out.at(c, y, x) = static_cast<float>(v); });
  }
  return out;
}

Plane resize_bilinear(const Plane& src, int height, int width) {
  if (height <= 0 || width <= 0 || src.values.empty()) throw ContractError("resize to empty size");
  Plane out(height, width);
  bilinear_plane(
      src.height, src.width, height, width, [&](int y, int x) { return src.at(y, x); },
      [&](int y, int x, double v) { out.at(y, x) = v; });
  return out;
}

namespace {

// Overlap weights of each destination cell with source cells along one axis.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
  std::vector<std::vector<std::pair<int, double>>> w(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double a = i * scale;
    const double b = (i + 1) * scale;
    for (int s = static_cast<int>(std::floor(a)); s < src && s < b; ++s) {
      const double overlap = std::min<double>(s + 1, b) - std::max<double>(s, a);
      if (overlap > 0.0) w[i].emplace_back(s, overlap / scale);
    }
  }
  return w;
}

}  // namespace

Plane resize_area(const Plane& src, int height, int width) {
  if (height <= 0 || width <= 0 || src.values.empty()) throw ContractError("resize to empty size");
  const auto wy = area_weights(src.height, height);
  const auto wx = area_weights(src.width, width);
  Plane out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (auto [sy, fy] : wy[y]) {
        for (auto [sx, fx] : wx[x]) acc += fy * fx * src.at(sy, sx);
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

}  // namespace semfuse
