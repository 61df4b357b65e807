#include "semfuse/nn.hpp"

#include <algorithm>
#include <cblas.h>

#include "semfuse/error.hpp"

namespace semfuse::nn {

namespace {

// im2col buffers are processed in row blocks of at most this many floats.
constexpr std::size_t kMaxColumnFloats = std::size_t{1} << 22;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

int ceil_half(int n) { return (n + 1) / 2; }

int rows_per_block(int patch, int width, int height) {
  const std::size_t per_row = static_cast<std::size_t>(patch) * width;
  return static_cast<int>(std::clamp<std::size_t>(kMaxColumnFloats / std::max<std::size_t>(per_row, 1), 1, height));
}

void im2col(const Tensor& x, int k, int r0, int r1, std::vector<float>& col) {
  const int pad = k / 2;
  const int H = x.height();
  const int W = x.width();
  const std::size_t n = static_cast<std::size_t>(r1 - r0) * W;
  std::size_t row = 0;
  for (int c = 0; c < x.channels(); ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        float* dst = col.data() + row * n;
        for (int y = r0; y < r1; ++y) {
          const int sy = y + ky - pad;
          float* out = dst + static_cast<std::size_t>(y - r0) * W;
          if (sy < 0 || sy >= H) {
            std::fill(out, out + W, 0.0f);
            continue;
          }
          const float* src = x.data() + (static_cast<std::size_t>(c) * H + sy) * W;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + kx - pad;
            out[xx] = (sx < 0 || sx >= W) ? 0.0f : src[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<float>& col, int k, int r0, int r1, Tensor& dx) {
  const int pad = k / 2;
  const int H = dx.height();
  const int W = dx.width();
  const std::size_t n = static_cast<std::size_t>(r1 - r0) * W;
  std::size_t row = 0;
  for (int c = 0; c < dx.channels(); ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const float* src = col.data() + row * n;
        for (int y = r0; y < r1; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          const float* in = src + static_cast<std::size_t>(y - r0) * W;
          float* dst = dx.data() + (static_cast<std::size_t>(c) * H + sy) * W;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < W) dst[sx] += in[xx];
          }
        }
      }
    }
  }
}

void check_conv_input(const Conv2d& conv, const Tensor& x) {
  if (x.channels() != conv.in_channels) {
    throw ShapeError("conv expects " + std::to_string(conv.in_channels) + " input channels, got " +
                     std::to_string(x.channels()));
  }
}

Tensor conv_forward(const Conv2d& conv, const Tensor& x) {
  check_conv_input(conv, x);
  const int H = x.height();
  const int W = x.width();
  const int patch = conv.in_channels * conv.kernel * conv.kernel;
  Tensor y(conv.out_channels, H, W);
  const int block = rows_per_block(patch, W, H);
  std::vector<float> col(static_cast<std::size_t>(patch) * block * W);
  for (int r0 = 0; r0 < H; r0 += block) {
    const int r1 = std::min(H, r0 + block);
    const int n = (r1 - r0) * W;
    im2col(x, conv.kernel, r0, r1, col);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, conv.out_channels, n, patch, 1.0f,
                conv.weight.data(), patch, col.data(), n, 0.0f, y.data() + static_cast<std::size_t>(r0) * W,
                H * W);
  }
  for (int c = 0; c < conv.out_channels; ++c) {
    const float b = conv.bias[c];
    for (float& v : y.plane(c)) v += b;
  }
  return y;
}

Tensor conv_backward(const Conv2d& conv, const Tensor& x, const Tensor& dy) {
  const int H = x.height();
  const int W = x.width();
  const int patch = conv.in_channels * conv.kernel * conv.kernel;
  Tensor dx(x.channels(), H, W);
  const int block = rows_per_block(patch, W, H);
  std::vector<float> col(static_cast<std::size_t>(patch) * block * W);
  for (int r0 = 0; r0 < H; r0 += block) {
    const int r1 = std::min(H, r0 + block);
    const int n = (r1 - r0) * W;
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, patch, n, conv.out_channels, 1.0f, conv.weight.data(),
                patch, dy.data() + static_cast<std::size_t>(r0) * W, H * W, 0.0f, col.data(), n);
    col2im_add(col, conv.kernel, r0, r1, dx);
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  auto out = y.values();
  auto g = dx.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(out[i] > 0.0f)) g[i] = 0.0f;
  }
  return dx;
}

// Index (within the input plane) of the first maximum of the pooling window at (oy, ox).
std::size_t pool_argmax(std::span<const float> plane, int H, int W, int oy, int ox) {
  std::size_t best = static_cast<std::size_t>(2 * oy) * W + 2 * ox;
  for (int y = 2 * oy; y < std::min(H, 2 * oy + 2); ++y) {
    for (int x = 2 * ox; x < std::min(W, 2 * ox + 2); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      if (plane[i] > plane[best]) best = i;
    }
  }
  return best;
}

Tensor maxpool_forward(const Tensor& x) {
  const int H = x.height();
  const int W = x.width();
  Tensor y(x.channels(), ceil_half(H), ceil_half(W));
  for (int c = 0; c < x.channels(); ++c) {
    const auto plane = x.plane(c);
    for (int oy = 0; oy < y.height(); ++oy) {
      for (int ox = 0; ox < y.width(); ++ox) y.at(c, oy, ox) = plane[pool_argmax(plane, H, W, oy, ox)];
    }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& x, const Tensor& dy) {
  const int H = x.height();
  const int W = x.width();
  Tensor dx(x.channels(), H, W);
  for (int c = 0; c < x.channels(); ++c) {
    const auto plane = x.plane(c);
    auto grad = dx.plane(c);
    for (int oy = 0; oy < dy.height(); ++oy) {
      for (int ox = 0; ox < dy.width(); ++ox) grad[pool_argmax(plane, H, W, oy, ox)] += dy.at(c, oy, ox);
    }
  }
  return dx;
}

struct Span1d {
  int begin;
  int end;
};

Span1d adaptive_bin(int i, int in, int out) {
  const int begin = (i * in) / out;
  const int end = ((i + 1) * in + out - 1) / out;
  return {begin, end};
}

Tensor avgpool_forward(const AdaptiveAvgPool& pool, const Tensor& x) {
  Tensor y(x.channels(), pool.out_height, pool.out_width);
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < pool.out_height; ++oy) {
      const auto by = adaptive_bin(oy, x.height(), pool.out_height);
      for (int ox = 0; ox < pool.out_width; ++ox) {
        const auto bx = adaptive_bin(ox, x.width(), pool.out_width);
        double acc = 0.0;
        for (int yy = by.begin; yy < by.end; ++yy) {
          for (int xx = bx.begin; xx < bx.end; ++xx) acc += x.at(c, yy, xx);
        }
        y.at(c, oy, ox) = static_cast<float>(acc / ((by.end - by.begin) * (bx.end - bx.begin)));
      }
    }
  }
  return y;
}

Tensor avgpool_backward(const AdaptiveAvgPool& pool, const Tensor& x, const Tensor& dy) {
  Tensor dx(x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    for (int oy = 0; oy < pool.out_height; ++oy) {
      const auto by = adaptive_bin(oy, x.height(), pool.out_height);
      for (int ox = 0; ox < pool.out_width; ++ox) {
        const auto bx = adaptive_bin(ox, x.width(), pool.out_width);
        const float share = dy.at(c, oy, ox) / static_cast<float>((by.end - by.begin) * (bx.end - bx.begin));
        for (int yy = by.begin; yy < by.end; ++yy) {
          for (int xx = bx.begin; xx < bx.end; ++xx) dx.at(c, yy, xx) += share;
        }
      }
    }
  }
  return dx;
}

Tensor linear_forward(const Linear& fc, const Tensor& x) {
  if (static_cast<int>(x.size()) != fc.in_features) {
    throw ShapeError("linear layer expects " + std::to_string(fc.in_features) + " inputs, got " +
                     std::to_string(x.size()) + " (" + x.shape_string() + ")");
  }
  Tensor y(fc.out_features, 1, 1);
  std::copy(fc.bias.begin(), fc.bias.end(), y.data());
  cblas_sgemv(CblasRowMajor, CblasNoTrans, fc.out_features, fc.in_features, 1.0f, fc.weight.data(),
              fc.in_features, x.data(), 1, 1.0f, y.data(), 1);
  return y;
}

Tensor linear_backward(const Linear& fc, const Tensor& x, const Tensor& dy) {
  Tensor dx(x.channels(), x.height(), x.width());
  cblas_sgemv(CblasRowMajor, CblasTrans, fc.out_features, fc.in_features, 1.0f, fc.weight.data(),
              fc.in_features, dy.data(), 1, 0.0f, dx.data(), 1);
  return dx;
}

Tensor layer_forward(const Layer& layer, const Tensor& x) {
  return std::visit(Overloaded{
                        [&](const Conv2d& l) { return conv_forward(l, x); },
                        [&](const Relu&) { return relu_forward(x); },
                        [&](const MaxPool2&) { return maxpool_forward(x); },
                        [&](const AdaptiveAvgPool& l) { return avgpool_forward(l, x); },
                        [&](const Linear& l) { return linear_forward(l, x); },
                    },
                    layer);
}

Tensor layer_backward(const Layer& layer, const Tensor& x, const Tensor& y, const Tensor& dy) {
  return std::visit(Overloaded{
                        [&](const Conv2d& l) { return conv_backward(l, x, dy); },
                        [&](const Relu&) { return relu_backward(y, dy); },
                        [&](const MaxPool2&) { return maxpool_backward(x, dy); },
                        [&](const AdaptiveAvgPool& l) { return avgpool_backward(l, x, dy); },
                        [&](const Linear& l) { return linear_backward(l, x, dy); },
                    },
                    layer);
}

void add_into(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

std::size_t Network::add(Layer layer, std::string name) {
  if (!name.empty() && find(name)) throw ContractError("duplicate layer name " + name);
  layers_.push_back(std::move(layer));
  names_.push_back(std::move(name));
  return layers_.size() - 1;
}

std::optional<std::size_t> Network::find(std::string_view name) const {
  if (name.empty()) return std::nullopt;
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::size_t Network::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw TapError("unknown layer '" + std::string(name) + "'");
}

Activations Network::forward(const Tensor& input, std::size_t last_layer) const {
  if (last_layer >= layers_.size()) throw ContractError("forward past the last layer");
  Activations acts;
  acts.input = input;
  acts.outputs.reserve(last_layer + 1);
  for (std::size_t i = 0; i <= last_layer; ++i) {
    acts.outputs.push_back(layer_forward(layers_[i], acts.input_of(i)));
  }
  return acts;
}

BackwardResult Network::backward(const Activations& activations, std::span<const GradientSeed> seeds,
                                 std::span<const std::size_t> capture, bool want_input_gradient) const {
  if (seeds.empty()) throw ContractError("backward needs at least one gradient seed");
  std::size_t top = 0;
  for (const auto& seed : seeds) {
    if (seed.layer >= activations.outputs.size()) throw ContractError("gradient seed on a layer that was not computed");
    if (!seed.gradient.same_shape(activations.outputs[seed.layer])) {
      throw ContractError("gradient seed for layer " + std::to_string(seed.layer) + " has shape " +
                          seed.gradient.shape_string() + ", expected " +
                          activations.outputs[seed.layer].shape_string());
    }
    top = std::max(top, seed.layer);
  }
  std::size_t bottom = 0;
  if (!want_input_gradient) {
    if (capture.empty()) throw ContractError("backward with nothing to capture");
    bottom = *std::min_element(capture.begin(), capture.end());
    if (bottom > top) throw ContractError("captured layer lies above every seed");
  }

  BackwardResult result;
  const auto& top_out = activations.outputs[top];
  Tensor grad(top_out.channels(), top_out.height(), top_out.width());
  for (std::size_t i = top + 1; i-- > 0;) {
    for (const auto& seed : seeds) {
      if (seed.layer == i) add_into(grad, seed.gradient);
    }
    if (std::find(capture.begin(), capture.end(), i) != capture.end()) result.captured[i] = grad;
    if (!want_input_gradient && i == bottom) break;
    grad = layer_backward(layers_[i], activations.input_of(i), activations.outputs[i], grad);
    if (i == 0) result.input_gradient = std::move(grad);
  }
  return result;
}

}  // namespace semfuse::nn
