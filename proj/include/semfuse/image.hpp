#pragma once

#include <filesystem>
#include <string>

#include "semfuse/tensor.hpp"

namespace semfuse {

enum class ColourSpace { Grayscale, Rgb };

std::string to_string(ColourSpace cs);

/// Minimum spatial size accepted by the VGG19 backbone.
inline constexpr int kMinImageSide = 32;

/// Image with pixel values stored channel-major in [0, 1].
///
/// Grayscale images have one channel, RGB images three. The value range is
/// an invariant of loaded and returned images; intermediate images built by
/// hand (e.g. optimisation candidates) may leave it, see `is_valid`.
class Image {
 public:
  Image() = default;
  Image(int height, int width, ColourSpace colour_space, float fill = 0.0f);
  Image(Tensor pixels, ColourSpace colour_space);

  int height() const noexcept { return pixels_.height(); }
  int width() const noexcept { return pixels_.width(); }
  int channels() const noexcept { return pixels_.channels(); }
  ColourSpace colour_space() const noexcept { return colour_space_; }

  Tensor& pixels() noexcept { return pixels_; }
  const Tensor& pixels() const noexcept { return pixels_; }

  float& at(int c, int y, int x) noexcept { return pixels_.at(c, y, x); }
  float at(int c, int y, int x) const noexcept { return pixels_.at(c, y, x); }

  bool same_geometry(const Image& other) const noexcept {
    return colour_space_ == other.colour_space_ && pixels_.same_shape(other.pixels_);
  }

  /// All values finite and within [0, 1].
  bool is_valid() const noexcept;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Tensor pixels_;
  ColourSpace colour_space_ = ColourSpace::Grayscale;
};

/// Reads an 8-bit PNG/JPEG. Single-channel files become grayscale, everything
/// else RGB (alpha is dropped). Values are divided by 255.
Image read_image(const std::filesystem::path& path);

/// Writes an 8-bit image; values are clamped to [0, 1], multiplied by 255 and
/// rounded half-up.
void write_image(const std::filesystem::path& path, const Image& image);

/// Quantises to the 8-bit grid used by `write_image` (clamp, x255, round half-up, /255).
Image quantise_8bit(const Image& image);

/// Pixelwise mean of two images with equal geometry.
Image average(const Image& a, const Image& b);

/// Values clamped to [0, 1]; NaN maps to 0.
Image clamp_unit(const Image& image);

/// Rec. 601 luma of an RGB image; grayscale input is returned unchanged.
Image to_luma(const Image& image);

/// Replicates a grayscale image into three identical RGB channels.
Image to_rgb(const Image& image);

/// Peak signal-to-noise ratio in dB for unit-range images; +inf for identical inputs.
double psnr(const Image& a, const Image& b);

}  // namespace semfuse
