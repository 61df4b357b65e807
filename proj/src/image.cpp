#include "semfuse/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "semfuse/error.hpp"

namespace semfuse {

std::string to_string(ColourSpace cs) { return cs == ColourSpace::Grayscale ? "grayscale" : "rgb"; }

namespace {

int channels_for(ColourSpace cs) { return cs == ColourSpace::Grayscale ? 1 : 3; }

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_geometry(b)) {
    throw ContractError(std::string(what) + ": images differ in size or colour space (" +
                        a.pixels().shape_string() + " vs " + b.pixels().shape_string() + ")");
  }
}

}  // namespace

Image::Image(int height, int width, ColourSpace colour_space, float fill)
    : pixels_(channels_for(colour_space), height, width, fill), colour_space_(colour_space) {}

Image::Image(Tensor pixels, ColourSpace colour_space)
    : pixels_(std::move(pixels)), colour_space_(colour_space) {
  if (pixels_.channels() != channels_for(colour_space)) {
    throw ContractError("channel count " + std::to_string(pixels_.channels()) +
                        " does not match colour space " + to_string(colour_space));
  }
}

bool Image::is_valid() const noexcept {
  return std::all_of(pixels_.values().begin(), pixels_.values().end(),
                     [](float v) { return std::isfinite(v) && v >= 0.0f && v <= 1.0f; });
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw ImageIoError("cannot decode image " + path.string());
  if (raw.depth() != CV_8U) throw ImageIoError("only 8-bit images are supported: " + path.string());

  cv::Mat rgb;
  ColourSpace cs = ColourSpace::Rgb;
  switch (raw.channels()) {
    case 1:
      rgb = raw;
      cs = ColourSpace::Grayscale;
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      break;
    default:
      throw ImageIoError("unsupported channel count in " + path.string());
  }

  Image image(rgb.rows, rgb.cols, cs);
  const int nc = image.channels();
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < rgb.cols; ++x) {
      for (int c = 0; c < nc; ++c) image.at(c, y, x) = row[x * nc + c] / 255.0f;
    }
  }
  return image;
}

namespace {

std::uint8_t to_byte(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image& image) {
  const int nc = image.channels();
  cv::Mat out(image.height(), image.width(), nc == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < nc; ++c) row[x * nc + c] = to_byte(image.at(c, y, x));
    }
  }
  if (nc == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw ImageIoError("cannot write image " + path.string());
}

Image quantise_8bit(const Image& image) {
  Image out = image;
  for (float& v : out.pixels().values()) v = to_byte(v) / 255.0f;
  return out;
}

Image average(const Image& a, const Image& b) {
  require_same(a, b, "average");
  Image out = a;
  auto dst = out.pixels().values();
  auto src = b.pixels().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5f * (dst[i] + src[i]);
  return out;
}

Image clamp_unit(const Image& image) {
  Image out = image;
  for (float& v : out.pixels().values()) v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  return out;
}

Image to_luma(const Image& image) {
  if (image.colour_space() == ColourSpace::Grayscale) return image;
  Image out(image.height(), image.width(), ColourSpace::Grayscale);
  const auto r = image.pixels().plane(0);
  const auto g = image.pixels().plane(1);
  const auto b = image.pixels().plane(2);
  auto y = out.pixels().plane(0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = static_cast<float>(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
  }
  return out;
}

Image to_rgb(const Image& image) {
  if (image.colour_space() == ColourSpace::Rgb) return image;
  Image out(image.height(), image.width(), ColourSpace::Rgb);
  for (int c = 0; c < 3; ++c) {
    std::copy(image.pixels().plane(0).begin(), image.pixels().plane(0).end(), out.pixels().plane(c).begin());
  }
  return out;
}

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  double sse = 0.0;
  auto va = a.pixels().values();
  auto vb = b.pixels().values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - vb[i];
    sse += d * d;
  }
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / (sse / static_cast<double>(va.size())));
}

}  // namespace semfuse
