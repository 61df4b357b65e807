#include "semfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "semfuse/error.hpp"

namespace semfuse {

namespace {

// Denominators below this are treated as zero. The smallest non-zero
// variance of an 8-bit window is many orders of magnitude larger.
constexpr double kVanishing = 1e-20;

struct WindowStats {
  double mean = 0.0;
  double variance = 0.0;
};

WindowStats stats(std::span<const double> v) {
  double sum = 0.0;
  for (double a : v) sum += a;
  WindowStats s;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double a : v) ss += (a - s.mean) * (a - s.mean);
  s.variance = ss / static_cast<double>(v.size() - 1);
  return s;
}

double covariance(std::span<const double> x, std::span<const double> y, double mx, double my) {
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sxy += (x[i] - mx) * (y[i] - my);
  return sxy / static_cast<double>(x.size() - 1);
}

double uiqi_from_stats(std::span<const double> x, std::span<const double> y, const WindowStats& sx,
                       const WindowStats& sy) {
  const double sxy = covariance(x, y, sx.mean, sy.mean);
  const double var_term = sx.variance + sy.variance;
  const double mean_term = sx.mean * sx.mean + sy.mean * sy.mean;
  const bool var_zero = var_term < kVanishing;
  const bool mean_zero = mean_term < kVanishing;
  if (var_zero && mean_zero) return std::equal(x.begin(), x.end(), y.begin()) ? 1.0 : 0.0;
  if (var_zero) return 2.0 * sx.mean * sy.mean / mean_term;
  if (mean_zero) return 2.0 * sxy / var_term;
  return 4.0 * sxy * sx.mean * sy.mean / (var_term * mean_term);
}

std::vector<double> as_doubles(const Image& image) {
  const auto v = image.pixels().values();
  return {v.begin(), v.end()};
}

void require_single_channel(const Image& i0, const Image& i1, const Image& fused, int window_size) {
  for (const Image* im : {&i0, &i1, &fused}) {
    if (im->colour_space() != ColourSpace::Grayscale || im->channels() != 1) {
      throw UnsupportedError("fusion metrics are defined for single-channel images only");
    }
  }
  if (!i0.same_geometry(i1) || !i0.same_geometry(fused)) {
    throw ContractError("metric inputs differ in size: " + i0.pixels().shape_string() + ", " +
                        i1.pixels().shape_string() + ", " + fused.pixels().shape_string());
  }
  if (window_size < 2) throw ContractError("metric window must be at least 2 pixels");
  if (i0.height() < window_size || i0.width() < window_size) {
    throw ContractError("image smaller than the " + std::to_string(window_size) + "-pixel metric window");
  }
}

// Calls fn(qa, qb, var0, var1) for every window position, where qa and qb are
// the UIQI of (i0, fused) and (i1, fused).
template <typename Fn>
void for_each_window(const Image& i0, const Image& i1, const Image& fused, int w, Fn&& fn) {
  const auto a = as_doubles(i0);
  const auto b = as_doubles(i1);
  const auto f = as_doubles(fused);
  const int H = i0.height();
  const int W = i0.width();
  const std::size_t n = static_cast<std::size_t>(w) * w;
  std::vector<double> wa(n), wb(n), wf(n);
  for (int y = 0; y + w <= H; ++y) {
    for (int x = 0; x + w <= W; ++x) {
      std::size_t k = 0;
      for (int dy = 0; dy < w; ++dy) {
        const std::size_t row = static_cast<std::size_t>(y + dy) * W + x;
        for (int dx = 0; dx < w; ++dx, ++k) {
          wa[k] = a[row + dx];
          wb[k] = b[row + dx];
          wf[k] = f[row + dx];
        }
      }
      const WindowStats sa = stats(wa);
      const WindowStats sb = stats(wb);
      const WindowStats sf = stats(wf);
      fn(uiqi_from_stats(wa, wf, sa, sf), uiqi_from_stats(wb, wf, sb, sf), sa.variance, sb.variance);
    }
  }
}

struct Gradients {
  cv::Mat strength;
  cv::Mat orientation;
};

Gradients sobel(const Image& image) {
  cv::Mat src(image.height(), image.width(), CV_32F, const_cast<float*>(image.pixels().data()));
  cv::Mat src64;
  src.convertTo(src64, CV_64F);
  cv::Mat gx, gy;
  cv::Sobel(src64, gx, CV_64F, 1, 0, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
  cv::Sobel(src64, gy, CV_64F, 0, 1, 3, 1.0, 0.0, cv::BORDER_REPLICATE);
  Gradients g{cv::Mat(src.size(), CV_64F), cv::Mat(src.size(), CV_64F)};
  for (int y = 0; y < src.rows; ++y) {
    for (int x = 0; x < src.cols; ++x) {
      const double sx = gx.at<double>(y, x);
      const double sy = gy.at<double>(y, x);
      g.strength.at<double>(y, x) = std::hypot(sx, sy);
      double alpha = 0.0;
      if (sx != 0.0) {
        alpha = std::atan(sy / sx);
      } else if (sy != 0.0) {
        alpha = sy > 0.0 ? std::numbers::pi / 2 : -std::numbers::pi / 2;
      }
      g.orientation.at<double>(y, x) = alpha;
    }
  }
  return g;
}

double preservation(double g_in, double a_in, double g_f, double a_f, const EdgePreservationConstants& c) {
  double G = 0.0;
  if (g_in > g_f) {
    G = g_f / g_in;
  } else if (g_f > 0.0) {
    G = g_in / g_f;
  }
  const double A = 1.0 - std::fabs(a_in - a_f) / (std::numbers::pi / 2);
  const double qg = c.gamma_g / (1.0 + std::exp(c.kappa_g * (G - c.sigma_g)));
  const double qa = c.gamma_a / (1.0 + std::exp(c.kappa_a * (A - c.sigma_a)));
  return qg * qa;
}

}  // namespace

double uiqi_window(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ContractError("UIQI windows differ in size");
  if (x.size() < 2) throw ContractError("UIQI window needs at least two samples");
  return uiqi_from_stats(x, y, stats(x), stats(y));
}

double q0_fusion(const Image& i0, const Image& i1, const Image& fused, int window_size) {
  require_single_channel(i0, i1, fused, window_size);
  double sum = 0.0;
  long count = 0;
  for_each_window(i0, i1, fused, window_size, [&](double qa, double qb, double, double) {
    sum += (qa + qb) / 2.0;
    ++count;
  });
  return sum / static_cast<double>(count);
}

double piella_q(const Image& i0, const Image& i1, const Image& fused, int window_size) {
  require_single_channel(i0, i1, fused, window_size);
  double weighted = 0.0;
  long weighted_count = 0;
  double equal = 0.0;
  long count = 0;
  for_each_window(i0, i1, fused, window_size, [&](double qa, double qb, double s0, double s1) {
    equal += (qa + qb) / 2.0;
    ++count;
    const double s = s0 + s1;
    if (s <= 0.0) return;
    weighted += (s0 * qa + s1 * qb) / s;
    ++weighted_count;
  });
  if (weighted_count == 0) return equal / static_cast<double>(count);
  return weighted / static_cast<double>(weighted_count);
}

double pe_fusion(const Image& i0, const Image& i1, const Image& fused, const EdgePreservationConstants& c) {
  require_single_channel(i0, i1, fused, 2);
  const Gradients ga = sobel(i0);
  const Gradients gb = sobel(i1);
  const Gradients gf = sobel(fused);
  double num = 0.0;
  double den = 0.0;
  for (int y = 0; y < i0.height(); ++y) {
    for (int x = 0; x < i0.width(); ++x) {
      const double sa = ga.strength.at<double>(y, x);
      const double sb = gb.strength.at<double>(y, x);
      const double sf = gf.strength.at<double>(y, x);
      const double af = gf.orientation.at<double>(y, x);
      const double wa = std::pow(sa, c.exponent);
      const double wb = std::pow(sb, c.exponent);
      const double qa = preservation(sa, ga.orientation.at<double>(y, x), sf, af, c);
      const double qb = preservation(sb, gb.orientation.at<double>(y, x), sf, af, c);
      num += qa * wa + qb * wb;
      den += wa + wb;
    }
  }
  return den > 0.0 ? num / den : 0.0;
}

MetricReport evaluate_metrics(const Image& i0, const Image& i1, const Image& fused, const std::string& pair_id,
                              const MetricConfig& config) {
  const bool colour = i0.colour_space() == ColourSpace::Rgb || i1.colour_space() == ColourSpace::Rgb ||
                      fused.colour_space() == ColourSpace::Rgb;
  if (colour && !config.luma) {
    throw UnsupportedError("fusion metrics are defined for single-channel images; pass the luma option to score "
                           "colour images");
  }
  const Image a = to_luma(i0);
  const Image b = to_luma(i1);
  const Image f = to_luma(fused);
  MetricReport report;
  report.pair_id = pair_id;
  report.window_size = config.window_size;
  report.q0 = q0_fusion(a, b, f, config.window_size);
  report.pe = pe_fusion(a, b, f, config.edge);
  report.q = piella_q(a, b, f, config.window_size);
  return report;
}

}  // namespace semfuse
