#pragma once

#include <span>
#include <string>

#include "semfuse/image.hpp"

namespace semfuse {

/// Sigmoid constants of the Xydeas-Petrovic edge preservation metric.
struct EdgePreservationConstants {
  double gamma_g = 0.9994;
  double kappa_g = -15.0;
  double sigma_g = 0.5;
  double gamma_a = 0.9879;
  double kappa_a = -22.0;
  double sigma_a = 0.8;
  double exponent = 1.0;  ///< edge strength weights are g^exponent
};

struct MetricConfig {
  int window_size = 8;
  EdgePreservationConstants edge;
  /// Score colour images on their Rec. 601 luma instead of refusing them.
  bool luma = false;
};

struct MetricReport {
  double q0 = 0.0;
  double pe = 0.0;
  double q = 0.0;
  int window_size = 8;
  std::string pair_id;
};

/// Universal image quality index of two equal-size windows.
///
/// Constant windows fall back to the remaining factor: equal variances of
/// zero leave 2 mx my / (mx^2 + my^2), zero means leave 2 sxy / (sx^2 + sy^2).
/// When both vanish the result is 1 for identical windows and 0 otherwise.
double uiqi_window(std::span<const double> x, std::span<const double> y);

/// Mean over all w x w windows (stride 1) of (Q(i0, f) + Q(i1, f)) / 2.
double q0_fusion(const Image& i0, const Image& i1, const Image& fused, int window_size = 8);

/// Edge preservation of Sobel gradients, weighted by input edge strength. In [0, 1].
double pe_fusion(const Image& i0, const Image& i1, const Image& fused, const EdgePreservationConstants& c = {});

/// Mean over windows of l Q(i0, f) + (1 - l) Q(i1, f) with l = s0 / (s0 + s1),
/// s the local variance. Windows where neither input varies are skipped; if
/// every window is skipped both inputs get equal weight.
double piella_q(const Image& i0, const Image& i1, const Image& fused, int window_size = 8);

/// All three metrics. Colour images throw UnsupportedError unless `config.luma`.
MetricReport evaluate_metrics(const Image& i0, const Image& i1, const Image& fused, const std::string& pair_id,
                              const MetricConfig& config = {});

}  // namespace semfuse
