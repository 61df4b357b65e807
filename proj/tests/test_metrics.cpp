#include <doctest.h>

#include <cmath>

#include "semfuse/error.hpp"
#include "semfuse/metrics.hpp"
#include "support.hpp"

using namespace semfuse;

namespace {

// UIQI written out from its definition with sample statistics.
double uiqi_formula(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  vx /= n - 1;
  vy /= n - 1;
  cxy /= n - 1;
  return 4 * cxy * mx * my / ((vx + vy) * (mx * mx + my * my));
}

std::vector<double> window_of(const Image& im, int y0, int x0, int w) {
  std::vector<double> v;
  for (int y = y0; y < y0 + w; ++y)
    for (int x = x0; x < x0 + w; ++x) v.push_back(im.at(0, y, x));
  return v;
}

Image gray(int h, int w, std::uint64_t seed) { return test::textured_image(h, w, ColourSpace::Grayscale, seed); }

Image blurred(const Image& im) {
  Image out = im;
  for (int y = 1; y + 1 < im.height(); ++y) {
    for (int x = 1; x + 1 < im.width(); ++x) {
      float s = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) s += im.at(0, y + dy, x + dx);
      out.at(0, y, x) = s / 9.0f;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("uiqi of a window with itself is 1") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> x(64);
  for (double& v : x) v = u(rng);
  CHECK(uiqi_window(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("uiqi matches the straight formula on random windows") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(64), y(64);
    for (double& v : x) v = u(rng);
    for (double& v : y) v = u(rng);
    CHECK(std::fabs(uiqi_window(x, y) - uiqi_formula(x, y)) < 1e-10);
  }
}

TEST_CASE("uiqi degenerate windows fall back to the remaining factor") {
  std::vector<double> x = {-1, 1, -2, 2, -3, 3, 0, 0};  // zero mean
  std::vector<double> y;
  for (double v : x) y.push_back(2.0 * v);
  CHECK(uiqi_window(x, y) == doctest::Approx(2.0 * 2.0 / (1.0 + 4.0)));  // 2c / (1 + c^2)

  const std::vector<double> a(8, 0.25), b(8, 0.75);
  CHECK(uiqi_window(a, b) == doctest::Approx(2 * 0.25 * 0.75 / (0.25 * 0.25 + 0.75 * 0.75)));
  CHECK(uiqi_window(a, a) == doctest::Approx(1.0));

  const std::vector<double> zero(8, 0.0);
  CHECK(uiqi_window(zero, zero) == 1.0);
  std::vector<double> tiny(8, 0.0);
  tiny[3] = 1e-12;  // both factors vanish but the windows differ
  CHECK(uiqi_window(zero, tiny) == 0.0);

  CHECK_THROWS_AS(uiqi_window(std::vector<double>(3), std::vector<double>(4)), ContractError);
}

TEST_CASE("identical inputs and output score 1") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Image i = gray(40, 37, seed);
    CHECK(std::fabs(q0_fusion(i, i, i) - 1.0) < 1e-9);
    CHECK(std::fabs(piella_q(i, i, i) - 1.0) < 1e-9);
  }
}

TEST_CASE("q0 equals the mean of per-window scores") {
  const Image a = gray(20, 18, 4), b = gray(20, 18, 5), f = gray(20, 18, 6);
  double sum = 0;
  int n = 0;
  for (int y = 0; y + 8 <= 20; ++y) {
    for (int x = 0; x + 8 <= 18; ++x) {
      const auto wf = window_of(f, y, x, 8);
      sum += (uiqi_formula(window_of(a, y, x, 8), wf) + uiqi_formula(window_of(b, y, x, 8), wf)) / 2;
      ++n;
    }
  }
  CHECK(q0_fusion(a, b, f) == doctest::Approx(sum / n).epsilon(1e-10));
}

TEST_CASE("piella weights windows by input variance") {
  const Image a = gray(8, 8, 7);
  const Image f = gray(8, 8, 8);
  const Image flat(8, 8, ColourSpace::Grayscale, 0.4f);
  // Single window where only the first input varies.
  CHECK(piella_q(a, flat, f) == doctest::Approx(uiqi_window(window_of(a, 0, 0, 8), window_of(f, 0, 0, 8))));
  CHECK(piella_q(flat, a, f) == doctest::Approx(uiqi_window(window_of(a, 0, 0, 8), window_of(f, 0, 0, 8))));
  // No window varies in either input: equal weighting.
  CHECK(piella_q(flat, flat, f) == doctest::Approx(q0_fusion(flat, flat, f)));
}

TEST_CASE("noise unrelated to the inputs scores near zero") {
  std::mt19937_64 rng(9);
  const Image a = gray(64, 64, 10), b = gray(64, 64, 11);
  const Image noise = test::random_image(64, 64, ColourSpace::Grayscale, rng);
  CHECK(std::fabs(q0_fusion(a, b, noise)) < 0.1);
}

TEST_CASE("edge preservation of a perfect transfer equals the sigmoid ceiling") {
  const Image i = gray(48, 48, 12);
  const EdgePreservationConstants c;
  const double ceiling = c.gamma_g / (1 + std::exp(c.kappa_g * (1 - c.sigma_g))) * c.gamma_a /
                         (1 + std::exp(c.kappa_a * (1 - c.sigma_a)));
  CHECK(pe_fusion(i, i, i) == doctest::Approx(ceiling).epsilon(1e-12));
  CHECK(pe_fusion(i, i, i) >= 0.95);
}

TEST_CASE("a constant fused image preserves almost no edges") {
  const Image a = gray(48, 48, 13), b = gray(48, 48, 14);
  const Image flat(48, 48, ColourSpace::Grayscale, 0.5f);
  CHECK(pe_fusion(a, b, flat) < 1e-3);
  CHECK(pe_fusion(flat, flat, flat) == 0.0);
}

TEST_CASE("metric ranges and swap symmetry on random triples") {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const Image a = test::random_image(16, 16, ColourSpace::Grayscale, rng);
    const Image b = test::random_image(16, 16, ColourSpace::Grayscale, rng);
    const Image f = test::random_image(16, 16, ColourSpace::Grayscale, rng);
    const double pe = pe_fusion(a, b, f);
    CHECK(pe >= 0.0);
    CHECK(pe <= 1.0);
    CHECK(std::fabs(pe - pe_fusion(b, a, f)) <= 1e-12);
    CHECK(std::fabs(q0_fusion(a, b, f) - q0_fusion(b, a, f)) <= 1e-12);
    CHECK(std::fabs(piella_q(a, b, f) - piella_q(b, a, f)) <= 1e-12);
  }
}

TEST_CASE("noise on the fused image lowers edge preservation") {
  const Image sharp = gray(64, 64, 16);
  const Image a = blurred(sharp);
  std::mt19937_64 rng(17);
  std::normal_distribution<float> n(0.0f, 0.05f);
  Image noisy = sharp;
  for (float& v : noisy.pixels().values()) v += n(rng);
  CHECK(pe_fusion(a, sharp, noisy) < pe_fusion(a, sharp, sharp));
}

TEST_CASE("colour inputs are refused unless luma scoring is requested") {
  const Image c = test::textured_image(32, 32, ColourSpace::Rgb, 18);
  const Image g = to_luma(c);
  CHECK_THROWS_AS(q0_fusion(c, c, c), UnsupportedError);
  CHECK_THROWS_AS(evaluate_metrics(c, c, c, "p"), UnsupportedError);
  MetricConfig cfg;
  cfg.luma = true;
  const MetricReport r = evaluate_metrics(c, c, c, "p", cfg);
  CHECK(r.q0 == doctest::Approx(q0_fusion(g, g, g)));
  CHECK(r.pair_id == "p");
  CHECK(r.window_size == 8);
}

TEST_CASE("size and window contracts") {
  const Image a = gray(32, 32, 19), b = gray(32, 33, 20);
  CHECK_THROWS_AS(q0_fusion(a, b, a), ContractError);
  CHECK_THROWS_AS(pe_fusion(a, a, b), ContractError);
  CHECK_THROWS_AS(q0_fusion(a, a, a, 40), ContractError);
  CHECK_THROWS_AS(piella_q(a, a, a, 1), ContractError);
}

TEST_CASE("metrics are deterministic") {
  const Image a = gray(40, 40, 21), b = gray(40, 40, 22), f = gray(40, 40, 23);
  const auto r1 = evaluate_metrics(a, b, f, "x");
  const auto r2 = evaluate_metrics(a, b, f, "x");
  CHECK(r1.q0 == r2.q0);
  CHECK(r1.pe == r2.pe);
  CHECK(r1.q == r2.q);
}
