// Acceptance run: prints one PASS / FAIL / REPLACED line per criterion.
// Exit status is 0 unless --strict is given and a criterion failed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semfuse/cam.hpp"
#include "semfuse/fusion_rules.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/optimizer.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/runtime.hpp"
#include "support.hpp"

using namespace semfuse;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  std::string verdict;  // PASS, FAIL or REPLACED
  std::string detail;
};

struct Ledger {
  int failures = 0;
  void print(int id, const std::string& name, const Outcome& o) {
    if (o.verdict == "FAIL") ++failures;
    std::printf("%-8s C%d %s: %s\n", o.verdict.c_str(), id, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::printf("         %s\n", s.c_str());
  std::fflush(stdout);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// --- C1 / C2: bench over the multi-focus corpus --------------------------------

struct Scores {
  std::map<std::string, MetricReport> fm0, avg;
  double fm0_seconds_max = 0.0;
};

Scores collect(const BenchResult& r) {
  Scores s;
  for (const auto& rep : r.reports) {
    if (!rep.metrics) continue;
    if (rep.method == "FM0") {
      s.fm0[rep.pair_id] = *rep.metrics;
      s.fm0_seconds_max = std::max(s.fm0_seconds_max, rep.wall_seconds);
    } else if (rep.method == "AVG") {
      s.avg[rep.pair_id] = *rep.metrics;
    }
  }
  return s;
}

Outcome clock_table(const Backbone& bb, const fs::path& corpus, const RunConfig& run) {
  const fs::path a = corpus / "clock_a.png";
  const fs::path b = corpus / "clock_b.png";
  if (!fs::exists(a) || !fs::exists(b)) {
    return {"REPLACED", "the Clock pair is not in the corpus; replaced by the ordering check C2"};
  }
  const auto t = Clock::now();
  const auto out = run_method(bb, Method::FM0, read_image(a), read_image(b), run, "clock");
  const double secs = seconds_since(t);
  const auto& m = *out.report.metrics;
  const bool ok = std::fabs(m.q0 - 0.8294) <= 0.05 && std::fabs(m.pe - 0.6308) <= 0.05 &&
                  std::fabs(m.q - 0.9580) <= 0.05 && secs <= 4 * 3600.0;
  return {ok ? "PASS" : "FAIL",
          fmt("FM0 Q0 %.4f (0.8294) Pe %.4f (0.6308) Q %.4f (0.9580), tolerance 0.05, %.1f s", m.q0, m.pe, m.q, secs)};
}

Outcome ordering(const Scores& s) {
  int wins = 0;
  int total = 0;
  for (const auto& [pair, fm0] : s.fm0) {
    if (pair.rfind("mf_", 0) != 0 || !s.avg.contains(pair)) continue;
    const double avg = s.avg.at(pair).q;
    ++total;
    wins += fm0.q > avg;
    note(fmt("%-10s Q FM0 %.4f  AVG %.4f  %s", pair.c_str(), fm0.q, avg, fm0.q > avg ? "ok" : "lower"));
  }
  const bool ok = total >= 3 && wins == total;
  return {ok ? "PASS" : "FAIL", fmt("FM0 Q above the average baseline on %d of %d multi-focus pairs", wins, total)};
}

// --- C3: identity -----------------------------------------------------------------

Outcome identity(const Backbone& bb, const fs::path& corpus, const RunConfig& run) {
  std::vector<fs::path> images;
  for (const char* n : {"camera", "moon", "coins", "brick", "gravel"}) images.push_back(corpus / "reference" / (std::string(n) + ".png"));
  int ok = 0;
  double worst_psnr = INFINITY;
  const long budget = static_cast<long>(run.optimizer.epochs) * run.optimizer.iterations_per_epoch;
  for (const auto& p : images) {
    const Image img = read_image(p);
    const auto out = run_method(bb, Method::FM0, img, img, run, p.stem().string());
    const auto& tr = *out.report.trace;
    const double db = psnr(out.fused, img);
    const bool pass = db >= 35.0 && tr.final_loss <= 0.01 * tr.initial_loss && tr.steps <= budget;
    ok += pass;
    worst_psnr = std::min(worst_psnr, db);
    note(fmt("%-8s PSNR %s dB, loss %.3g -> %.3g, %ld steps", p.stem().c_str(),
             std::isinf(db) ? "inf" : fmt("%.2f", db).c_str(), tr.initial_loss, tr.final_loss, tr.steps));
  }
  // The mean of (I, I) is I itself, so also show that descent recovers I from flat grey.
  {
    const Image img = read_image(images.front());
    const auto targets = build_targets(bb, img, img, FusionRule::ChooseMax, run.optimizer.loss_layers);
    const Image grey(img.height(), img.width(), ColourSpace::Grayscale, 0.5f);
    const auto r = recover_image(bb, grey, targets, run.optimizer);
    note(fmt("from grey: %s PSNR %.2f dB, loss %.3g -> %.3g (%.2f%%), %ld steps", images.front().stem().c_str(),
             psnr(quantise_8bit(r.image), img), r.trace.initial_loss, r.trace.final_loss,
             100.0 * r.trace.final_loss / r.trace.initial_loss, r.trace.steps));
  }
  return {ok == 5 ? "PASS" : "FAIL",
          fmt("%d of 5 images with PSNR >= 35 dB and final loss <= 1%% of initial (worst PSNR %s)", ok,
              std::isinf(worst_psnr) ? "inf" : fmt("%.2f", worst_psnr).c_str())};
}

// --- C4: fusion rules against brute-force oracles ---------------------------------

Tensor random_features(int c, int h, int w, std::mt19937_64& rng, bool coarse) {
  Tensor t(c, h, w);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  std::uniform_int_distribution<int> k(-3, 3);
  for (float& v : t.values()) v = coarse ? static_cast<float>(k(rng)) : u(rng);
  return t;
}

Tensor oracle_choose_max(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels(), a.height(), a.width());
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x)
        out.at(c, y, x) = std::fabs(a.at(c, y, x)) >= std::fabs(b.at(c, y, x)) ? a.at(c, y, x) : b.at(c, y, x);
  return out;
}

Tensor oracle_majority(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels(), a.height(), a.width());
  const int H = a.height();
  const int W = a.width();
  auto wins = [&](int c, int y, int x) {
    y = std::min(std::max(y, 0), H - 1);
    x = std::min(std::max(x, 0), W - 1);
    return std::fabs(a.at(c, y, x)) > std::fabs(b.at(c, y, x)) ? 1 : 0;
  };
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int votes = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) votes += wins(c, y + dy, x + dx);
        out.at(c, y, x) = votes >= 5 ? a.at(c, y, x) : b.at(c, y, x);
      }
  return out;
}

Outcome fusion_rules() {
  std::mt19937_64 rng(4242);
  std::uniform_int_distribution<int> cd(1, 16), hd(1, 32);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = trial == 0 ? 16 : cd(rng);
    const int h = trial == 0 ? 32 : hd(rng);
    const int w = trial == 0 ? 32 : hd(rng);
    const bool coarse = trial % 3 == 0;  // many ties
    const FeatureMap f0{random_features(c, h, w, rng, coarse), LayerTap::named("conv1_1"), "a"};
    const FeatureMap f1{random_features(c, h, w, rng, coarse), LayerTap::named("conv1_1"), "b"};
    const bool psi0 = choose_max(f0, f1).values == oracle_choose_max(f0.values, f1.values);
    const bool psi1 = majority_filter(f0, f1).values == oracle_majority(f0.values, f1.values);
    exact += psi0 && psi1;
  }
  return {exact == 100 ? "PASS" : "FAIL",
          fmt("psi0 and psi1 identical to the oracles on %d of 100 random pairs up to 16x32x32", exact)};
}

// --- C5: mixing function ----------------------------------------------------------

CamMap filled(int h, int w, double v) {
  CamMap c;
  c.values = Plane(h, w, v);
  return c;
}

Outcome mixing() {
  std::mt19937_64 rng(777);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int sum_exact = 0;
  int anti = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    CamMap p0 = filled(17, 23, 0.0);
    CamMap p1 = filled(17, 23, 0.0);
    for (double& v : p0.values.values) v = u(rng);
    for (double& v : p1.values.values) v = u(rng);
    const auto m01 = mixing_map(p0, p1);
    const auto m10 = mixing_map(p1, p0);
    const Plane q = m01.p_m1();
    bool ones = true;
    bool antisym = true;
    for (std::size_t i = 0; i < q.size(); ++i) {
      ones &= m01.p_m0.values[i] + q.values[i] == 1.0;
      const double d = std::fabs(m01.p_m0.values[i] - (1.0 - m10.p_m0.values[i]));
      worst = std::max(worst, d);
      antisym &= d <= 1e-15;
    }
    sum_exact += ones;
    anti += antisym;
  }
  bool boundaries = true;
  for (double v : {0.0, 0.3, 1.0}) {
    for (double m : mixing_map(filled(4, 4, v), filled(4, 4, v)).p_m0.values) boundaries &= m == 0.5;
  }
  for (double m : mixing_map(filled(4, 4, 0.0), filled(4, 4, 1.0)).p_m0.values) boundaries &= m == 0.0;
  for (double m : mixing_map(filled(4, 4, 1.0), filled(4, 4, 0.0)).p_m0.values) boundaries &= m == 1.0;
  const bool ok = sum_exact == 100 && anti == 100 && boundaries;
  return {ok ? "PASS" : "FAIL",
          fmt("sum exactly 1 on %d/100, antisymmetric on %d/100 (max deviation %.1e), boundary values %s", sum_exact,
              anti, worst, boundaries ? "exact" : "violated")};
}

// --- C6: metric properties --------------------------------------------------------

Outcome metric_properties(const fs::path& corpus) {
  double worst_identity = 0.0;
  for (const char* n : {"camera", "moon", "coins", "brick", "gravel", "text"}) {
    const Image i = read_image(corpus / "reference" / (std::string(n) + ".png"));
    worst_identity = std::max({worst_identity, std::fabs(q0_fusion(i, i, i) - 1.0), std::fabs(piella_q(i, i, i) - 1.0)});
  }
  std::mt19937_64 rng(99);
  int in_range = 0;
  double worst_swap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 16 + trial % 17;
    const int w = 16 + (trial * 7) % 23;
    Image a = test::random_image(h, w, ColourSpace::Grayscale, rng);
    Image b = test::textured_image(h, w, ColourSpace::Grayscale, 1000 + trial);
    Image f = average(a, b);
    if (trial % 4 == 1) f = test::random_image(h, w, ColourSpace::Grayscale, rng);
    if (trial % 4 == 2) f = a;
    const double pe = pe_fusion(a, b, f);
    in_range += pe >= 0.0 && pe <= 1.0;
    worst_swap = std::max({worst_swap, std::fabs(pe - pe_fusion(b, a, f)), std::fabs(q0_fusion(a, b, f) - q0_fusion(b, a, f)),
                           std::fabs(piella_q(a, b, f) - piella_q(b, a, f))});
  }
  const bool ok = worst_identity <= 1e-9 && in_range == 100 && worst_swap <= 1e-12;
  return {ok ? "PASS" : "FAIL", fmt("|q(i,i,i) - 1| <= %.1e on 6 images, Pe in [0,1] on %d/100, swap deviation %.1e",
                                    worst_identity, in_range, worst_swap)};
}

// --- C7: gradient check -----------------------------------------------------------

struct Smooth {
  std::string name;
  std::vector<LayerTap> taps;
  Objective objective;
};

double plain_value(const Smooth& s, const Backbone& bb, const NetworkInput& in) {
  return s.objective(bb.forward_taps(in, s.taps)).value;
}

Outcome gradient_check(const Backbone& bb) {
  const auto t = Clock::now();
  const Image img = test::textured_image(40, 48, ColourSpace::Rgb, 303);
  const NetworkInput base = preprocess(img);

  const LayerTap c11 = LayerTap::named("conv1_1");
  const LayerTap c22 = LayerTap::named("conv2_2");
  const LayerTap c31 = LayerTap::named("conv3_1");
  const Image o0 = test::textured_image(40, 48, ColourSpace::Rgb, 304);
  const Image o1 = test::textured_image(40, 48, ColourSpace::Rgb, 305);
  const std::vector<LayerTap> fusion_layers{c11, c31};
  const FusedTargets targets = build_targets(bb, o0, o1, FusionRule::ChooseMax, fusion_layers);

  std::vector<Smooth> objectives;
  objectives.push_back({"sum conv1_1", {c11}, [c11](const FeatureMaps& m) {
                          const Tensor& f = m.at(c11).values;
                          double v = 0.0;
                          for (float a : f.values()) v += a;
                          return ObjectiveValue{v, {{c11, Tensor(f.channels(), f.height(), f.width(), 1.0f)}}};
                        }});
  objectives.push_back({"0.5 |conv2_2|^2", {c22}, [c22](const FeatureMaps& m) {
                          const Tensor& f = m.at(c22).values;
                          double v = 0.0;
                          for (float a : f.values()) v += 0.5 * static_cast<double>(a) * a;
                          return ObjectiveValue{v, {{c22, f}}};
                        }});
  objectives.push_back({"fusion loss conv1_1+conv3_1", fusion_layers, [&](const FeatureMaps& m) {
                          ObjectiveValue o;
                          for (const auto& tap : fusion_layers) {
                            const Tensor& f = m.at(tap).values;
                            const Tensor& g = targets.at(tap).values;
                            Tensor d(f.channels(), f.height(), f.width());
                            for (std::size_t i = 0; i < f.size(); ++i) {
                              const double diff = static_cast<double>(f.values()[i]) - g.values()[i];
                              o.value += diff * diff;
                              d.values()[i] = static_cast<float>(2.0 * diff);
                            }
                            o.gradients.emplace(tap, std::move(d));
                          }
                          return o;
                        }});

  std::mt19937_64 rng(31337);
  std::uniform_int_distribution<int> cc(0, 2), yy(0, 39), xx(0, 47);
  const float h = 1e-3f;
  int objectives_ok = 0;
  std::string summary;
  for (const auto& s : objectives) {
    const auto g = bb.input_gradient(base, s.taps, s.objective);
    int agree = 0;
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      const int c = cc(rng);
      const int y = yy(rng);
      const int x = xx(rng);
      NetworkInput plus = base;
      NetworkInput minus = base;
      plus.values.at(c, y, x) += h;
      minus.values.at(c, y, x) -= h;
      const double step = static_cast<double>(plus.values.at(c, y, x)) - minus.values.at(c, y, x);
      const double fd = (plain_value(s, bb, plus) - plain_value(s, bb, minus)) / step;
      const double an = g.gradient.at(c, y, x);
      const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-12});
      worst = std::max(worst, rel);
      agree += rel <= 1e-2;
    }
    objectives_ok += agree >= 10;  // 95% of 10 samples
    note(fmt("%-28s %2d/10 within 1e-2 (worst relative error %.2e)", s.name.c_str(), agree, worst));
  }
  const double secs = seconds_since(t);
  const bool ok = objectives_ok == 3 && secs < 60.0;
  return {ok ? "PASS" : "FAIL", fmt("%d of 3 objectives agree with central differences, %.1f s", objectives_ok, secs)};
}

// --- C8: classification preservation ----------------------------------------------

Outcome classification(const Backbone& bb, const fs::path& corpus, const RunConfig& run) {
  std::vector<std::string> warnings;
  int preserved = 0;
  int considered = 0;
  for (const auto& pair : find_pairs(corpus, warnings)) {
    if (pair.rfind("rgb_", 0) != 0) continue;
    ++considered;
    const Image a = read_image(corpus / (pair + "_a.png"));
    const Image b = read_image(corpus / (pair + "_b.png"));
    const auto out = run_method(bb, Method::FM3, a, b, run, pair);
    const auto& r = out.report;
    const int c0 = r.class0->class_id;
    const int c1 = r.class1->class_id;
    const int cf = r.fused_class->class_id;
    const bool distinct = c0 != c1;
    const bool ok = distinct && (cf == c0 || cf == c1);
    preserved += ok;
    note(fmt("%-36s inputs %d '%s' / %d '%s', fused %d '%s'%s", pair.c_str(), c0, r.class0->class_label.c_str(), c1,
             r.class1->class_label.c_str(), cf, r.fused_class->class_label.c_str(),
             distinct ? "" : " (inputs share a class, not counted)"));
  }
  const bool ok = considered >= 4 && preserved >= 3;
  return {ok ? "PASS" : "FAIL",
          fmt("fused top-1 matches one of two distinct input classes on %d of %d colour pairs", preserved, considered)};
}

// --- C9: determinism --------------------------------------------------------------

Outcome determinism(const fs::path& first, const fs::path& second, const BenchResult& a, const BenchResult& b) {
  int files = 0;
  int identical = 0;
  for (const auto& e : fs::directory_iterator(first)) {
    const auto name = e.path().filename().string();
    const bool table = name == "metrics.csv" || name == "metrics.md" || name == "classes.csv";
    if (e.path().extension() != ".png" && !table) continue;
    ++files;
    const bool same = fs::exists(second / name) && slurp(e.path()) == slurp(second / name);
    identical += same;
    if (!same) note("differs: " + name);
  }
  const bool ok = files > 0 && identical == files && a.reports.size() == b.reports.size();
  return {ok ? "PASS" : "FAIL", fmt("%d of %d fused images and tables bit-identical across two bench runs", identical, files)};
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"acceptance checks"};
  fs::path weights;
  fs::path corpus;
  fs::path scratch = "acceptance_out";
  bool strict = false;
  app.add_option("--weights", weights)->required();
  app.add_option("--corpus", corpus)->required();
  app.add_option("--scratch", scratch);
  app.add_flag("--strict", strict, "exit 1 when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  const auto start = Clock::now();
  const Backbone bb = Backbone::load(weights);
  std::printf("checkpoint %s\n", bb.checkpoint_id().c_str());
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  RunConfig run;  // library defaults throughout
  std::printf("optimiser: %d epochs x %d steps, lr %g, decay %g, tol %g, loss layers %zu\n", run.optimizer.epochs,
              run.optimizer.iterations_per_epoch, run.optimizer.initial_learning_rate, run.optimizer.lr_decay_per_epoch,
              run.optimizer.convergence_tol, run.optimizer.loss_layers.size());

  BenchConfig bc;
  bc.corpus_dir = corpus;
  bc.methods = {Method::FM0};
  bc.run = run;
  bc.out_dir = scratch / "bench_1";
  const auto t1 = Clock::now();
  const BenchResult first = bench(bb, bc);
  std::printf("bench run 1: %zu images in %.1f s\n", first.reports.size(), seconds_since(t1));
  for (const auto& w : first.warnings) note("warning: " + w);

  Ledger ledger;
  ledger.print(1, "Clock pair scores", clock_table(bb, corpus, run));
  ledger.print(2, "metric ordering", ordering(collect(first)));
  ledger.print(3, "identity oracle", identity(bb, corpus, run));
  ledger.print(4, "fusion-rule oracles", fusion_rules());
  ledger.print(5, "mixing function", mixing());
  ledger.print(6, "metric properties", metric_properties(corpus));
  ledger.print(7, "gradient check", gradient_check(bb));
  ledger.print(8, "classification preservation", classification(bb, corpus, run));

  bc.out_dir = scratch / "bench_2";
  const BenchResult second = bench(bb, bc);
  ledger.print(9, "determinism", determinism(scratch / "bench_1", scratch / "bench_2", first, second));

  std::printf("%d criteria failed, %.1f s total\n", ledger.failures, seconds_since(start));
  return strict && ledger.failures > 0 ? 1 : 0;
}
