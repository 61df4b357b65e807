// semfuse: command-line front end (fuse, cam, metrics, bench).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "semfuse/backbone.hpp"
#include "semfuse/cam.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/pipeline.hpp"
#include "semfuse/runtime.hpp"

namespace fs = std::filesystem;
using namespace semfuse;

namespace {

constexpr int kExitFailure = 2;

struct Options {
  std::string weights;
  std::string loss_layers = "conv1_1";
  std::string cam_layers = "conv3_4,conv4_4,conv5_4";
  std::string degenerate = "uniform";
  bool no_classify = false;
  RunConfig run;

  // fuse
  std::string method = "fm0";
  std::vector<std::string> fuse_inputs;
  std::string fuse_output;
  std::string rule;
  std::optional<int> class0;
  std::optional<int> class1;
  std::string report_path;
  std::string trace_path;

  // cam
  std::string cam_input;
  std::optional<int> cam_class;
  std::string cam_output;
  std::string cam_map_output;

  // metrics
  std::vector<std::string> metric_inputs;
  std::string metric_fused;
  bool metric_json = false;
  std::string metric_pair = "pair";
  std::string metric_method = "fused";

  // bench
  std::string corpus;
  std::string methods = "fm0,fm1,fm2,fm3";
  std::string bench_out;
  int workers = 1;
  bool no_average = false;
};

// Tags errors raised outside the fusion pipeline with the step that failed.
template <typename Fn>
auto step(const std::string& name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(name, e.what());
  }
}

void finalise_run_config(Options& o) {
  o.run.optimizer.loss_layers = parse_layer_list(o.loss_layers);
  o.run.cam_layers = parse_layer_list(o.cam_layers);
  if (o.degenerate == "error") {
    o.run.degenerate_policy = DegeneratePolicy::Throw;
  } else if (o.degenerate == "uniform") {
    o.run.degenerate_policy = DegeneratePolicy::UniformHalf;
  } else {
    throw ContractError("--degenerate must be 'error' or 'uniform'");
  }
  o.run.classify = !o.no_classify;
  o.run.optimizer.validate();
}

Backbone load_backbone(const Options& o) {
  std::string path = o.weights;
  if (path.empty()) {
    if (const char* env = std::getenv("SEMFUSE_WEIGHTS")) path = env;
  }
  if (path.empty()) throw StageError("load_weights", "no weights given (use --weights or SEMFUSE_WEIGHTS)");
  return step("load_weights", [&] { return Backbone::load(path); });
}

// Options given on the command line or carrying a default, one key per line.
void append_options(std::ostream& out, const CLI::App& app) {
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string key = opt->get_lnames().front();
    if (key == "help" || key == "config") continue;
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->reduced_results();
    } else if (!opt->get_default_str().empty()) {
      values = {opt->get_default_str()};
    } else {
      continue;
    }
    out << key << '=';
    if (values.size() > 1) out << '[';
    for (std::size_t i = 0; i < values.size(); ++i) out << (i ? ", " : "") << nlohmann::json(values[i]).dump();
    if (values.size() > 1) out << ']';
    out << '\n';
  }
}

// Replayable with `semfuse --config <snapshot>`.
void write_snapshot(const CLI::App& app, const fs::path& path) {
  step("write_snapshot", [&] {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write config snapshot " + path.string());
    append_options(out, app);
    for (const CLI::App* sub : app.get_subcommands()) {
      out << '[' << sub->get_name() << "]\n";
      append_options(out, *sub);
    }
  });
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  step("write_report", [&] {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
  });
}

void add_run_options(CLI::App& app, Options& o) {
  auto& opt = o.run.optimizer;
  app.add_option("--weights", o.weights, "VGG19 safetensors weights (default: $SEMFUSE_WEIGHTS)");
  app.add_option("--epochs", opt.epochs, "optimiser epochs")->capture_default_str();
  app.add_option("--iterations", opt.iterations_per_epoch, "ADAM steps per epoch")->capture_default_str();
  app.add_option("--lr", opt.initial_learning_rate, "initial learning rate (image units)")->capture_default_str();
  app.add_option("--lr-decay", opt.lr_decay_per_epoch, "learning-rate decay per epoch")->capture_default_str();
  app.add_option("--tol", opt.convergence_tol, "relative epoch improvement that stops early; 0 disables")
      ->capture_default_str();
  app.add_option("--adam-beta1", opt.adam_beta1)->capture_default_str();
  app.add_option("--adam-beta2", opt.adam_beta2)->capture_default_str();
  app.add_option("--adam-eps", opt.adam_eps)->capture_default_str();
  app.add_option("--loss-layers", o.loss_layers, "layers of the fusion loss")->capture_default_str();
  app.add_option("--cam-layers", o.cam_layers, "layers combined into CAM maps")->capture_default_str();
  app.add_option("--degenerate", o.degenerate, "constant CAM handling: uniform or error")->capture_default_str();
  app.add_flag("--no-classify", o.no_classify, "skip top-1 classification in reports");
  auto& m = o.run.metrics;
  app.add_option("--metric-window", m.window_size, "UIQI window size")->capture_default_str();
  app.add_flag("--luma", m.luma, "score colour images on their luma");
  app.add_option("--pe-gamma-g", m.edge.gamma_g)->capture_default_str();
  app.add_option("--pe-kappa-g", m.edge.kappa_g)->capture_default_str();
  app.add_option("--pe-sigma-g", m.edge.sigma_g)->capture_default_str();
  app.add_option("--pe-gamma-a", m.edge.gamma_a)->capture_default_str();
  app.add_option("--pe-kappa-a", m.edge.kappa_a)->capture_default_str();
  app.add_option("--pe-sigma-a", m.edge.sigma_a)->capture_default_str();
  app.add_option("--pe-exponent", m.edge.exponent)->capture_default_str();
}

int run_fuse(const CLI::App& app, Options& o) {
  const Method method = step("arguments", [&] { return parse_method(o.method); });
  if (!o.rule.empty()) o.run.rule_override = step("arguments", [&] { return parse_fusion_rule(o.rule); });
  o.run.class0 = o.class0;
  o.run.class1 = o.class1;
  const fs::path output = o.fuse_output;
  write_snapshot(app, fs::path(output).concat(".config.toml"));
  const Backbone backbone = load_backbone(o);
  const Image i0 = step("read_input", [&] { return read_image(o.fuse_inputs.at(0)); });
  const Image i1 = step("read_input", [&] { return read_image(o.fuse_inputs.at(1)); });
  MethodOutput out = run_method(backbone, method, i0, i1, o.run, output.stem().string());
  step("write_output", [&] { write_image(output, out.fused); });
  out.report.fused_path = output;
  if (!o.trace_path.empty() && out.report.trace) {
    step("write_trace", [&] { write_trace_csv(o.trace_path, *out.report.trace); });
  }
  write_json(o.report_path.empty() ? fs::path(output).concat(".json") : fs::path(o.report_path), out.report.to_json());
  std::cout << out.report.method << " -> " << output.string() << " (" << out.report.wall_seconds << " s)\n";
  if (out.report.fused_class) {
    std::cout << "fused top-1: " << out.report.fused_class->class_label << " (" << out.report.fused_class->probability
              << ")\n";
  }
  return 0;
}

int run_cam(const CLI::App& app, Options& o) {
  const fs::path output = o.cam_output;
  write_snapshot(app, fs::path(output).concat(".config.toml"));
  const Backbone backbone = load_backbone(o);
  const Image image = step("read_input", [&] { return read_image(o.cam_input); });
  int class_id = 0;
  if (o.cam_class) {
    class_id = *o.cam_class;
  } else {
    const auto top = step("classify", [&] { return backbone.classify(image); });
    class_id = top.class_id;
    std::cout << "top-1: " << top.class_id << ' ' << top.class_label << " (" << top.probability << ")\n";
  }
  const CamMap cam =
      step("grad_cam", [&] { return class_cam(backbone, image, class_id, o.run.cam_layers, o.run.degenerate_policy); });
  if (cam.degenerate) std::cout << "warning: CAM is constant, using a uniform 0.5 map\n";
  step("write_output", [&] { write_image(output, cam_overlay(image, cam)); });
  if (!o.cam_map_output.empty()) {
    Image map(cam.values.height, cam.values.width, ColourSpace::Grayscale);
    for (std::size_t i = 0; i < cam.values.size(); ++i) map.pixels().values()[i] = static_cast<float>(cam.values.values[i]);
    step("write_output", [&] { write_image(o.cam_map_output, map); });
  }
  std::cout << "class " << class_id << " overlay -> " << output.string() << '\n';
  return 0;
}

int run_metrics(const CLI::App& app, Options& o) {
  write_snapshot(app, fs::path(o.metric_fused).concat(".metrics.config.toml"));
  const Image i0 = step("read_input", [&] { return read_image(o.metric_inputs.at(0)); });
  const Image i1 = step("read_input", [&] { return read_image(o.metric_inputs.at(1)); });
  const Image f = step("read_input", [&] { return read_image(o.metric_fused); });
  const MetricReport r = step("metrics", [&] { return evaluate_metrics(i0, i1, f, o.metric_pair, o.run.metrics); });
  if (o.metric_json) {
    nlohmann::json j = {{"pair", r.pair_id}, {"method", o.metric_method}, {"q0", r.q0},
                        {"pe", r.pe},        {"q", r.q},                 {"window_size", r.window_size}};
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout.precision(10);
    std::cout << "pair,method,q0,pe,q\n"
              << r.pair_id << ',' << o.metric_method << ',' << r.q0 << ',' << r.pe << ',' << r.q << '\n';
  }
  return 0;
}

int run_bench(const CLI::App& app, Options& o) {
  BenchConfig config;
  config.corpus_dir = o.corpus;
  config.out_dir = o.bench_out;
  config.methods = step("arguments", [&] { return parse_method_list(o.methods); });
  config.run = o.run;
  config.workers = o.workers;
  config.include_average = !o.no_average;
  write_snapshot(app, config.out_dir / "config.toml");
  const Backbone backbone = load_backbone(o);
  const BenchResult result = step("bench", [&] { return bench(backbone, config); });
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << result.reports.size() << " fused images, tables in " << config.out_dir.string() << '\n';
  return result.failures == 0 ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Semantic image fusion with a frozen VGG19", "semfuse"};
  app.set_config("--config", "", "read options from a TOML/INI file; flags override it");
  app.require_subcommand(1);
  Options o;
  add_run_options(app, o);

  auto* fuse = app.add_subcommand("fuse", "fuse two registered images")->configurable();
  fuse->add_option("--method", o.method, "fm0, fm1, fm2 or fm3")->capture_default_str();
  fuse->add_option("--input", o.fuse_inputs, "the two input images")->expected(2)->required();
  fuse->add_option("--output", o.fuse_output, "fused image")->required();
  fuse->add_option("--rule", o.rule, "psi0 or psi1 (overrides the method's rule)");
  fuse->add_option("--class0", o.class0, "CAM class for the first image");
  fuse->add_option("--class1", o.class1, "CAM class for the second image");
  fuse->add_option("--report", o.report_path, "report JSON (default: <output>.json)");
  fuse->add_option("--trace", o.trace_path, "per-epoch loss CSV");

  auto* cam = app.add_subcommand("cam", "write a CAM heat-map overlay")->configurable();
  cam->add_option("--input", o.cam_input, "image")->required();
  cam->add_option("--class", o.cam_class, "class id (default: top-1)");
  cam->add_option("--output", o.cam_output, "overlay PNG")->required();
  cam->add_option("--map", o.cam_map_output, "also write the raw map as grayscale");

  auto* metrics = app.add_subcommand("metrics", "score a fused image")->configurable();
  metrics->add_option("--inputs", o.metric_inputs, "the two source images")->expected(2)->required();
  metrics->add_option("--fused", o.metric_fused, "fused image")->required();
  metrics->add_flag("--json", o.metric_json, "print JSON instead of CSV");
  metrics->add_option("--pair", o.metric_pair, "pair label")->capture_default_str();
  metrics->add_option("--method", o.metric_method, "method label")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "run methods over a corpus of pairs")->configurable();
  bench->add_option("--corpus", o.corpus, "directory with <pair>_a.png / <pair>_b.png")->required();
  bench->add_option("--methods", o.methods, "comma separated methods")->capture_default_str();
  bench->add_option("--out", o.bench_out, "output directory")->required();
  bench->add_option("--workers", o.workers, "pairs processed concurrently")->capture_default_str();
  bench->add_flag("--no-average", o.no_average, "omit the averaging baseline");

  CLI11_PARSE(app, argc, argv);

  try {
    step("arguments", [&] { finalise_run_config(o); });
    if (*fuse) return run_fuse(app, o);
    if (*cam) return run_cam(app, o);
    if (*metrics) return run_metrics(app, o);
    return run_bench(app, o);
  } catch (const StageError& e) {
    std::cerr << "semfuse: error [" << e.stage() << "] " << e.message() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "semfuse: error [internal] " << e.what() << '\n';
  }
  return kExitFailure;
}
