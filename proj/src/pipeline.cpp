#include "semfuse/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace semfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<MethodSpec, 4> kMethods = {{
    {Method::FM0, FusionRule::ChooseMax, false, true},
    {Method::FM1, FusionRule::Majority, false, true},
    {Method::FM2, FusionRule::ChooseMax, true, true},
    {Method::FM3, std::nullopt, true, false},
}};

std::string lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view text) {
  const auto b = text.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = text.find_last_not_of(" \t");
  return std::string(text.substr(b, e - b + 1));
}

// Runs one stage, records it and tags any library error with its name.
template <typename Fn>
auto stage(FusionReport& report, const std::string& name, Fn&& fn) -> decltype(fn()) {
  report.stages.push_back(name);
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  }
}

json prediction_json(const std::optional<ClassPrediction>& p) {
  if (!p) return nullptr;
  return {{"class_id", p->class_id}, {"label", p->class_label}, {"probability", p->probability}};
}

json layers_json(const std::vector<LayerTap>& layers) {
  json out = json::array();
  for (const auto& l : layers) out.push_back(l.name);
  return out;
}

std::string policy_name(DegeneratePolicy p) { return p == DegeneratePolicy::Throw ? "error" : "uniform_half"; }

void require_pair(const Image& i0, const Image& i1) {
  if (!i0.same_geometry(i1)) {
    throw ContractError("input images must share size and colour space (" + i0.pixels().shape_string() + " " +
                        to_string(i0.colour_space()) + " vs " + i1.pixels().shape_string() + " " +
                        to_string(i1.colour_space()) + ")");
  }
}

InputClasses classify_inputs(const Backbone& backbone, FusionReport& report, const Image& i0, const Image& i1,
                             const std::optional<InputClasses>& known) {
  if (known) return *known;
  return stage(report, "classify_inputs", [&] { return InputClasses{backbone.classify(i0), backbone.classify(i1)}; });
}

// Shared tail: quantise, classify the result, score it, record timing.
MethodOutput finish(const Backbone& backbone, Image fused, FusionReport report, const RunConfig& config,
                    const Image& i0, const Image& i1, std::chrono::steady_clock::time_point start) {
  fused = quantise_8bit(fused);
  if (config.classify) {
    report.fused_class = stage(report, "classify_fused", [&] { return backbone.classify(fused); });
  }
  const bool colour = fused.colour_space() == ColourSpace::Rgb;
  if (config.score && (!colour || config.metrics.luma)) {
    report.metrics = stage(report, "metrics",
                           [&] { return evaluate_metrics(i0, i1, fused, report.pair_id, config.metrics); });
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(fused), std::move(report)};
}

FusionReport new_report(const Backbone& backbone, std::string method, const RunConfig& config,
                        const std::string& pair_id) {
  FusionReport report;
  report.pair_id = pair_id;
  report.method = std::move(method);
  report.checkpoint_id = backbone.checkpoint_id();
  report.config = config.to_json();
  return report;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void write_tables(const BenchConfig& config, const BenchResult& result, const std::vector<std::string>& methods,
                  const std::vector<std::string>& pairs, const std::string& checkpoint_id) {
  {
    auto out = open_output(config.out_dir / "metrics.csv");
    out << "pair,method,q0,pe,q\n";
    for (const auto& r : result.reports) {
      out << csv_field(r.pair_id) << ',' << r.method << ',';
      if (r.metrics) {
        out << format_exact(r.metrics->q0) << ',' << format_exact(r.metrics->pe) << ',' << format_exact(r.metrics->q);
      } else {
        out << "n/a,n/a,n/a";
      }
      out << '\n';
    }
  }
  {
    std::map<std::pair<std::string, std::string>, const FusionReport*> index;
    for (const auto& r : result.reports) index[{r.pair_id, r.method}] = &r;
    auto out = open_output(config.out_dir / "metrics.md");
    out << "| Pair | Metric |";
    for (const auto& m : methods) out << ' ' << m << " |";
    out << "\n|---|---|";
    for (std::size_t i = 0; i < methods.size(); ++i) out << "---|";
    out << '\n';
    const std::array<std::pair<const char*, double MetricReport::*>, 3> rows = {
        {{"Q0", &MetricReport::q0}, {"Pe", &MetricReport::pe}, {"Q", &MetricReport::q}}};
    for (const auto& pair : pairs) {
      for (const auto& [label, field] : rows) {
        out << "| " << pair << " | " << label << " |";
        for (const auto& m : methods) {
          const auto it = index.find({pair, m});
          if (it == index.end()) {
            out << " failed |";
          } else if (!it->second->metrics) {
            out << " n/a |";
          } else {
            out << ' ' << format_metric((*it->second->metrics).*field) << " |";
          }
        }
        out << '\n';
      }
    }
  }
  {
    auto out = open_output(config.out_dir / "classes.csv");
    out << "pair,method,class0,p0,class1,p1,fused_class,p_fused\n";
    const auto cell = [](const std::optional<ClassPrediction>& p) {
      if (!p) return std::string("n/a,n/a");
      return csv_field(std::to_string(p->class_id) + " " + p->class_label) + ',' + format_exact(p->probability);
    };
    for (const auto& r : result.reports) {
      out << csv_field(r.pair_id) << ',' << r.method << ',' << cell(r.class0) << ',' << cell(r.class1) << ','
          << cell(r.fused_class) << '\n';
    }
  }
  {
    json doc;
    doc["checkpoint_id"] = checkpoint_id;
    doc["corpus_dir"] = config.corpus_dir.string();
    doc["methods"] = methods;
    doc["workers"] = config.workers;
    doc["config"] = config.run.to_json();
    doc["warnings"] = result.warnings;
    doc["failures"] = result.failures;
    doc["reports"] = json::array();
    for (const auto& r : result.reports) doc["reports"].push_back(r.to_json());
    auto out = open_output(config.out_dir / "report.json");
    out << doc.dump(2) << '\n';
  }
}

}  // namespace

std::string to_string(Method method) { return "FM" + std::to_string(static_cast<int>(method)); }

Method parse_method(std::string_view text) {
  const std::string t = lower(trim(text));
  for (const auto& spec : kMethods) {
    if (t == lower(to_string(spec.method_id))) return spec.method_id;
  }
  throw ContractError("unknown method '" + std::string(text) + "' (expected fm0, fm1, fm2 or fm3)");
}

std::vector<Method> parse_method_list(std::string_view text) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    if (!trim(item).empty()) {
      const Method m = parse_method(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw ContractError("empty method list");
  return out;
}

const MethodSpec& method_spec(Method method) { return kMethods.at(static_cast<std::size_t>(method)); }

json RunConfig::to_json() const {
  json j;
  j["epochs"] = optimizer.epochs;
  j["iterations_per_epoch"] = optimizer.iterations_per_epoch;
  j["learning_rate"] = optimizer.initial_learning_rate;
  j["lr_decay"] = optimizer.lr_decay_per_epoch;
  j["loss_layers"] = layers_json(optimizer.loss_layers);
  j["convergence_tol"] = optimizer.convergence_tol;
  j["adam_beta1"] = optimizer.adam_beta1;
  j["adam_beta2"] = optimizer.adam_beta2;
  j["adam_eps"] = optimizer.adam_eps;
  j["cam_layers"] = layers_json(cam_layers);
  j["rule"] = rule_override ? json(to_string(*rule_override)) : json(nullptr);
  j["class0"] = class0 ? json(*class0) : json(nullptr);
  j["class1"] = class1 ? json(*class1) : json(nullptr);
  j["degenerate_policy"] = policy_name(degenerate_policy);
  j["metric_window"] = metrics.window_size;
  j["metric_luma"] = metrics.luma;
  const auto& e = metrics.edge;
  j["pe_constants"] = {{"gamma_g", e.gamma_g}, {"kappa_g", e.kappa_g}, {"sigma_g", e.sigma_g},
                       {"gamma_a", e.gamma_a}, {"kappa_a", e.kappa_a}, {"sigma_a", e.sigma_a},
                       {"exponent", e.exponent}};
  j["classify"] = classify;
  j["score"] = score;
  return j;
}

json FusionReport::to_json() const {
  json j;
  j["pair_id"] = pair_id;
  j["method"] = method;
  if (metrics) {
    j["metrics"] = {{"q0", metrics->q0}, {"pe", metrics->pe}, {"q", metrics->q}, {"window_size", metrics->window_size}};
  } else {
    j["metrics"] = nullptr;
  }
  j["class0"] = prediction_json(class0);
  j["class1"] = prediction_json(class1);
  j["fused_class"] = prediction_json(fused_class);
  j["cam_class0"] = cam_class0 ? json(*cam_class0) : json(nullptr);
  j["cam_class1"] = cam_class1 ? json(*cam_class1) : json(nullptr);
  j["cam_degenerate"] = cam_degenerate;
  if (trace) {
    j["optimisation"] = {{"initial_loss", trace->initial_loss}, {"final_loss", trace->final_loss},
                         {"steps", trace->steps},               {"epochs_run", trace->epochs.size()},
                         {"stopped_early", trace->stopped_early}, {"target_builds", trace->target_builds}};
  } else {
    j["optimisation"] = nullptr;
  }
  j["stages"] = stages;
  j["checkpoint_id"] = checkpoint_id;
  j["config"] = config;
  j["wall_seconds"] = wall_seconds;
  j["fused_path"] = fused_path.empty() ? json(nullptr) : json(fused_path.string());
  return j;
}

MethodOutput run_method(const Backbone& backbone, Method method, const Image& i0, const Image& i1,
                        const RunConfig& config, const std::string& pair_id, const std::optional<InputClasses>& known) {
  const auto start = std::chrono::steady_clock::now();
  const MethodSpec& spec = method_spec(method);
  FusionReport report = new_report(backbone, to_string(method), config, pair_id);
  stage(report, "validate", [&] {
    require_pair(i0, i1);
    preprocess(i0);
    config.optimizer.validate();
  });

  std::optional<InputClasses> classes;
  if (config.classify || spec.uses_cam) {
    classes = classify_inputs(backbone, report, i0, i1, known);
    if (config.classify) {
      report.class0 = classes->class0;
      report.class1 = classes->class1;
    }
  }

  std::optional<CamMap> cam0;
  std::optional<CamMap> cam1;
  if (spec.uses_cam) {
    const int c0 = config.class0.value_or(classes->class0.class_id);
    const int c1 = config.class1.value_or(classes->class1.class_id);
    report.cam_class0 = c0;
    report.cam_class1 = c1;
    stage(report, "grad_cam", [&] {
      cam0 = class_cam(backbone, i0, c0, config.cam_layers, config.degenerate_policy);
      cam1 = class_cam(backbone, i1, c1, config.cam_layers, config.degenerate_policy);
    });
    report.cam_degenerate = cam0->degenerate || cam1->degenerate;
  }

  Image fused;
  if (!spec.uses_optimiser) {
    const MixingMap mix = stage(report, "mixing_map", [&] { return mixing_map(*cam0, *cam1); });
    fused = stage(report, "cam_fuse", [&] { return cam_fuse(i0, i1, mix); });
  } else {
    const FusionRule rule = config.rule_override.value_or(*spec.rule);
    FeatureTransform transform;
    if (spec.uses_cam) {
      transform = [&](FeatureMaps maps, int index) {
        const CamMap& cam = index == 0 ? *cam0 : *cam1;
        for (auto& [tap, map] : maps) map = cam_weight_features(map, cam);
        return maps;
      };
    }
    const FusedTargets targets = stage(report, "fused_targets", [&] {
      return build_targets(backbone, i0, i1, rule, config.optimizer.loss_layers, transform);
    });
    OptimizationResult opt =
        stage(report, "optimise", [&] { return recover_image(backbone, average(i0, i1), targets, config.optimizer); });
    opt.trace.target_builds = 1;
    report.trace = std::move(opt.trace);
    fused = std::move(opt.image);
  }
  return finish(backbone, std::move(fused), std::move(report), config, i0, i1, start);
}

MethodOutput run_average(const Backbone& backbone, const Image& i0, const Image& i1, const RunConfig& config,
                         const std::string& pair_id, const std::optional<InputClasses>& known) {
  const auto start = std::chrono::steady_clock::now();
  FusionReport report = new_report(backbone, "AVG", config, pair_id);
  stage(report, "validate", [&] { require_pair(i0, i1); });
  if (config.classify) {
    const InputClasses classes = classify_inputs(backbone, report, i0, i1, known);
    report.class0 = classes.class0;
    report.class1 = classes.class1;
  }
  Image fused = stage(report, "average", [&] { return average(i0, i1); });
  return finish(backbone, std::move(fused), std::move(report), config, i0, i1, start);
}

std::vector<std::string> find_pairs(const fs::path& dir, std::vector<std::string>& warnings) {
  if (!fs::is_directory(dir)) throw Error("corpus directory " + dir.string() + " does not exist");
  static const std::set<std::string> kExtensions = {".png", ".jpg", ".jpeg"};
  std::map<std::string, std::set<char>> sides;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    if (!kExtensions.contains(lower(p.extension().string()))) continue;
    const std::string stem = p.stem().string();
    if (stem.size() < 3 || stem[stem.size() - 2] != '_') continue;
    const char side = stem.back();
    if (side != 'a' && side != 'b') continue;
    sides[stem.substr(0, stem.size() - 2)].insert(side);
  }
  std::vector<std::string> pairs;
  for (const auto& [name, s] : sides) {
    if (s.size() == 2) {
      pairs.push_back(name);
    } else {
      warnings.push_back(name + ": missing the _" + std::string(1, s.contains('a') ? 'b' : 'a') + " image, skipped");
    }
  }
  return pairs;
}

namespace {

fs::path pair_file(const fs::path& dir, const std::string& pair, char side) {
  for (const char* ext : {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"}) {
    fs::path p = dir / (pair + "_" + side + ext);
    if (fs::exists(p)) return p;
  }
  return dir / (pair + "_" + side + ".png");
}

struct PairOutcome {
  std::vector<FusionReport> reports;
  std::vector<std::string> warnings;
  int failures = 0;
};

PairOutcome run_pair(const Backbone& backbone, const BenchConfig& config, const std::string& pair) {
  PairOutcome outcome;
  Image i0;
  Image i1;
  try {
    i0 = read_image(pair_file(config.corpus_dir, pair, 'a'));
    i1 = read_image(pair_file(config.corpus_dir, pair, 'b'));
    require_pair(i0, i1);
    preprocess(i0);
  } catch (const Error& e) {
    outcome.warnings.push_back(pair + ": " + e.what() + ", skipped");
    return outcome;
  }

  std::optional<InputClasses> known;
  if (config.run.classify || std::any_of(config.methods.begin(), config.methods.end(),
                                         [](Method m) { return method_spec(m).uses_cam; })) {
    try {
      known = InputClasses{backbone.classify(i0), backbone.classify(i1)};
    } catch (const Error& e) {
      outcome.warnings.push_back(pair + ": classification failed: " + e.what() + ", skipped");
      ++outcome.failures;
      return outcome;
    }
  }

  auto record = [&](const std::string& name, auto&& run) {
    try {
      MethodOutput out = run();
      const fs::path path = config.out_dir / (pair + "_" + lower(name) + ".png");
      write_image(path, out.fused);
      out.report.fused_path = path;
      outcome.reports.push_back(std::move(out.report));
    } catch (const Error& e) {
      outcome.warnings.push_back(pair + " " + name + ": " + e.what());
      ++outcome.failures;
    }
  };
  if (config.include_average) {
    record("AVG", [&] { return run_average(backbone, i0, i1, config.run, pair, known); });
  }
  for (Method m : config.methods) {
    record(to_string(m), [&] { return run_method(backbone, m, i0, i1, config.run, pair, known); });
  }
  return outcome;
}

}  // namespace

BenchResult bench(const Backbone& backbone, const BenchConfig& config) {
  if (config.workers < 1) throw ContractError("bench needs at least one worker");
  if (config.methods.empty()) throw ContractError("bench needs at least one method");
  config.run.optimizer.validate();
  BenchResult result;
  const auto pairs = find_pairs(config.corpus_dir, result.warnings);
  fs::create_directories(config.out_dir);

  std::vector<PairOutcome> outcomes(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) outcomes[i] = run_pair(backbone, config, pairs[i]);
  };
  const int n = std::min<int>(config.workers, static_cast<int>(std::max<std::size_t>(pairs.size(), 1)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> threads;
    for (int t = 0; t < n; ++t) threads.emplace_back(worker);
  }

  std::vector<std::string> processed;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& o = outcomes[i];
    if (!o.reports.empty()) processed.push_back(pairs[i]);
    for (auto& r : o.reports) result.reports.push_back(std::move(r));
    for (auto& w : o.warnings) result.warnings.push_back(std::move(w));
    result.failures += o.failures;
  }

  std::vector<std::string> method_names;
  if (config.include_average) method_names.push_back("AVG");
  for (Method m : config.methods) method_names.push_back(to_string(m));
  write_tables(config, result, method_names, processed, backbone.checkpoint_id());
  return result;
}

}  // namespace semfuse
