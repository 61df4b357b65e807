#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "semfuse/backbone.hpp"
#include "semfuse/cam.hpp"
#include "semfuse/error.hpp"
#include "semfuse/fusion_rules.hpp"
#include "semfuse/image.hpp"
#include "semfuse/metrics.hpp"
#include "semfuse/optimizer.hpp"

namespace semfuse {

enum class Method { FM0, FM1, FM2, FM3 };

/// "FM0" ... "FM3".
std::string to_string(Method method);
/// Case-insensitive "fm0" ... "fm3"; ContractError otherwise.
Method parse_method(std::string_view text);
/// Comma separated method list, e.g. "fm0,fm3".
std::vector<Method> parse_method_list(std::string_view text);

struct MethodSpec {
  Method method_id;
  std::optional<FusionRule> rule;  ///< absent for pure CAM mixing
  bool uses_cam;
  bool uses_optimiser;
};

/// FM0 optimiser+psi0, FM1 optimiser+psi1, FM2 optimiser+psi0 on CAM-weighted
/// features, FM3 CAM mixing only.
const MethodSpec& method_spec(Method method);

/// A module error annotated with the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string message)
      : Error(stage + ": " + message), stage_(std::move(stage)), message_(std::move(message)) {}
  const std::string& stage() const noexcept { return stage_; }
  /// The underlying error text without the stage prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string stage_;
  std::string message_;
};

struct RunConfig {
  OptimizerConfig optimizer;
  std::vector<LayerTap> cam_layers = semfuse::cam_layers();
  /// Replaces the method's own rule for optimiser methods.
  std::optional<FusionRule> rule_override;
  /// CAM classes; default is each image's own top-1 class.
  std::optional<int> class0;
  std::optional<int> class1;
  DegeneratePolicy degenerate_policy = DegeneratePolicy::UniformHalf;
  MetricConfig metrics;
  /// Classify inputs and output for the report.
  bool classify = true;
  /// Score grayscale results with the three fusion metrics.
  bool score = true;

  nlohmann::json to_json() const;
};

struct FusionReport {
  std::string pair_id;
  std::string method;  ///< "FM0" ... "FM3", or "AVG" for the averaging baseline
  std::optional<MetricReport> metrics;
  std::optional<ClassPrediction> class0;
  std::optional<ClassPrediction> class1;
  std::optional<ClassPrediction> fused_class;
  std::optional<int> cam_class0;
  std::optional<int> cam_class1;
  bool cam_degenerate = false;
  std::optional<OptimizationTrace> trace;
  std::vector<std::string> stages;  ///< stages executed, in order
  std::string checkpoint_id;
  nlohmann::json config;
  double wall_seconds = 0.0;
  std::filesystem::path fused_path;  ///< set once the image is on disk

  nlohmann::json to_json() const;
};

struct MethodOutput {
  Image fused;
  FusionReport report;
};

/// Top-1 classes of the inputs when already known (saves two forward passes).
struct InputClasses {
  ClassPrediction class0;
  ClassPrediction class1;
};

/// Fuses (i0, i1) with one method. Inputs must share size and colour space.
/// Metrics are computed on the 8-bit quantised result so they match the file
/// written afterwards.
MethodOutput run_method(const Backbone& backbone, Method method, const Image& i0, const Image& i1,
                        const RunConfig& config, const std::string& pair_id = {},
                        const std::optional<InputClasses>& known = std::nullopt);

/// Pixelwise average baseline, reported like a method.
MethodOutput run_average(const Backbone& backbone, const Image& i0, const Image& i1, const RunConfig& config,
                         const std::string& pair_id = {}, const std::optional<InputClasses>& known = std::nullopt);

struct BenchConfig {
  std::filesystem::path corpus_dir;
  std::filesystem::path out_dir;
  std::vector<Method> methods = {Method::FM0, Method::FM1, Method::FM2, Method::FM3};
  RunConfig run;
  int workers = 1;
  bool include_average = true;
};

struct BenchResult {
  std::vector<FusionReport> reports;  ///< pair-major, methods in configured order
  std::vector<std::string> warnings;  ///< skipped pairs and failed runs
  int failures = 0;                   ///< method runs that raised an error
};

/// Pairs `<pair>_a.<ext>` / `<pair>_b.<ext>` found in `dir`, sorted by name.
/// Unmatched files are reported through `warnings`.
std::vector<std::string> find_pairs(const std::filesystem::path& dir, std::vector<std::string>& warnings);

/// Runs every method on every pair of the corpus and writes fused images
/// `<pair>_<method>.png`, metrics.csv, metrics.md, classes.csv and report.json
/// to `out_dir`.
BenchResult bench(const Backbone& backbone, const BenchConfig& config);

}  // namespace semfuse
