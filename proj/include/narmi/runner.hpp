#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "narmi/estimators.hpp"
#include "narmi/metrics.hpp"
#include "narmi/simgen.hpp"
#include "narmi/smcfcs.hpp"

namespace narmi {

/// Invalid configuration or command-line input (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Method { narfcs, nar_smcfcs, nar_smc_stack };
std::string_view to_string(Method m);
/// Accepts narfcs, nar-smcfcs, nar-smc-stack.
Method parse_method(std::string_view s);
inline constexpr const char* kMethodList = "narfcs, nar-smcfcs, nar-smc-stack";

struct ScenarioSpec {
  ScenarioConfig scenario;
  std::vector<Method> methods;
  /// Multipliers at which SEs and intervals are computed; elsewhere point only.
  std::vector<double> se_multipliers;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 20240601;
  Index oracle_n = 1000000;
  int threads = 1;
  int rejection_cap = 1000;
  bool draw_parameters = true;
  bool weights_from_draw = false;
  StackResample stack_resample = StackResample::records;
  std::vector<ScenarioSpec> scenarios;
  std::filesystem::path output_dir = "narmi-out";
  /// Calibration cache; relative paths are resolved against output_dir.
  std::filesystem::path calibration_file = "calibration.json";
  /// Normalized JSON the run was parsed from (stored in the manifest).
  nlohmann::json source;
};

/// Parses a config document; a manifest (which embeds its config under
/// "config") is accepted as well. Throws ConfigError.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Root seed of replicate r (attempt a counts re-seeds after failures).
std::uint64_t replicate_seed(std::uint64_t root, const std::string& scenario, Index r, int attempt);
std::uint64_t calibration_seed(std::uint64_t root, const std::string& scenario);

struct ReplicateRow {
  Method method;
  double delta_mult;
  AceEstimate estimate;  // se and interval NaN when not computed
};

struct ReplicateResult {
  Index replicate = 0;
  int attempt = 0;
  std::uint64_t seed = 0;
  std::vector<ReplicateRow> rows;
  SmcfcsDiagnostics diagnostics;
  std::vector<std::string> failures;  // messages of failed attempts
};

/// Every method at every delta multiplier for one generated dataset.
/// Throws on engine failure.
std::vector<ReplicateRow> analyse_replicate(const ScenarioSpec& spec, const Calibration& cal, std::uint64_t seed,
                                            const RunConfig& config, SmcfcsDiagnostics& diagnostics);

/// analyse_replicate with re-seeding after failures (attempts 0, 1, ...).
ReplicateResult run_replicate(const ScenarioSpec& spec, const Calibration& cal, Index r, const RunConfig& config,
                              int max_attempts);

struct SummaryRow {
  std::string scenario;
  Method method;
  double delta_mult;
  PerformanceSummary summary;
};

struct ScenarioResult {
  ScenarioSpec spec;
  Calibration calibration;
  std::vector<ReplicateResult> replicates;
  std::vector<SummaryRow> summaries;
};

struct RunResult {
  std::vector<ScenarioResult> scenarios;
  std::string results_csv;
  std::string replicates_csv;
  nlohmann::json manifest;
};

/// Calibration for a scenario: taken from the cache when its seed and
/// oracle size match, computed otherwise.
Calibration obtain_calibration(const ScenarioConfig& scenario, const RunConfig& config,
                               std::map<std::string, Calibration>& cache);

/// Runs every scenario. Progress goes to `log` when given.
RunResult run_simulation(const RunConfig& config, std::ostream* log = nullptr);

/// results.csv, replicates.csv, manifest.json and the calibration cache.
void write_outputs(const RunResult& result, const RunConfig& config);

/// One sensitivity-analysis row of the estimate command.
struct EstimationRow {
  Method method;
  DeltaSpec delta;
  AceEstimate estimate;
};

struct EstimationOptions {
  int M = 20;
  int T = 5;
  int B = 200;
  std::uint64_t seed = 1;
  Analysis analysis = Analysis::gcomputation;
  StackResample stack_resample = StackResample::records;
};

/// Schema JSON: {"variables": [{"name", "role", "measurement"}...], "na_token"}.
std::vector<VariableSpec> parse_schema(const nlohmann::json& doc, std::string* na_token = nullptr);

std::vector<EstimationRow> run_estimation(const Dataset& data, Method method, const std::vector<DeltaSpec>& deltas,
                                          const ModelFormula& formula, const EstimationOptions& options);

std::string format_estimation_csv(const std::vector<EstimationRow>& rows);

}  // namespace narmi
