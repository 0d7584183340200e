#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "narmi/core_data.hpp"
#include "narmi/fcs.hpp"
#include "narmi/random.hpp"

namespace narmi {

enum class OutcomeType { continuous, binary };
enum class Interaction { none, weak, strong };
enum class MissingnessKind { simple, complex };

std::string_view to_string(OutcomeType v);
std::string_view to_string(Interaction v);
std::string_view to_string(MissingnessKind v);
OutcomeType parse_outcome_type(std::string_view s);
Interaction parse_interaction(std::string_view s);
MissingnessKind parse_missingness(std::string_view s);

/// beta7 / beta6 for an interaction level: 0, -0.5, -3.
double interaction_ratio(Interaction v);

struct ScenarioConfig {
  OutcomeType outcome_type = OutcomeType::continuous;
  Interaction interaction = Interaction::none;
  MissingnessKind missingness = MissingnessKind::simple;
  /// Outcome missingness independent of Y (coefficients on Y and X:Y set to 0).
  bool recoverable = false;
  std::vector<double> delta_multipliers{0.0, 1.0, 2.0};
  Index n = 1000;
  int M = 20;
  int T = 5;
  int B = 200;
  int replications = 200;
  std::uint64_t seed = 20240601;

  /// e.g. "continuous/strong/simple" (+ "/recoverable").
  std::string name() const;
};

/// Variables produced by the generator, in generation order.
enum class Var : int { A = 0, C1, C2, C3, C4, C5, X, Y, W };
inline constexpr int n_vars = 9;
std::string_view var_name(Var v);
Var parse_var(std::string_view name);

/// intercept + sum of coef * v_a (* v_b for a product term).
struct LinearModel {
  struct Term {
    Var a;
    std::optional<Var> b;
    double coef;
  };
  double intercept = 0.0;
  std::vector<Term> terms;

  double offset(const double* row, Index stride) const;
  double& coef(Var a, std::optional<Var> b = std::nullopt);
  double coef_or_zero(Var a, std::optional<Var> b = std::nullopt) const;
};

/// Every generation model. Binary variables and missingness indicators are
/// logistic; Y is gaussian with `outcome_sd` or logistic.
struct GenerationCoefficients {
  OutcomeType outcome_type = OutcomeType::continuous;
  std::map<std::string, LinearModel> models;  // C1..C5, X, Y, W, M_C4, M_C5, M_X, M_Y
  double outcome_sd = 1.0;

  const LinearModel& model(const std::string& key) const;
  LinearModel& model(const std::string& key);
};

void to_json(nlohmann::json& j, const GenerationCoefficients& c);
void from_json(const nlohmann::json& j, GenerationCoefficients& c);

/// Uncalibrated defaults: slopes fixed, intercepts 0, beta6 = 0.3.
GenerationCoefficients default_coefficients(const ScenarioConfig& config);

/// Marginal targets used by calibration.
struct CalibrationTargets {
  std::map<std::string, double> prevalence{{"C1", 0.35}, {"C2", 0.19}, {"C3", 0.11}, {"C4", 0.53},
                                           {"C5", 0.33}, {"X", 0.50},  {"W", 0.24}};
  std::map<std::string, double> missing_rate{{"M_C4", 0.15}, {"M_C5", 0.15}, {"M_X", 0.20}, {"M_Y", 0.20}};
  double complete_case_continuous = 0.55;
  double complete_case_binary = 0.50;
  double ace_continuous = 0.30;
  double ace_binary = 0.12;
};

/// n x 9 table of generated values, columns in Var order.
using Pool = Eigen::MatrixXd;

/// Draws every variable, column by column in generation order.
Pool generate_pool(const GenerationCoefficients& coefs, Index n, Rng& rng);

/// Substantive model: Y on C1..C5, X, the five confounder interactions and
/// X:C4 unless there is no interaction.
ModelFormula substantive_formula(const ScenarioConfig& config);

/// Dataset with columns Y, X, C1..C5, A and the latent W; nothing missing.
Dataset generate_complete(const ScenarioConfig& config, const GenerationCoefficients& coefs, Rng& rng);
Dataset pool_to_dataset(const Pool& pool, OutcomeType outcome_type, bool with_w);

/// P(M_k = 1) per row for M_C4, M_C5, M_X, M_Y (columns in that order).
Eigen::MatrixXd missingness_probabilities(const Pool& pool, const GenerationCoefficients& coefs);

/// Draws the four missingness indicators and drops W. Input must come from
/// generate_complete (same row order as the pool it was built from).
Dataset impose_missingness(const Dataset& complete, const GenerationCoefficients& coefs, Rng& rng);

/// Intercept b with mean(expit(b + offset)) = target, solved by safeguarded
/// Newton steps inside a bracket widened up to [-20, 20].
double calibrate_intercept(const Eigen::VectorXd& offset, double target, double tolerance = 1e-10);
/// Same, with the offset taken from `model` evaluated on a pool.
double calibrate_intercept(const LinearModel& model, const Pool& pool, double target, double tolerance = 1e-10);

/// Expected ACE under the true outcome model, averaged over the pool rows.
double expected_ace(const GenerationCoefficients& coefs, const Pool& pool);

struct TrueDelta {
  DeltaSpec delta;
  double se0 = 0.0;
  double se1 = 0.0;
};

/// Fits the outcome imputation model with M_Y (and X:M_Y for complex
/// missingness) as literal columns on `oracle_n` complete rows whose
/// outcome-missingness indicators were drawn but not applied.
TrueDelta estimate_true_delta(const ScenarioConfig& config, const GenerationCoefficients& coefs, Index oracle_n,
                              Rng& rng);

/// g-computation under the true model on a fresh oracle sample.
double estimate_true_ace(const GenerationCoefficients& coefs, Index oracle_n, Rng& rng);

struct Calibration {
  std::string scenario;
  GenerationCoefficients coefs;
  double true_ace = 0.0;
  TrueDelta true_delta;
  std::map<std::string, double> achieved;  // realized rates on the oracle sample
  std::vector<std::string> warnings;
  Index oracle_n = 0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const Calibration& c);
void from_json(const nlohmann::json& j, Calibration& c);

/// Full calibration of one scenario: intercepts, beta6, the shared W
/// coefficient of the covariate missingness models (complete-case target),
/// then the true ACE and true delta on independent oracle samples.
Calibration calibrate_scenario(const ScenarioConfig& config, Index oracle_n, std::uint64_t seed,
                               const CalibrationTargets& targets = {});
/// Same, starting from caller-supplied slopes (intercepts and beta6 are
/// overwritten).
Calibration calibrate_scenario(const ScenarioConfig& config, GenerationCoefficients start, Index oracle_n,
                               std::uint64_t seed, const CalibrationTargets& targets = {});

}  // namespace narmi
