#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "narmi/core_data.hpp"
#include "narmi/fcs.hpp"
#include "narmi/glm.hpp"
#include "narmi/random.hpp"

namespace narmi {

/// M imputed copies of one dataset, stacked vertically. Record r belongs to
/// individual r % n and imputation r / n.
struct StackedImputation {
  Dataset data;
  Eigen::VectorXd weight;                  // per record
  std::vector<MissingnessPattern> pattern;  // per individual
  Index n = 0;
  Index M = 0;

  Index record(Index i, Index m) const { return m * n + i; }
  Index individual(Index r) const { return r % n; }
  Index imputation(Index r) const { return r / n; }
};

struct StackPlan {
  std::vector<std::string> targets;
  std::map<std::string, ModelFormula> covariate_formulas;  // exclude Y; M_Y as predictor when delta != 0
  ModelFormula outcome_formula;                            // identifiable part, fitted on pattern-I rows
  DeltaSpec delta;
  int iterations = 5;
  int n_imputations = 20;
  bool draw_parameters = true;
  /// Weights from each imputation's drawn theta' instead of the MLE.
  bool weights_from_draw = false;

  void validate(const Dataset& data) const;
};

/// Covariate models: main effects of the other non-outcome columns, plus the
/// outcome missingness indicator unless delta is null.
StackPlan default_stack_plan(const Dataset& data, const ModelFormula& outcome_formula, DeltaSpec delta,
                             int iterations, int n_imputations);

/// Step 1: chained equations on the non-outcome targets only; the outcome
/// column is carried through with its missing cells still missing.
std::vector<Dataset> impute_covariates_stack(const Dataset& data, const StackPlan& plan, Rng& rng);

/// Step 2.
StackedImputation stack_imputations(const std::vector<Dataset>& imputations, const Dataset& original);

/// Step 3: theta' is fitted once on the pattern-I rows of `original`; each
/// imputation m gets its own parameter draw, and missing outcomes in block m
/// are drawn from the delta-adjusted predictive distribution.
/// Returns the fit; the per-imputation draws are written to `draws` if given.
GlmFit impute_outcome_on_stack(StackedImputation& stack, const ModelFormula& outcome_formula, const DeltaSpec& delta,
                               const Dataset& original, Rng& rng, bool draw_parameters = true,
                               std::vector<ParamDraw>* draws = nullptr);

/// exp(logw - logsumexp(logw)); throws when every entry is -inf.
Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& logw);

/// Step 4. Pattern-III individuals get weights proportional to
/// f(Y_i | covariates of record m, M_Y = 0, theta'), normalized over m in log
/// space; everyone else gets exactly 1/M. `draws` (one per imputation)
/// replaces the MLE when given.
void compute_weights(StackedImputation& stack, const GlmFit& outcome_fit,
                     const std::vector<ParamDraw>* draws = nullptr);

StackedImputation run_nar_smc_stack(const Dataset& data, const StackPlan& plan, Rng& rng);

/// Columns i, m, weight, then every variable (imputed values included).
void write_stack_csv(const StackedImputation& stack, const std::filesystem::path& path);

}  // namespace narmi
