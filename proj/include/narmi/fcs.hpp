#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "narmi/core_data.hpp"
#include "narmi/glm.hpp"
#include "narmi/random.hpp"

namespace narmi {

/// Sensitivity parameters of the outcome imputation model: for rows with the
/// outcome missing the linear predictor is shifted by delta0 + delta1 * X.
/// Units are those of the link scale.
struct DeltaSpec {
  double delta0 = 0.0;
  double delta1 = 0.0;

  bool is_null() const { return delta0 == 0.0 && delta1 == 0.0; }
  DeltaSpec scaled(double m) const { return {delta0 * m, delta1 * m}; }
  double offset(double exposure) const { return delta0 + delta1 * exposure; }
};

enum class OutcomeInit {
  delta_model,  // fit the outcome model on observed-outcome rows, delta-adjusted draw
  resample,     // draw from observed outcome values
  none          // leave the outcome missing
};

/// Chained-equations plan.
struct ImputationPlan {
  std::vector<std::string> targets;  // incomplete non-outcome variables, visit order
  std::map<std::string, ModelFormula> univariate_formulas;
  std::optional<ModelFormula> outcome_formula;  // identifiable part; absent = outcome not imputed
  DeltaSpec delta;
  int iterations = 5;
  int n_imputations = 20;
  bool draw_parameters = true;
  OutcomeInit outcome_init = OutcomeInit::delta_model;

  void validate(const Dataset& data) const;
};

/// Non-outcome, non-latent columns with at least one missing value, in
/// declaration order.
std::vector<std::string> incomplete_covariates(const Dataset& data);

/// target ~ predictors (main effects only), family from the target's measurement.
ModelFormula main_effects_formula(const Dataset& data, const std::string& target,
                                  const std::vector<std::string>& predictors);

/// Non-outcome, non-latent columns other than `target`.
std::vector<std::string> other_covariates(const Dataset& data, const std::string& target);

/// Main-effects univariate models that include the outcome as a predictor;
/// the outcome model is `outcome_formula` with the given delta.
ImputationPlan naive_narfcs_plan(const Dataset& data, const ModelFormula& outcome_formula, DeltaSpec delta,
                                 int iterations, int n_imputations);

/// Fills every missing target cell by resampling that variable's observed
/// values, then initializes the outcome according to plan.outcome_init.
Dataset initialize(const Dataset& data, const ImputationPlan& plan, Rng& rng);

/// Fits `formula` on rows where the target is observed and redraws every
/// originally missing cell from the predictive distribution.
void impute_univariate(const std::string& target, const ModelFormula& formula, Dataset& working, Rng& rng,
                       bool draw_parameters = true);

/// Outcome step: identifiable part fitted on observed-outcome rows, linear
/// predictor of missing-outcome rows shifted by the delta offset.
/// Returns the fit of the identifiable part.
GlmFit impute_outcome_delta(Dataset& working, const ModelFormula& outcome_formula, const DeltaSpec& delta, Rng& rng,
                            bool draw_parameters = true);

/// Redraws missing cells of `target` at the given parameters, optionally
/// with the delta offset (outcome only).
void draw_missing_cells(Dataset& working, Index target, const DesignMap& map, Family family, const ParamDraw& params,
                        const DeltaSpec* delta, Rng& rng);

/// One chain: initialize, then `iterations` sweeps with the outcome last.
Dataset run_fcs_chain(const Dataset& data, const ImputationPlan& plan, Rng& rng);

/// M independent chains; chain m uses a seed drawn from `rng` up front.
std::vector<Dataset> run_narfcs(const Dataset& data, const ImputationPlan& plan, Rng& rng);

/// Rejects formulas that reference latent variables.
void reject_latent(const ModelFormula& formula, const Dataset& data);

}  // namespace narmi
