#pragma once

#include <map>
#include <string>
#include <vector>

#include "narmi/core_data.hpp"
#include "narmi/fcs.hpp"
#include "narmi/glm.hpp"
#include "narmi/random.hpp"

namespace narmi {

/// Substantive-model-compatible FCS with a delta-adjusted outcome model.
struct SmcfcsPlan {
  ModelFormula substantive_formula;                   // f(Y | X, Z1, Z2, theta)
  std::vector<std::string> targets;                   // incomplete non-outcome variables, visit order
  std::map<std::string, ModelFormula> proposal_formulas;  // f(V_j | V_-j, S, lambda_j), no outcome
  ModelFormula outcome_imputation_formula;            // identifiable part of the delta-adjusted model
  DeltaSpec delta;
  int iterations = 5;
  int n_imputations = 20;
  int rejection_cap = 1000;
  bool draw_parameters = true;

  void validate(const Dataset& data) const;
};

struct SmcfcsDiagnostics {
  long rejection_exhaustions = 0;
  long refit_failures = 0;

  SmcfcsDiagnostics& operator+=(const SmcfcsDiagnostics& o) {
    rejection_exhaustions += o.rejection_exhaustions;
    refit_failures += o.refit_failures;
    return *this;
  }
};

struct SmcfcsResult {
  std::vector<Dataset> imputations;
  SmcfcsDiagnostics diagnostics;
};

/// Proposal models are main effects of every other non-outcome, non-latent
/// column; the outcome imputation model is the substantive model.
SmcfcsPlan default_smcfcs_plan(const Dataset& data, const ModelFormula& substantive, DeltaSpec delta, int iterations,
                               int n_imputations);

/// A fitted model together with the parameter values used for sampling.
struct FittedDraw {
  const GlmFit& fit;
  const ParamDraw& params;
};

/// Probability that a binary target equals 1 under the target distribution
/// f(Y | V_j = v, .) f(V_j = v | .), computed in log space.
double compatible_binary_probability(double log_f1, double log_f0, double log_p1, double log_p0);

/// Redraws missing cells of `target` from f(Y | ., theta) f(V_j | ., lambda_j):
/// direct two-point sampling for binary targets, rejection sampling against
/// the proposal for continuous ones.
void impute_covariate_compatible(const std::string& target, Dataset& working, FittedDraw substantive,
                                 FittedDraw proposal, Rng& rng, int rejection_cap, SmcfcsDiagnostics& diagnostics);

Dataset run_smcfcs_chain(const Dataset& data, const SmcfcsPlan& plan, Rng& rng, SmcfcsDiagnostics& diagnostics);

SmcfcsResult run_nar_smcfcs(const Dataset& data, const SmcfcsPlan& plan, Rng& rng);

}  // namespace narmi
