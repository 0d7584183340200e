#include "narmi/smcfcs.hpp"

#include <cmath>
#include <limits>

#include "narmi/math.hpp"

namespace narmi {

void SmcfcsPlan::validate(const Dataset& data) const {
  if (iterations < 1) throw DataError("iterations must be >= 1");
  if (n_imputations < 2) throw DataError("n_imputations must be >= 2");
  if (rejection_cap < 1) throw DataError("rejection_cap must be >= 1");
  const Index y = data.outcome_column();
  if (y < 0) throw DataError("dataset has no outcome variable");
  const std::string& yname = data.column(y).name;
  if (substantive_formula.response != yname) throw DataError("substantive model response must be the outcome");
  if (outcome_imputation_formula.response != yname)
    throw DataError("outcome imputation model response must be the outcome");
  reject_latent(substantive_formula, data);
  reject_latent(outcome_imputation_formula, data);
  DesignMap(substantive_formula, data);
  DesignMap(outcome_imputation_formula, data);
  for (const auto& t : targets) {
    const Index j = data.column_index(t);
    if (j == y) throw DataError("outcome listed as a covariate target");
    auto it = proposal_formulas.find(t);
    if (it == proposal_formulas.end()) throw DataError("no proposal model for '" + t + "'");
    const auto& f = it->second;
    if (f.response != t) throw DataError("proposal model for '" + t + "' has a different response");
    if (f.references(yname) || f.references("M_" + yname))
      throw DataError("proposal model for '" + t + "' must exclude the outcome");
    reject_latent(f, data);
    DesignMap(f, data);
  }
}

SmcfcsPlan default_smcfcs_plan(const Dataset& data, const ModelFormula& substantive, DeltaSpec delta, int iterations,
                               int n_imputations) {
  SmcfcsPlan plan;
  plan.substantive_formula = substantive;
  plan.outcome_imputation_formula = substantive;
  plan.targets = incomplete_covariates(data);
  for (const auto& t : plan.targets)
    plan.proposal_formulas.emplace(t, main_effects_formula(data, t, other_covariates(data, t)));
  plan.delta = delta;
  plan.iterations = iterations;
  plan.n_imputations = n_imputations;
  return plan;
}

double compatible_binary_probability(double log_f1, double log_f0, double log_p1, double log_p0) {
  const double a = log_f1 + log_p1;
  const double b = log_f0 + log_p0;
  if (a == -std::numeric_limits<double>::infinity() && b == -std::numeric_limits<double>::infinity())
    throw Error("target distribution vanishes at both values of a binary covariate");
  const double m = std::max(a, b);
  return std::exp(a - m) / (std::exp(a - m) + std::exp(b - m));
}

void impute_covariate_compatible(const std::string& target, Dataset& w, FittedDraw substantive, FittedDraw proposal,
                                 Rng& rng, int rejection_cap, SmcfcsDiagnostics& diagnostics) {
  const Index j = w.column_index(target);
  const Index y = w.outcome_column();
  const DesignMap smap(substantive.fit.formula, w);
  const DesignMap pmap(proposal.fit.formula, w);
  const Family yfam = substantive.fit.formula.family;
  const double ydisp = substantive.params.dispersion;
  const auto& theta = substantive.params.coef;
  const auto& lambda = proposal.params.coef;

  if (w.column(j).measurement == Measurement::binary) {
    for (Index i = 0; i < w.rows(); ++i) {
      if (!w.missing(i, j)) continue;
      const double yv = w.at(i, y);
      const DesignMap::Override one{j, 1.0}, zero{j, 0.0};
      const double log_f1 = log_density(yfam, yv, smap.linear_predictor(w, i, theta, &one), ydisp);
      const double log_f0 = log_density(yfam, yv, smap.linear_predictor(w, i, theta, &zero), ydisp);
      const double peta = pmap.linear_predictor(w, i, lambda);
      const double p = compatible_binary_probability(log_f1, log_f0, log_expit(peta), log_expit(-peta));
      w.set_imputed(i, j, rng.uniform() < p ? 1.0 : 0.0);
    }
    return;
  }

  // Continuous target: the outcome density is bounded by its mode, so
  // accepting with probability f(Y | v*) / sup f is exact rejection sampling.
  const Family vfam = proposal.fit.formula.family;
  for (Index i = 0; i < w.rows(); ++i) {
    if (!w.missing(i, j)) continue;
    const double yv = w.at(i, y);
    const double peta = pmap.linear_predictor(w, i, lambda);
    double candidate = 0.0;
    bool accepted = false;
    for (int attempt = 0; attempt < rejection_cap && !accepted; ++attempt) {
      candidate = draw_response(vfam, peta, proposal.params.dispersion, rng);
      const DesignMap::Override ov{j, candidate};
      const double eta = smap.linear_predictor(w, i, theta, &ov);
      double log_accept;
      if (yfam == Family::gaussian) {
        const double r = yv - eta;
        log_accept = ydisp > 0.0 ? -0.5 * r * r / ydisp : (r == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity());
      } else {
        log_accept = bernoulli_log_density(yv, eta);
      }
      accepted = std::log(rng.uniform()) < log_accept;
    }
    if (!accepted) ++diagnostics.rejection_exhaustions;
    w.set_imputed(i, j, candidate);
  }
}

Dataset run_smcfcs_chain(const Dataset& data, const SmcfcsPlan& plan, Rng& rng, SmcfcsDiagnostics& diagnostics) {
  Dataset w = data;
  const Index y = w.outcome_column();
  // Resampling initialization of covariates, then a delta-adjusted draw of
  // the outcome with the identifiable part fitted on observed-outcome rows.
  ImputationPlan init;
  init.targets = plan.targets;
  init.outcome_formula = plan.outcome_imputation_formula;
  init.delta = plan.delta;
  init.draw_parameters = plan.draw_parameters;
  init.outcome_init = OutcomeInit::delta_model;
  w = initialize(w, init, rng);

  const bool impute_y = w.count_missing(y) > 0;
  std::vector<Index> all_rows(static_cast<std::size_t>(w.rows()));
  for (Index i = 0; i < w.rows(); ++i) all_rows[static_cast<std::size_t>(i)] = i;

  for (int t = 0; t < plan.iterations; ++t) {
    for (const auto& target : plan.targets) {
      if (w.count_missing(w.column_index(target)) == 0) continue;
      const GlmFit subst = fit(plan.substantive_formula, w, all_rows);
      const ParamDraw theta = plan.draw_parameters ? draw_params(subst, rng) : plug_in(subst);
      const GlmFit prop = fit(plan.proposal_formulas.at(target), w, all_rows);
      const ParamDraw lambda = plan.draw_parameters ? draw_params(prop, rng) : plug_in(prop);
      impute_covariate_compatible(target, w, {subst, theta}, {prop, lambda}, rng, plan.rejection_cap, diagnostics);
    }
    if (impute_y) impute_outcome_delta(w, plan.outcome_imputation_formula, plan.delta, rng, plan.draw_parameters);
  }
  return w;
}

SmcfcsResult run_nar_smcfcs(const Dataset& data, const SmcfcsPlan& plan, Rng& rng) {
  plan.validate(data);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(plan.n_imputations));
  for (auto& s : seeds) s = rng.next_u64();
  SmcfcsResult out;
  for (auto s : seeds) {
    Rng chain(s);
    out.imputations.push_back(run_smcfcs_chain(data, plan, chain, out.diagnostics));
  }
  return out;
}

}  // namespace narmi
