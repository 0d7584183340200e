#include "narmi/fcs.hpp"

#include <algorithm>

namespace narmi {

void reject_latent(const ModelFormula& formula, const Dataset& data) {
  auto check = [&](const std::string& name) {
    auto j = data.find_column(name);
    if (!j && name.size() > 2 && name.compare(0, 2, "M_") == 0) j = data.find_column(std::string_view(name).substr(2));
    if (j && data.column(*j).role == Role::latent)
      throw DataError("formula '" + formula.to_string() + "' references latent variable '" + name + "'");
  };
  check(formula.response);
  for (const auto& t : formula.main_terms) check(t);
}

void ImputationPlan::validate(const Dataset& data) const {
  if (iterations < 1) throw DataError("iterations must be >= 1");
  if (n_imputations < 2) throw DataError("n_imputations must be >= 2");
  if (data.outcome_column() < 0) throw DataError("dataset has no outcome variable");
  for (const auto& t : targets) {
    const Index j = data.column_index(t);
    if (j == data.outcome_column()) throw DataError("outcome listed as a covariate target");
    if (data.column(j).role == Role::latent) throw DataError("latent variable '" + t + "' cannot be imputed");
    auto it = univariate_formulas.find(t);
    if (it == univariate_formulas.end()) throw DataError("no imputation model for '" + t + "'");
    if (it->second.response != t) throw DataError("imputation model for '" + t + "' has a different response");
    reject_latent(it->second, data);
    DesignMap(it->second, data);
  }
  if (outcome_formula) {
    if (outcome_formula->response != data.column(data.outcome_column()).name)
      throw DataError("outcome imputation model must have the outcome as response");
    reject_latent(*outcome_formula, data);
    DesignMap(*outcome_formula, data);
  }
}

std::vector<std::string> incomplete_covariates(const Dataset& data) {
  std::vector<std::string> out;
  for (Index j = 0; j < data.cols(); ++j) {
    const auto& c = data.column(j);
    if (j == data.outcome_column() || c.role == Role::latent) continue;
    if (!data.column_complete(j)) out.push_back(c.name);
  }
  return out;
}

std::vector<std::string> other_covariates(const Dataset& data, const std::string& target) {
  std::vector<std::string> out;
  for (Index j = 0; j < data.cols(); ++j) {
    const auto& c = data.column(j);
    if (j == data.outcome_column() || c.role == Role::latent || c.name == target) continue;
    out.push_back(c.name);
  }
  return out;
}

ModelFormula main_effects_formula(const Dataset& data, const std::string& target,
                                  const std::vector<std::string>& predictors) {
  ModelFormula f;
  f.response = target;
  f.main_terms = predictors;
  f.family = data.column(data.column_index(target)).measurement == Measurement::binary ? Family::bernoulli
                                                                                          : Family::gaussian;
  f.link = canonical_link(f.family);
  f.validate();
  return f;
}

ImputationPlan naive_narfcs_plan(const Dataset& data, const ModelFormula& outcome_formula, DeltaSpec delta,
                                 int iterations, int n_imputations) {
  ImputationPlan plan;
  plan.targets = incomplete_covariates(data);
  const std::string y = data.column(data.outcome_column()).name;
  for (const auto& t : plan.targets) {
    auto preds = other_covariates(data, t);
    preds.push_back(y);
    plan.univariate_formulas.emplace(t, main_effects_formula(data, t, preds));
  }
  plan.outcome_formula = outcome_formula;
  plan.delta = delta;
  plan.iterations = iterations;
  plan.n_imputations = n_imputations;
  return plan;
}

namespace {

void resample_missing(Dataset& w, Index j, Rng& rng) {
  std::vector<double> observed;
  for (Index i = 0; i < w.rows(); ++i)
    if (!w.missing(i, j)) observed.push_back(w.raw(i, j));
  if (observed.empty()) throw DataError("variable '" + w.column(j).name + "' has no observed values");
  const auto n = static_cast<Index>(observed.size());
  for (Index i = 0; i < w.rows(); ++i)
    if (w.missing(i, j)) w.set_imputed(i, j, observed[static_cast<std::size_t>(rng.index(n))]);
}

}  // namespace

Dataset initialize(const Dataset& data, const ImputationPlan& plan, Rng& rng) {
  Dataset w = data;
  for (const auto& t : plan.targets) {
    const Index j = w.column_index(t);
    if (w.count_missing(j) > 0) resample_missing(w, j, rng);
  }
  const Index y = w.outcome_column();
  if (y >= 0 && w.count_missing(y) > 0) {
    switch (plan.outcome_init) {
      case OutcomeInit::delta_model:
        if (!plan.outcome_formula) throw DataError("delta-model initialization needs an outcome model");
        impute_outcome_delta(w, *plan.outcome_formula, plan.delta, rng, plan.draw_parameters);
        break;
      case OutcomeInit::resample: resample_missing(w, y, rng); break;
      case OutcomeInit::none: break;
    }
  }
  return w;
}

void draw_missing_cells(Dataset& w, Index target, const DesignMap& map, Family family, const ParamDraw& params,
                        const DeltaSpec* delta, Rng& rng) {
  const Index x = w.exposure_column();
  for (Index i = 0; i < w.rows(); ++i) {
    if (!w.missing(i, target)) continue;
    double eta = map.linear_predictor(w, i, params.coef);
    if (delta) eta += delta->offset(x >= 0 ? w.at(i, x) : 0.0);
    w.set_imputed(i, target, draw_response(family, eta, params.dispersion, rng));
  }
}

void impute_univariate(const std::string& target, const ModelFormula& formula, Dataset& w, Rng& rng,
                       bool draw_parameters) {
  const Index j = w.column_index(target);
  if (w.count_missing(j) == 0) return;
  const DesignMap map(formula, w);
  const auto rows = rows_where(w, [&](Index i) { return !w.missing(i, j); });
  const GlmFit f = fit(formula, w, rows);
  const ParamDraw p = draw_parameters ? draw_params(f, rng) : plug_in(f);
  draw_missing_cells(w, j, map, formula.family, p, nullptr, rng);
}

GlmFit impute_outcome_delta(Dataset& w, const ModelFormula& outcome_formula, const DeltaSpec& delta, Rng& rng,
                            bool draw_parameters) {
  const Index y = w.outcome_column();
  if (outcome_formula.response != w.column(y).name) throw DataError("outcome model response is not the outcome");
  const DesignMap map(outcome_formula, w);
  const auto rows = rows_where(w, [&](Index i) { return !w.missing(i, y); });
  GlmFit f = fit(outcome_formula, w, rows);
  if (w.count_missing(y) == 0) return f;
  const ParamDraw p = draw_parameters ? draw_params(f, rng) : plug_in(f);
  draw_missing_cells(w, y, map, outcome_formula.family, p, &delta, rng);
  return f;
}

Dataset run_fcs_chain(const Dataset& data, const ImputationPlan& plan, Rng& rng) {
  Dataset w = initialize(data, plan, rng);
  const Index y = w.outcome_column();
  const bool impute_y = plan.outcome_formula && w.count_missing(y) > 0;
  for (int t = 0; t < plan.iterations; ++t) {
    for (const auto& target : plan.targets)
      impute_univariate(target, plan.univariate_formulas.at(target), w, rng, plan.draw_parameters);
    if (impute_y) impute_outcome_delta(w, *plan.outcome_formula, plan.delta, rng, plan.draw_parameters);
  }
  return w;
}

std::vector<Dataset> run_narfcs(const Dataset& data, const ImputationPlan& plan, Rng& rng) {
  plan.validate(data);
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(plan.n_imputations));
  for (auto& s : seeds) s = rng.next_u64();
  std::vector<Dataset> out;
  out.reserve(seeds.size());
  for (auto s : seeds) {
    Rng chain(s);
    out.push_back(run_fcs_chain(data, plan, chain));
  }
  return out;
}

}  // namespace narmi
