#include "narmi/smcstack.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "narmi/math.hpp"

namespace narmi {

void StackPlan::validate(const Dataset& data) const {
  if (iterations < 1) throw DataError("iterations must be >= 1");
  if (n_imputations < 2) throw DataError("n_imputations must be >= 2");
  const Index y = data.outcome_column();
  if (y < 0) throw DataError("dataset has no outcome variable");
  const std::string& yname = data.column(y).name;
  if (outcome_formula.response != yname) throw DataError("outcome imputation model response must be the outcome");
  reject_latent(outcome_formula, data);
  DesignMap(outcome_formula, data);
  for (const auto& t : targets) {
    auto it = covariate_formulas.find(t);
    if (it == covariate_formulas.end()) throw DataError("no imputation model for '" + t + "'");
    if (it->second.references(yname))
      throw DataError("covariate model for '" + t + "' must exclude the outcome");
  }
}

StackPlan default_stack_plan(const Dataset& data, const ModelFormula& outcome_formula, DeltaSpec delta,
                             int iterations, int n_imputations) {
  StackPlan plan;
  plan.targets = incomplete_covariates(data);
  const std::string my = "M_" + data.column(data.outcome_column()).name;
  for (const auto& t : plan.targets) {
    auto preds = other_covariates(data, t);
    if (!delta.is_null()) preds.push_back(my);
    plan.covariate_formulas.emplace(t, main_effects_formula(data, t, preds));
  }
  plan.outcome_formula = outcome_formula;
  plan.delta = delta;
  plan.iterations = iterations;
  plan.n_imputations = n_imputations;
  return plan;
}

std::vector<Dataset> impute_covariates_stack(const Dataset& data, const StackPlan& plan, Rng& rng) {
  ImputationPlan fcs;
  fcs.targets = plan.targets;
  fcs.univariate_formulas = plan.covariate_formulas;
  fcs.iterations = plan.iterations;
  fcs.n_imputations = plan.n_imputations;
  fcs.draw_parameters = plan.draw_parameters;
  fcs.outcome_init = OutcomeInit::none;
  return run_narfcs(data, fcs, rng);
}

StackedImputation stack_imputations(const std::vector<Dataset>& imputations, const Dataset& original) {
  if (imputations.empty()) throw DataError("nothing to stack");
  StackedImputation s;
  s.data = Dataset::stack(imputations);
  s.n = original.rows();
  s.M = static_cast<Index>(imputations.size());
  if (s.data.rows() != s.n * s.M) throw DataError("imputed datasets differ in size from the original");
  s.weight = Eigen::VectorXd::Constant(s.data.rows(), 1.0 / static_cast<double>(s.M));
  s.pattern.resize(static_cast<std::size_t>(s.n));
  for (Index i = 0; i < s.n; ++i) s.pattern[static_cast<std::size_t>(i)] = classify_pattern(i, original);
  return s;
}

GlmFit impute_outcome_on_stack(StackedImputation& stack, const ModelFormula& outcome_formula, const DeltaSpec& delta,
                               const Dataset& original, Rng& rng, bool draw_parameters, std::vector<ParamDraw>* draws) {
  const auto complete = rows_where(original, [&](Index i) { return classify_pattern(i, original) == MissingnessPattern::I; });
  const GlmFit f = fit(outcome_formula, original, complete);
  Dataset& w = stack.data;
  const Index y = w.outcome_column();
  const Index x = w.exposure_column();
  const DesignMap map(outcome_formula, w);
  if (draws) draws->clear();
  for (Index m = 0; m < stack.M; ++m) {
    const ParamDraw p = draw_parameters ? draw_params(f, rng) : plug_in(f);
    for (Index i = 0; i < stack.n; ++i) {
      const Index r = stack.record(i, m);
      if (!w.missing(r, y)) continue;
      const double eta = map.linear_predictor(w, r, p.coef) + delta.offset(x >= 0 ? w.at(r, x) : 0.0);
      w.set_imputed(r, y, draw_response(outcome_formula.family, eta, p.dispersion, rng));
    }
    if (draws) draws->push_back(p);
  }
  return f;
}

Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& logw) {
  const double lse = log_sum_exp(logw);
  if (lse == -std::numeric_limits<double>::infinity()) throw Error("all importance weights vanish");
  return (logw.array() - lse).exp().matrix();
}

void compute_weights(StackedImputation& stack, const GlmFit& outcome_fit, const std::vector<ParamDraw>* draws) {
  const Dataset& w = stack.data;
  const Index y = w.outcome_column();
  const DesignMap map(outcome_fit.formula, w);
  const double uniform = 1.0 / static_cast<double>(stack.M);
  if (draws && static_cast<Index>(draws->size()) != stack.M) throw DataError("need one parameter draw per imputation");
  Eigen::VectorXd logw(stack.M);
  for (Index i = 0; i < stack.n; ++i) {
    if (stack.pattern[static_cast<std::size_t>(i)] != MissingnessPattern::III) {
      for (Index m = 0; m < stack.M; ++m) stack.weight[stack.record(i, m)] = uniform;
      continue;
    }
    for (Index m = 0; m < stack.M; ++m) {
      const Index r = stack.record(i, m);
      const auto& coef = draws ? (*draws)[static_cast<std::size_t>(m)].coef : outcome_fit.coef;
      const double disp = draws ? (*draws)[static_cast<std::size_t>(m)].dispersion : outcome_fit.dispersion;
      logw[m] = log_density(outcome_fit.formula.family, w.at(r, y), map.linear_predictor(w, r, coef), disp);
    }
    const Eigen::VectorXd wi = normalize_log_weights(logw);
    for (Index m = 0; m < stack.M; ++m) stack.weight[stack.record(i, m)] = wi[m];
  }
}

StackedImputation run_nar_smc_stack(const Dataset& data, const StackPlan& plan, Rng& rng) {
  plan.validate(data);
  StackedImputation s = stack_imputations(impute_covariates_stack(data, plan, rng), data);
  std::vector<ParamDraw> draws;
  const GlmFit f = impute_outcome_on_stack(s, plan.outcome_formula, plan.delta, data, rng, plan.draw_parameters, &draws);
  compute_weights(s, f, plan.weights_from_draw ? &draws : nullptr);
  return s;
}

void write_stack_csv(const StackedImputation& stack, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const Dataset& d = stack.data;
  out << "i,m,weight";
  for (const auto& c : d.columns()) out << ',' << c.name;
  out << '\n';
  for (Index r = 0; r < d.rows(); ++r) {
    out << stack.individual(r) << ',' << stack.imputation(r) << ',' << format_double(stack.weight[r]);
    for (Index j = 0; j < d.cols(); ++j) out << ',' << (d.available(r, j) ? format_double(d.raw(r, j)) : "NA");
    out << '\n';
  }
}

}  // namespace narmi
