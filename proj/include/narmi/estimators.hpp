#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "narmi/core_data.hpp"
#include "narmi/glm.hpp"
#include "narmi/random.hpp"
#include "narmi/smcstack.hpp"

namespace narmi {

/// Point, standard error and 95% interval.
struct AceEstimate {
  double point = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double df = std::numeric_limits<double>::infinity();  // reference t distribution

  static AceEstimate normal(double point, double se);
};

/// 0.975 quantile of the standard normal.
inline constexpr double z975 = 1.959963984540054;

/// g-computation prepared once for a fixed set of input rows, so the ACE can
/// be recomputed cheaply under any per-row weighting (bootstrap counts,
/// stack weights, jackknife folds). Both the fit and the average of
/// counterfactual predictions use the same weights.
class GcompModel {
 public:
  GcompModel(const ModelFormula& formula, const Dataset& data, std::span<const Index> rows);
  /// All rows of `data`.
  GcompModel(const ModelFormula& formula, const Dataset& data);

  Index rows() const { return static_cast<Index>(y_.size()); }
  const ModelFormula& formula() const { return formula_; }

  /// ACE with per-input-row weights (empty = unweighted).
  double ace(std::span<const double> weights = {}) const;
  /// The underlying weighted fit.
  GlmFit fit(std::span<const double> weights = {}) const;

 private:
  ModelFormula formula_;
  GroupedDesign design_;
  Eigen::MatrixXd u1_, u0_;  // counterfactual design per group
  std::vector<double> y_;
  Eigen::VectorXd start_;
};

/// mean_i E[Y | X = 1, row i] - mean_i E[Y | X = 0, row i]. Optional weights
/// are per data row and apply to both the fit and the averages.
double gcomputation(const Dataset& data, const ModelFormula& formula, const Eigen::VectorXd* weights = nullptr);
double gcomputation(const StackedImputation& stack, const ModelFormula& formula);

/// Exposure coefficient and its model-based SE; the formula may not contain
/// exposure interactions. SE is 0 for an exact fit.
AceEstimate outcome_regression_ace(const Dataset& data, const ModelFormula& formula);

/// Standard deviation of `estimator` over B resamples of n rows with
/// replacement. A failing resample is replaced by a fresh one, up to 10 B
/// attempts in total.
double bootstrap_se(const Dataset& data, const std::function<double(const Dataset&)>& estimator, int B, Rng& rng);
/// Same, with the resample passed as per-row counts (length n).
double bootstrap_se(Index n, const std::function<double(std::span<const double>)>& estimator, int B, Rng& rng);

/// Rubin's rules; t-based interval with Rubin's degrees of freedom.
AceEstimate rubin_pool(std::span<const double> points, std::span<const double> variances);

/// Var = M var_stack + (M + 1) var_between, normal interval.
AceEstimate beesley_pool(double point, double var_stack, double var_between, Index M);

/// Leave-one-imputation-out jackknife of the weighted-stack ACE, with each
/// individual's remaining weights renormalized to sum to 1.
double jackknife_between_variance(const StackedImputation& stack, const ModelFormula& formula);
/// ((M - 1) / M) sum (loo_m - mean)^2.
double jackknife_variance(std::span<const double> loo);
/// Weights of the stack with imputation `drop` removed (record order kept,
/// dropped records get weight 0).
Eigen::VectorXd jackknife_weights(const StackedImputation& stack, Index drop);

enum class StackResample {
  records,     // the M n stacked records are resampled as independent rows
  individuals  // an individual's M records move together
};

/// Bootstrap variance of the weighted-stack ACE.
double stack_within_variance(const StackedImputation& stack, const ModelFormula& formula, int B, Rng& rng,
                             StackResample mode = StackResample::records);
/// Same, over an explicit list of resamples given as per-unit counts (units
/// are records or individuals depending on `mode`).
double stack_within_variance(const StackedImputation& stack, const ModelFormula& formula,
                             const std::vector<std::vector<double>>& resamples, StackResample mode);

enum class Analysis {
  gcomputation,       // with bootstrap SE
  outcome_regression  // exposure coefficient with model SE
};

/// Per-imputation analysis and Rubin pooling.
AceEstimate mi_rubin(const std::vector<Dataset>& imputations, const ModelFormula& formula, Analysis analysis, int B,
                     Rng& rng);

/// Weighted-stack g-computation with Beesley's rule.
AceEstimate stack_beesley(const StackedImputation& stack, const ModelFormula& formula, int B, Rng& rng,
                          StackResample mode = StackResample::records);

}  // namespace narmi
