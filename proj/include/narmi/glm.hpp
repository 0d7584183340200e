#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "narmi/core_data.hpp"
#include "narmi/random.hpp"

namespace narmi {

/// Fitting failure: rank deficiency, too few rows, or IRLS non-convergence
/// (which is how perfect separation surfaces).
class FitError : public Error {
 public:
  enum class Kind { too_few_rows, rank_deficient, non_convergence };
  FitError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct GlmFit {
  ModelFormula formula;
  Eigen::VectorXd coef;
  Eigen::MatrixXd covariance;
  double dispersion = 1.0;  // residual variance for gaussian, 1 for bernoulli
  Index n_used = 0;
  int iterations = 0;

  Index df_residual() const { return n_used - coef.size(); }
};

/// One proper-imputation draw of the parameters of a fit.
struct ParamDraw {
  Eigen::VectorXd coef;
  double dispersion = 1.0;
};

struct FitOptions {
  /// Per-dataset-row nonnegative weights (length = data.rows()).
  const Eigen::VectorXd* weights = nullptr;
  /// IRLS starting point.
  const Eigen::VectorXd* start = nullptr;
  int max_iterations = 100;
  double tolerance = 1e-8;
};

/// Design rows with identical entries merged. Formulas over binary terms
/// collapse to at most 2^k distinct rows, which makes refits on resampled or
/// reweighted data independent of n. Group order is first-appearance order.
class GroupedDesign {
 public:
  GroupedDesign(const DesignMap& map, const Dataset& data, std::span<const Index> rows);

  Index groups() const { return unique_.rows(); }
  Index input_rows() const { return static_cast<Index>(group_of_.size()); }
  const Eigen::MatrixXd& unique_rows() const { return unique_; }
  const std::vector<Index>& group_of() const { return group_of_; }
  /// Dataset row that first produced each group.
  const std::vector<Index>& representative() const { return representative_; }

 private:
  Eigen::MatrixXd unique_;
  std::vector<Index> group_of_;
  std::vector<Index> representative_;
};

/// Sufficient statistics of (weights, response) per design group.
struct GroupStats {
  Eigen::VectorXd sum_w;
  Eigen::VectorXd sum_wy;
  Eigen::VectorXd within_ss;  // sum of w (y - group mean)^2; gaussian only
  Index n_positive = 0;       // rows with positive weight
};

GroupStats aggregate(const GroupedDesign& design, std::span<const double> y, std::span<const double> w,
                     bool with_within_ss);

/// Maximum likelihood on grouped data. Gaussian uses weighted least squares
/// with dispersion sum(w r^2) / (n_positive - k); bernoulli uses IRLS.
GlmFit fit_grouped(const ModelFormula& formula, const Eigen::MatrixXd& unique_rows, const GroupStats& stats,
                   const FitOptions& options = {});

GlmFit fit(const ModelFormula& formula, const Dataset& data, std::span<const Index> rows,
           const FitOptions& options = {});
GlmFit fit(const ModelFormula& formula, const Dataset& data, const std::function<bool(Index)>& row_filter,
           const FitOptions& options = {});

/// Asymptotic-normal draw; gaussian fits draw the dispersion first from its
/// scaled inverse chi-squared distribution.
ParamDraw draw_params(const GlmFit& fit, Rng& rng);
/// The fitted parameters themselves (plug-in alternative to draw_params).
ParamDraw plug_in(const GlmFit& fit);

double inverse_link(Link link, double eta);

double predict_mean(const GlmFit& fit, const Eigen::VectorXd* coef_override, const Dataset& data, Index row);
double density(const GlmFit& fit, const Eigen::VectorXd* coef_override, const Dataset& data, Index row, double y);

/// log density of y given a linear predictor; dispersion ignored for bernoulli.
double log_density(Family family, double y, double eta, double dispersion);

/// Random draw from the predictive distribution at a linear predictor.
double draw_response(Family family, double eta, double dispersion, Rng& rng);

/// Number of times draw_params fell back to a jittered covariance.
long covariance_jitter_count();

}  // namespace narmi
