#include "narmi/metrics.hpp"

#include <cmath>
#include <limits>

namespace narmi {

PerformanceSummary summarize(std::span<const AceEstimate> reps, double true_value) {
  const auto R = static_cast<Index>(reps.size());
  if (R < 2) throw DataError("summarize needs at least 2 replicates");
  const double r = static_cast<double>(R);
  Eigen::VectorXd est(R), se(R);
  double covered = 0.0;
  for (Index k = 0; k < R; ++k) {
    const auto& e = reps[static_cast<std::size_t>(k)];
    est[k] = e.point;
    se[k] = e.se;
    if (e.ci_low <= true_value && true_value <= e.ci_high) covered += 1.0;
  }
  PerformanceSummary s;
  s.n_replicates = R;
  s.true_value = true_value;
  s.mean_estimate = est.mean();
  s.empirical_se = std::sqrt((est.array() - s.mean_estimate).square().sum() / (r - 1.0));
  s.mean_estimate_mcse = s.empirical_se / std::sqrt(r);
  s.bias = s.mean_estimate - true_value;
  s.bias_mcse = s.mean_estimate_mcse;
  if (true_value == 0.0) {
    s.rb_undefined = true;
    s.relative_bias_pct = s.relative_bias_pct_mcse = std::numeric_limits<double>::quiet_NaN();
  } else {
    s.relative_bias_pct = 100.0 * s.bias / true_value;
    s.relative_bias_pct_mcse = 100.0 * s.bias_mcse / std::abs(true_value);
  }
  s.empirical_se_mcse = s.empirical_se / std::sqrt(2.0 * (r - 1.0));
  s.avg_model_se = se.mean();
  s.avg_model_se_mcse = std::sqrt((se.array() - s.avg_model_se).square().sum() / (r - 1.0)) / std::sqrt(r);
  const Eigen::ArrayXd sq = (est.array() - true_value).square();
  s.mse = sq.mean();
  s.mse_mcse = std::sqrt((sq - s.mse).square().sum() / (r * (r - 1.0)));
  s.coverage_pct = 100.0 * covered / r;
  s.coverage_pct_mcse = std::sqrt(s.coverage_pct * (100.0 - s.coverage_pct) / r);
  // point-only replicates: no model SE and no interval to cover with
  if (!se.allFinite()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.avg_model_se = s.avg_model_se_mcse = s.coverage_pct = s.coverage_pct_mcse = nan;
  }
  return s;
}

std::vector<std::string> summary_csv_header() {
  return {"n_replicates",        "true_value",          "mean_estimate",     "mean_estimate_mcse",
          "bias",                "bias_mcse",           "relative_bias_pct", "relative_bias_pct_mcse",
          "rb_undefined",        "empirical_se",        "empirical_se_mcse", "avg_model_se",
          "avg_model_se_mcse",   "mse",                 "mse_mcse",          "coverage_pct",
          "coverage_pct_mcse"};
}

std::vector<std::string> summary_csv_fields(const PerformanceSummary& s) {
  auto f = [](double v) { return std::isnan(v) ? std::string("NA") : format_double(v); };
  return {std::to_string(s.n_replicates), f(s.true_value),     f(s.mean_estimate), f(s.mean_estimate_mcse),
          f(s.bias),                      f(s.bias_mcse),      f(s.relative_bias_pct),
          f(s.relative_bias_pct_mcse),    s.rb_undefined ? "1" : "0",
          f(s.empirical_se),              f(s.empirical_se_mcse), f(s.avg_model_se),
          f(s.avg_model_se_mcse),         f(s.mse),            f(s.mse_mcse),      f(s.coverage_pct),
          f(s.coverage_pct_mcse)};
}

}  // namespace narmi
