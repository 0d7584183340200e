#pragma once

#include <span>
#include <string>
#include <vector>

#include "narmi/estimators.hpp"

namespace narmi {

/// Monte-Carlo performance of an estimator over R replicates. Each measure
/// carries its Monte-Carlo standard error.
struct PerformanceSummary {
  Index n_replicates = 0;
  double true_value = 0.0;
  double mean_estimate = 0.0, mean_estimate_mcse = 0.0;
  double bias = 0.0, bias_mcse = 0.0;
  /// NaN when true_value == 0 (then rb_undefined is set and bias is the measure to read).
  double relative_bias_pct = 0.0, relative_bias_pct_mcse = 0.0;
  bool rb_undefined = false;
  double empirical_se = 0.0, empirical_se_mcse = 0.0;
  double avg_model_se = 0.0, avg_model_se_mcse = 0.0;
  double mse = 0.0, mse_mcse = 0.0;
  double coverage_pct = 0.0, coverage_pct_mcse = 0.0;
};

/// Definitions, with theta_r the replicate estimates and R their number:
///   mean = sum theta_r / R, bias = mean - true, RB = 100 bias / true
///   empSE = sd(theta_r) (divisor R - 1), avg model SE = mean(se_r)
///   MSE = sum (theta_r - true)^2 / R, coverage = 100 #{ci_low <= true <= ci_high} / R
/// MCSEs: mean, bias: empSE / sqrt(R); RB: 100 MCSE(bias) / |true|;
///   empSE: empSE / sqrt(2 (R - 1)); avg model SE: sd(se_r) / sqrt(R);
///   MSE: sqrt(sum ((theta_r - true)^2 - MSE)^2 / (R (R - 1)));
///   coverage: sqrt(c (100 - c) / R).
/// If any se_r is not finite, avg model SE, coverage and their MCSEs are NaN.
PerformanceSummary summarize(std::span<const AceEstimate> replicates, double true_value);

/// Column names matching summary_csv_fields().
std::vector<std::string> summary_csv_header();
std::vector<std::string> summary_csv_fields(const PerformanceSummary& s);

}  // namespace narmi
