#include "narmi/estimators.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "narmi/math.hpp"

namespace narmi {

AceEstimate AceEstimate::normal(double point, double se) {
  return {point, se, point - z975 * se, point + z975 * se, std::numeric_limits<double>::infinity()};
}

// ------------------------------------------------------------- GcompModel

namespace {

Index exposure_or_throw(const Dataset& data, const ModelFormula& formula) {
  const Index x = data.exposure_column();
  if (x < 0) throw DataError("dataset has no exposure variable");
  if (!formula.coef_index(data.column(x).name))
    throw DataError("formula '" + formula.to_string() + "' does not contain the exposure");
  return x;
}

std::vector<Index> all_rows(const Dataset& data) {
  std::vector<Index> r(static_cast<std::size_t>(data.rows()));
  std::iota(r.begin(), r.end(), Index{0});
  return r;
}

}  // namespace

GcompModel::GcompModel(const ModelFormula& formula, const Dataset& data, std::span<const Index> rows)
    : formula_(formula), design_(DesignMap(formula, data), data, rows) {
  const DesignMap map(formula, data);
  const Index x = exposure_or_throw(data, formula);
  for (Index r : rows)
    if (!map.row_complete(data, r, true))
      throw DataError("row " + std::to_string(r) + " has missing values for '" + formula.to_string() + "'");
  const Index g = design_.groups();
  u1_.resize(g, map.size());
  u0_.resize(g, map.size());
  Eigen::VectorXd row(map.size());
  const DesignMap::Override one{x, 1.0}, zero{x, 0.0};
  for (Index k = 0; k < g; ++k) {
    const Index rep = design_.representative()[static_cast<std::size_t>(k)];
    map.fill_row(data, rep, row, &one);
    u1_.row(k) = row.transpose();
    map.fill_row(data, rep, row, &zero);
    u0_.row(k) = row.transpose();
  }
  y_.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) y_[r] = data.raw(rows[r], map.response_column());
  if (formula.family == Family::bernoulli) {
    for (double v : y_)
      if (v != 0.0 && v != 1.0) throw DataError("bernoulli response outside {0, 1} in '" + formula.to_string() + "'");
    try {
      start_ = fit().coef;
    } catch (const FitError&) {
      // leave the default start; weighted refits may still succeed
    }
  }
}

GcompModel::GcompModel(const ModelFormula& formula, const Dataset& data)
    : GcompModel(formula, data, all_rows(data)) {}

GlmFit GcompModel::fit(std::span<const double> weights) const {
  if (!weights.empty() && weights.size() != y_.size()) throw DataError("weight vector length differs from row count");
  const GroupStats stats = aggregate(design_, y_, weights, formula_.family == Family::gaussian);
  FitOptions opts;
  if (start_.size() > 0) opts.start = &start_;
  return fit_grouped(formula_, design_.unique_rows(), stats, opts);
}

double GcompModel::ace(std::span<const double> weights) const {
  if (!weights.empty() && weights.size() != y_.size()) throw DataError("weight vector length differs from row count");
  const GroupStats stats = aggregate(design_, y_, weights, false);
  FitOptions opts;
  if (start_.size() > 0) opts.start = &start_;
  const GlmFit f = fit_grouped(formula_, design_.unique_rows(), stats, opts);
  const Eigen::VectorXd eta1 = u1_ * f.coef;
  const Eigen::VectorXd eta0 = u0_ * f.coef;
  double num = 0.0;
  for (Index g = 0; g < eta1.size(); ++g) {
    if (stats.sum_w[g] == 0.0) continue;
    num += stats.sum_w[g] * (inverse_link(formula_.link, eta1[g]) - inverse_link(formula_.link, eta0[g]));
  }
  return num / stats.sum_w.sum();
}

double gcomputation(const Dataset& data, const ModelFormula& formula, const Eigen::VectorXd* weights) {
  const GcompModel model(formula, data);
  if (!weights) return model.ace();
  if (weights->size() != data.rows()) throw DataError("weight vector length differs from row count");
  return model.ace(std::span<const double>(weights->data(), static_cast<std::size_t>(weights->size())));
}

double gcomputation(const StackedImputation& stack, const ModelFormula& formula) {
  return gcomputation(stack.data, formula, &stack.weight);
}

AceEstimate outcome_regression_ace(const Dataset& data, const ModelFormula& formula) {
  const Index x = exposure_or_throw(data, formula);
  const std::string& xname = data.column(x).name;
  for (const auto& [a, b] : formula.interaction_terms)
    if (a == xname || b == xname)
      throw DataError("outcome regression needs a formula without exposure interactions");
  if (formula.family != Family::gaussian) throw DataError("outcome regression ACE needs a gaussian-identity model");
  const GlmFit f = fit(formula, data, all_rows(data));
  const Index j = *formula.coef_index(xname);
  return AceEstimate::normal(f.coef[j], std::sqrt(std::max(f.covariance(j, j), 0.0)));
}

// -------------------------------------------------------------- bootstrap

double bootstrap_se(Index n, const std::function<double(std::span<const double>)>& estimator, int B, Rng& rng) {
  if (B < 2) throw DataError("bootstrap needs B >= 2");
  if (n < 1) throw DataError("bootstrap needs at least one row");
  std::vector<double> counts(static_cast<std::size_t>(n));
  Eigen::VectorXd est(B);
  int done = 0;
  for (long attempts = 0; done < B; ++attempts) {
    if (attempts >= 10L * B) throw Error("bootstrap failed: too many resamples could not be analysed");
    std::fill(counts.begin(), counts.end(), 0.0);
    for (Index k = 0; k < n; ++k) counts[static_cast<std::size_t>(rng.index(n))] += 1.0;
    try {
      est[done] = estimator(counts);
      ++done;
    } catch (const Error&) {
    }
  }
  return std::sqrt(sample_variance(est));
}

double bootstrap_se(const Dataset& data, const std::function<double(const Dataset&)>& estimator, int B, Rng& rng) {
  if (B < 2) throw DataError("bootstrap needs B >= 2");
  const Index n = data.rows();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  Eigen::VectorXd est(B);
  int done = 0;
  for (long attempts = 0; done < B; ++attempts) {
    if (attempts >= 10L * B) throw Error("bootstrap failed: too many resamples could not be analysed");
    for (auto& i : idx) i = rng.index(n);
    try {
      est[done] = estimator(data.select_rows(idx));
      ++done;
    } catch (const Error&) {
    }
  }
  return std::sqrt(sample_variance(est));
}

// ---------------------------------------------------------------- pooling

AceEstimate rubin_pool(std::span<const double> points, std::span<const double> variances) {
  const auto M = static_cast<Index>(points.size());
  if (M < 2) throw DataError("Rubin's rules need at least 2 imputations");
  if (variances.size() != points.size()) throw DataError("points and variances differ in length");
  const Eigen::Map<const Eigen::VectorXd> q(points.data(), M);
  const Eigen::Map<const Eigen::VectorXd> u(variances.data(), M);
  if ((u.array() < 0.0).any()) throw DataError("negative within-imputation variance");
  const double qbar = q.mean();
  const double wbar = u.mean();
  const double b = sample_variance(q);
  const double mf = 1.0 + 1.0 / static_cast<double>(M);
  const double t = wbar + mf * b;
  AceEstimate e;
  e.point = qbar;
  e.se = std::sqrt(t);
  double quantile = z975;
  if (b > 0.0) {
    const double r = 1.0 + wbar / (mf * b);
    e.df = static_cast<double>(M - 1) * r * r;
    quantile = boost::math::quantile(boost::math::students_t(e.df), 0.975);
  }
  e.ci_low = qbar - quantile * e.se;
  e.ci_high = qbar + quantile * e.se;
  return e;
}

AceEstimate beesley_pool(double point, double var_stack, double var_between, Index M) {
  if (M < 2) throw DataError("Beesley's rule needs M >= 2 (the jackknife is undefined otherwise)");
  if (var_stack < 0.0 || var_between < 0.0) throw DataError("negative variance component");
  const double v = static_cast<double>(M) * var_stack + static_cast<double>(M + 1) * var_between;
  return AceEstimate::normal(point, std::sqrt(v));
}

Eigen::VectorXd jackknife_weights(const StackedImputation& stack, Index drop) {
  Eigen::VectorXd w = stack.weight;
  for (Index i = 0; i < stack.n; ++i) {
    double sum = 0.0;
    for (Index m = 0; m < stack.M; ++m)
      if (m != drop) sum += stack.weight[stack.record(i, m)];
    for (Index m = 0; m < stack.M; ++m) {
      const Index r = stack.record(i, m);
      if (m == drop)
        w[r] = 0.0;
      else
        w[r] = sum > 0.0 ? stack.weight[r] / sum : 1.0 / static_cast<double>(stack.M - 1);
    }
  }
  return w;
}

double jackknife_between_variance(const StackedImputation& stack, const ModelFormula& formula) {
  if (stack.M < 2) throw DataError("jackknife needs M >= 2");
  const GcompModel model(formula, stack.data);
  Eigen::VectorXd loo(stack.M);
  for (Index m = 0; m < stack.M; ++m) {
    const Eigen::VectorXd w = jackknife_weights(stack, m);
    loo[m] = model.ace(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
  }
  return jackknife_variance(std::span<const double>(loo.data(), static_cast<std::size_t>(loo.size())));
}

double jackknife_variance(std::span<const double> loo) {
  const auto M = static_cast<Index>(loo.size());
  if (M < 2) throw DataError("jackknife needs M >= 2");
  const Eigen::Map<const Eigen::VectorXd> v(loo.data(), M);
  return static_cast<double>(M - 1) / static_cast<double>(M) * (v.array() - v.mean()).square().sum();
}

namespace {

// Record weights for one resample given per-unit counts.
void resample_weights(const StackedImputation& stack, std::span<const double> counts, StackResample mode,
                      std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(stack.data.rows()));
  for (Index r = 0; r < stack.data.rows(); ++r) {
    const double c = mode == StackResample::records ? counts[static_cast<std::size_t>(r)]
                                                    : counts[static_cast<std::size_t>(stack.individual(r))];
    out[static_cast<std::size_t>(r)] = c * stack.weight[r];
  }
}

}  // namespace

double stack_within_variance(const StackedImputation& stack, const ModelFormula& formula,
                             const std::vector<std::vector<double>>& resamples, StackResample mode) {
  if (resamples.size() < 2) throw DataError("need at least 2 resamples");
  const GcompModel model(formula, stack.data);
  const std::size_t units = mode == StackResample::records ? static_cast<std::size_t>(stack.data.rows())
                                                           : static_cast<std::size_t>(stack.n);
  Eigen::VectorXd est(static_cast<Index>(resamples.size()));
  std::vector<double> w;
  for (std::size_t b = 0; b < resamples.size(); ++b) {
    if (resamples[b].size() != units) throw DataError("resample length differs from the number of units");
    resample_weights(stack, resamples[b], mode, w);
    est[static_cast<Index>(b)] = model.ace(w);
  }
  return sample_variance(est);
}

double stack_within_variance(const StackedImputation& stack, const ModelFormula& formula, int B, Rng& rng,
                             StackResample mode) {
  const GcompModel model(formula, stack.data);
  const Index units = mode == StackResample::records ? stack.data.rows() : stack.n;
  std::vector<double> w;
  const double se = bootstrap_se(
      units,
      [&](std::span<const double> counts) {
        resample_weights(stack, counts, mode, w);
        return model.ace(w);
      },
      B, rng);
  return se * se;
}

AceEstimate mi_rubin(const std::vector<Dataset>& imputations, const ModelFormula& formula, Analysis analysis, int B,
                     Rng& rng) {
  std::vector<double> points, variances;
  for (const auto& d : imputations) {
    if (analysis == Analysis::outcome_regression) {
      const AceEstimate e = outcome_regression_ace(d, formula);
      points.push_back(e.point);
      variances.push_back(e.se * e.se);
      continue;
    }
    const GcompModel model(formula, d);
    points.push_back(model.ace());
    const double se = bootstrap_se(
        d.rows(), [&](std::span<const double> counts) { return model.ace(counts); }, B, rng);
    variances.push_back(se * se);
  }
  return rubin_pool(points, variances);
}

AceEstimate stack_beesley(const StackedImputation& stack, const ModelFormula& formula, int B, Rng& rng,
                          StackResample mode) {
  const double point = gcomputation(stack, formula);
  const double within = stack_within_variance(stack, formula, B, rng, mode);
  const double between = jackknife_between_variance(stack, formula);
  return beesley_pool(point, within, between, stack.M);
}

}  // namespace narmi
