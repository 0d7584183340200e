#include "narmi/glm.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "narmi/math.hpp"

namespace narmi {

namespace {

std::atomic<long> g_jitter_count{0};

// Index of the first column that is linearly dependent on its predecessors,
// or -1 when the weighted cross-product matrix has full rank.
Index first_dependent_column(const Eigen::MatrixXd& h) {
  const Index k = h.rows();
  Eigen::VectorXd d = h.diagonal();
  for (Index j = 0; j < k; ++j)
    if (!(d[j] > 0.0)) return j;
  const Eigen::VectorXd s = d.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd scaled = s.asDiagonal() * h * s.asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> full(scaled);
  full.setThreshold(1e-10);
  if (full.rank() == k) return -1;
  for (Index j = 1; j < k; ++j) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> lead(scaled.topLeftCorner(j + 1, j + 1));
    lead.setThreshold(1e-10);
    if (lead.rank() < j + 1) return j;
  }
  return k - 1;
}

[[noreturn]] void throw_rank_deficient(const ModelFormula& f, Index col) {
  const auto names = f.coef_names();
  throw FitError(FitError::Kind::rank_deficient, "rank-deficient design in '" + f.to_string() + "': column '" +
                                                     names[static_cast<std::size_t>(col)] + "' is collinear");
}

Eigen::MatrixXd weighted_crossprod(const Eigen::MatrixXd& u, const Eigen::VectorXd& w) {
  const Index k = u.cols();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
  h.selfadjointView<Eigen::Lower>().rankUpdate((u.transpose() * w.cwiseSqrt().asDiagonal()));
  return h.selfadjointView<Eigen::Lower>();
}

}  // namespace

// ------------------------------------------------------------ GroupedDesign

GroupedDesign::GroupedDesign(const DesignMap& map, const Dataset& data, std::span<const Index> rows) {
  const Index k = map.size();
  const auto& terms = map.terms();
  group_of_.resize(rows.size());
  if (!map.all_binary() || terms.size() > 63) {
    unique_ = map.matrix(data, rows);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      group_of_[r] = static_cast<Index>(r);
      representative_.push_back(rows[r]);
    }
    return;
  }
  std::unordered_map<std::uint64_t, Index> seen;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::uint64_t key = 0;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const auto& term = terms[t];
      const bool on = term.indicator ? data.missing(rows[r], term.column) : data.at(rows[r], term.column) != 0.0;
      if (on) key |= (std::uint64_t{1} << t);
    }
    auto [it, inserted] = seen.try_emplace(key, static_cast<Index>(representative_.size()));
    if (inserted) representative_.push_back(rows[r]);
    group_of_[r] = it->second;
  }
  unique_.resize(static_cast<Index>(representative_.size()), k);
  for (std::size_t g = 0; g < representative_.size(); ++g) {
    Eigen::VectorXd row(k);
    map.fill_row(data, representative_[g], row);
    unique_.row(static_cast<Index>(g)) = row.transpose();
  }
}

GroupStats aggregate(const GroupedDesign& design, std::span<const double> y, std::span<const double> w,
                     bool with_within_ss) {
  const Index g = design.groups();
  GroupStats s;
  s.sum_w = Eigen::VectorXd::Zero(g);
  s.sum_wy = Eigen::VectorXd::Zero(g);
  s.within_ss = Eigen::VectorXd::Zero(g);
  const auto& group_of = design.group_of();
  for (std::size_t r = 0; r < group_of.size(); ++r) {
    const double wr = w.empty() ? 1.0 : w[r];
    if (wr < 0.0 || !std::isfinite(wr)) throw DataError("weights must be finite and nonnegative");
    if (wr == 0.0) continue;
    ++s.n_positive;
    s.sum_w[group_of[r]] += wr;
    s.sum_wy[group_of[r]] += wr * y[r];
  }
  if (with_within_ss) {
    for (std::size_t r = 0; r < group_of.size(); ++r) {
      const double wr = w.empty() ? 1.0 : w[r];
      if (wr == 0.0) continue;
      const Index gi = group_of[r];
      const double d = y[r] - s.sum_wy[gi] / s.sum_w[gi];
      s.within_ss[gi] += wr * d * d;
    }
  }
  return s;
}

// ---------------------------------------------------------------- fitting

GlmFit fit_grouped(const ModelFormula& formula, const Eigen::MatrixXd& u, const GroupStats& stats,
                   const FitOptions& options) {
  const Index k = u.cols();
  GlmFit out;
  out.formula = formula;
  out.n_used = stats.n_positive;
  if (stats.n_positive < k)
    throw FitError(FitError::Kind::too_few_rows, "too few rows (" + std::to_string(stats.n_positive) + ") to fit '" +
                                                     formula.to_string() + "'");
  const Eigen::MatrixXd h0 = weighted_crossprod(u, stats.sum_w);
  if (const Index bad = first_dependent_column(h0); bad >= 0) throw_rank_deficient(formula, bad);

  if (formula.family == Family::gaussian) {
    Eigen::LLT<Eigen::MatrixXd> llt(h0);
    if (llt.info() != Eigen::Success) throw_rank_deficient(formula, k - 1);
    out.coef = llt.solve(u.transpose() * stats.sum_wy);
    const Eigen::VectorXd eta = u * out.coef;
    double rss = stats.within_ss.sum();
    for (Index g = 0; g < u.rows(); ++g) {
      if (stats.sum_w[g] == 0.0) continue;
      const double d = stats.sum_wy[g] / stats.sum_w[g] - eta[g];
      rss += stats.sum_w[g] * d * d;
    }
    const Index df = stats.n_positive - k;
    out.dispersion = df > 0 ? rss / static_cast<double>(df) : 0.0;
    out.covariance = out.dispersion * llt.solve(Eigen::MatrixXd::Identity(k, k));
    out.iterations = 1;
    return out;
  }

  // Bernoulli-logit IRLS (Newton on the canonical link) with step halving.
  Eigen::VectorXd beta;
  if (options.start && options.start->size() == k) {
    beta = *options.start;
  } else {
    beta = Eigen::VectorXd::Zero(k);
    const double ybar = std::clamp(stats.sum_wy.sum() / stats.sum_w.sum(), 1e-6, 1 - 1e-6);
    beta[0] = logit(ybar);
  }
  auto loglik = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = u * b;
    double ll = 0.0;
    for (Index g = 0; g < u.rows(); ++g) {
      if (stats.sum_w[g] == 0.0) continue;
      ll += stats.sum_wy[g] * eta[g] + stats.sum_w[g] * log_expit(-eta[g]);
    }
    return ll;
  };
  Eigen::VectorXd w(u.rows()), resid(u.rows());
  double ll = loglik(beta);
  bool converged = false;
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::VectorXd eta = u * beta;
    for (Index g = 0; g < u.rows(); ++g) {
      const double mu = expit(eta[g]);
      w[g] = stats.sum_w[g] * mu * expit(-eta[g]);
      // y - mu written so that it does not round to zero once expit saturates
      resid[g] = stats.sum_wy[g] * expit(-eta[g]) - (stats.sum_w[g] - stats.sum_wy[g]) * mu;
    }
    llt.compute(weighted_crossprod(u, w));
    if (llt.info() != Eigen::Success)
      throw FitError(FitError::Kind::non_convergence,
                     "IRLS information matrix became singular (separation?) in '" + formula.to_string() + "'");
    Eigen::VectorXd step = llt.solve(u.transpose() * resid);
    Eigen::VectorXd next = beta + step;
    double ll_next = loglik(next);
    for (int half = 0; half < 30 && !(ll_next >= ll - 1e-12 * std::abs(ll)); ++half) {
      step *= 0.5;
      next = beta + step;
      ll_next = loglik(next);
    }
    beta = next;
    ll = ll_next;
    out.iterations = it;
    if (!beta.allFinite()) break;
    if (step.cwiseAbs().maxCoeff() < options.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged)
    throw FitError(FitError::Kind::non_convergence, "IRLS did not converge after " +
                                                        std::to_string(options.max_iterations) +
                                                        " iterations (separation?) in '" + formula.to_string() + "'");
  const Eigen::VectorXd eta = u * beta;
  for (Index g = 0; g < u.rows(); ++g) w[g] = stats.sum_w[g] * expit(eta[g]) * expit(-eta[g]);
  llt.compute(weighted_crossprod(u, w));
  if (llt.info() != Eigen::Success)
    throw FitError(FitError::Kind::non_convergence, "singular information at the MLE in '" + formula.to_string() + "'");
  out.coef = beta;
  out.covariance = llt.solve(Eigen::MatrixXd::Identity(k, k));
  out.dispersion = 1.0;
  return out;
}

GlmFit fit(const ModelFormula& formula, const Dataset& data, std::span<const Index> rows, const FitOptions& options) {
  const DesignMap map(formula, data);
  for (Index r : rows)
    if (!map.row_complete(data, r, true))
      throw DataError("row " + std::to_string(r) + " has missing values for '" + formula.to_string() + "'");
  const GroupedDesign design(map, data, rows);
  std::vector<double> y(rows.size()), w;
  for (std::size_t r = 0; r < rows.size(); ++r) y[r] = data.raw(rows[r], map.response_column());
  if (options.weights) {
    if (options.weights->size() != data.rows()) throw DataError("weight vector length differs from row count");
    w.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) w[r] = (*options.weights)[rows[r]];
  }
  if (formula.family == Family::bernoulli)
    for (double v : y)
      if (v != 0.0 && v != 1.0) throw DataError("bernoulli response outside {0, 1} in '" + formula.to_string() + "'");
  const GroupStats stats = aggregate(design, y, w, formula.family == Family::gaussian);
  return fit_grouped(formula, design.unique_rows(), stats, options);
}

GlmFit fit(const ModelFormula& formula, const Dataset& data, const std::function<bool(Index)>& row_filter,
           const FitOptions& options) {
  const auto rows = rows_where(data, row_filter);
  return fit(formula, data, rows, options);
}

// ------------------------------------------------------------------ draws

ParamDraw plug_in(const GlmFit& fit) { return {fit.coef, fit.dispersion}; }

ParamDraw draw_params(const GlmFit& fit, Rng& rng) {
  const Index k = fit.coef.size();
  double scale = 1.0;
  ParamDraw out{fit.coef, fit.dispersion};
  if (fit.formula.family == Family::gaussian) {
    const Index df = fit.df_residual();
    if (df > 0 && fit.dispersion > 0.0) {
      out.dispersion = fit.dispersion * static_cast<double>(df) / rng.chi_squared(static_cast<double>(df));
      scale = out.dispersion / fit.dispersion;
    }
  }
  Eigen::VectorXd z(k);
  for (Index j = 0; j < k; ++j) z[j] = rng.normal();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.covariance);
  Eigen::VectorXd d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || (d.array() < -1e-12 * std::max(dmax, 1.0)).any()) {
    ++g_jitter_count;
    ldlt.compute(fit.covariance + 1e-10 * Eigen::MatrixXd::Identity(k, k));
    d = ldlt.vectorD();
  }
  const Eigen::VectorXd v = d.cwiseMax(0.0).cwiseSqrt().cwiseProduct(z);
  Eigen::VectorXd lv = ldlt.matrixL() * v;
  const Eigen::VectorXd x = ldlt.transpositionsP().transpose() * lv;
  out.coef += std::sqrt(scale) * x;
  return out;
}

long covariance_jitter_count() { return g_jitter_count.load(); }

// ------------------------------------------------------------- prediction

double inverse_link(Link link, double eta) { return link == Link::identity ? eta : expit(eta); }

double predict_mean(const GlmFit& fit, const Eigen::VectorXd* coef_override, const Dataset& data, Index row) {
  const DesignMap map(fit.formula, data);
  const double eta = map.linear_predictor(data, row, coef_override ? *coef_override : fit.coef);
  return inverse_link(fit.formula.link, eta);
}

double log_density(Family family, double y, double eta, double dispersion) {
  if (family == Family::gaussian) {
    if (!(dispersion > 0.0)) throw DataError("gaussian density needs a positive variance");
    return normal_log_density(y, eta, dispersion);
  }
  return bernoulli_log_density(y, eta);
}

double density(const GlmFit& fit, const Eigen::VectorXd* coef_override, const Dataset& data, Index row, double y) {
  const DesignMap map(fit.formula, data);
  const double eta = map.linear_predictor(data, row, coef_override ? *coef_override : fit.coef);
  return std::exp(log_density(fit.formula.family, y, eta, fit.dispersion));
}

double draw_response(Family family, double eta, double dispersion, Rng& rng) {
  if (family == Family::gaussian) return eta + std::sqrt(std::max(dispersion, 0.0)) * rng.normal();
  return rng.uniform() < expit(eta) ? 1.0 : 0.0;
}

}  // namespace narmi
