#pragma once

#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>

namespace narmi {

/// Inverse logit, stable for large |eta|.
template <typename Scalar>
Scalar expit(Scalar eta) {
  using std::exp;
  if (eta >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-eta));
  const Scalar e = exp(eta);
  return e / (Scalar(1) + e);
}

/// log(expit(eta)) without underflow.
template <typename Scalar>
Scalar log_expit(Scalar eta) {
  using std::exp;
  using std::log1p;
  if (eta >= Scalar(0)) return -log1p(exp(-eta));
  return eta - log1p(exp(eta));
}

template <typename Scalar>
Scalar logit(Scalar p) {
  using std::log;
  return log(p / (Scalar(1) - p));
}

/// log(sum(exp(x))) over any dense expression.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

template <typename Scalar>
Scalar normal_log_density(Scalar y, Scalar mean, Scalar variance) {
  using std::log;
  const Scalar r = y - mean;
  return -Scalar(0.5) * (log(Scalar(2) * std::numbers::pi_v<Scalar> * variance) + r * r / variance);
}

/// log P(Y = y) for y in {0, 1} under a logit-linear predictor.
template <typename Scalar>
Scalar bernoulli_log_density(Scalar y, Scalar eta) {
  if (y == Scalar(1)) return log_expit(eta);
  if (y == Scalar(0)) return log_expit(-eta);
  return -std::numeric_limits<Scalar>::infinity();
}

/// Sample mean and unbiased variance of a vector expression.
template <typename Derived>
typename Derived::Scalar sample_variance(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const auto n = x.size();
  if (n < 2) return Scalar(0);
  const Scalar mean = x.derived().mean();
  return (x.derived().array() - mean).square().sum() / Scalar(n - 1);
}

}  // namespace narmi
