#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "narmi/math.hpp"
#include "narmi/smcstack.hpp"
#include "toy.hpp"

using namespace narmi;
using toy::NA;

namespace {

GlmFit fixed_fit(const char* spec, Family family, std::vector<double> coef, double dispersion = 1.0) {
  GlmFit f;
  f.formula = ModelFormula::parse(spec, family);
  f.coef = Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<Index>(coef.size()));
  f.covariance = Eigen::MatrixXd::Zero(f.coef.size(), f.coef.size());
  f.dispersion = dispersion;
  return f;
}

std::vector<std::vector<double>> gen_rows(Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> rows;
  for (Index i = 0; i < n; ++i) {
    const double c = rng.bernoulli(0.4);
    const double x = rng.bernoulli(expit(-0.2 + 0.8 * c));
    rows.push_back({0.3 * x + 0.5 * c + 0.2 * x * c + rng.normal(), x, c});
  }
  return rows;
}

Dataset incomplete(Index n, std::uint64_t seed) {
  auto rows = gen_rows(n, seed);
  for (Index i = 0; i < n; i += 4) rows[i][0] = NA;
  for (Index i = 1; i < n; i += 5) rows[i][1] = NA;
  for (Index i = 2; i < n; i += 6) rows[i][2] = NA;
  return toy::table(toy::yxc(), rows);
}

// A single-imputation copy of `d` with every missing covariate set to v.
Dataset filled(const Dataset& d, double v) {
  Dataset w = d;
  for (Index i = 0; i < w.rows(); ++i)
    for (Index j = 1; j < w.cols(); ++j)
      if (w.missing(i, j)) w.set_imputed(i, j, v);
  return w;
}

}  // namespace

TEST_CASE("no covariate missingness gives M copies") {
  auto rows = gen_rows(60, 1);
  for (int i = 0; i < 60; i += 3) rows[i][0] = NA;
  const Dataset d = toy::table(toy::yxc(), rows);
  const StackPlan plan = default_stack_plan(d, ModelFormula::parse("y ~ x*c", Family::gaussian), {0.5, 0}, 5, 4);
  Rng rng(2);
  const auto imps = impute_covariates_stack(d, plan, rng);
  REQUIRE(imps.size() == 4);
  for (const auto& m : imps) {
    CHECK((m.mask().array() == d.mask().array()).all());
    CHECK_FALSE(m.available(0, 0));
    for (Index i = 0; i < d.rows(); ++i)
      for (Index j = 0; j < d.cols(); ++j)
        if (!d.missing(i, j)) CHECK(m.at(i, j) == d.at(i, j));
  }
}

TEST_CASE("outcome missingness indicator enters covariate models only under a non-null delta") {
  const Dataset d = incomplete(200, 3);
  const auto f = ModelFormula::parse("y ~ x*c", Family::gaussian);
  const StackPlan with = default_stack_plan(d, f, {0.5, 0.1}, 5, 2);
  const StackPlan without = default_stack_plan(d, f, {}, 5, 2);
  for (const auto& t : {"x", "c"}) {
    const ModelFormula& g = with.covariate_formulas.at(t);
    CHECK(g.coef_index("M_y").has_value());
    CHECK_FALSE(g.coef_index("y").has_value());
    CHECK_FALSE(without.covariate_formulas.at(t).coef_index("M_y").has_value());
  }
  // the indicator gets a free coefficient when the model is fitted
  const ModelFormula& gx = with.covariate_formulas.at("x");
  const Dataset w = filled(d, 1.0);
  const GlmFit fx = fit(gx, w, [&](Index i) { return !d.missing(i, 1); });
  CHECK(fx.coef.size() == gx.n_coef());
  CHECK(std::isfinite(fx.coef[*gx.coef_index("M_y")]));
}

TEST_CASE("outcome step on the stack") {
  // outcome fit on pattern-I rows: intercept only with y = 0.4 exactly
  const Dataset d = toy::table(toy::yxc(), {{0.4, 1, 0}, {0.4, 0, 1}, {0.4, 1, 1}, {NA, 1, 0}, {7.0, NA, 0}});
  std::vector<Dataset> imps{filled(d, 0.0), filled(d, 1.0)};
  StackedImputation s = stack_imputations(imps, d);
  CHECK(s.n == 5);
  CHECK(s.M == 2);
  Rng rng(1);
  const GlmFit f = impute_outcome_on_stack(s, ModelFormula::parse("y ~ 1", Family::gaussian), {0.5, 0.0}, d, rng, false);
  CHECK(f.n_used == 3);
  for (Index m = 0; m < 2; ++m) {
    CHECK(std::abs(s.data.at(s.record(3, m), 0) - 0.9) < 1e-12);
    CHECK(s.data.at(s.record(4, m), 0) == 7.0);
  }
}

TEST_CASE("all-observed data leaves the stack unchanged") {
  const Dataset d = toy::table(toy::yxc(), gen_rows(30, 4));
  const StackPlan plan = default_stack_plan(d, ModelFormula::parse("y ~ x + c", Family::gaussian), {0.5, 0}, 5, 3);
  Rng rng(5);
  const StackedImputation s = run_nar_smc_stack(d, plan, rng);
  REQUIRE(s.data.rows() == 90);
  for (Index m = 0; m < 3; ++m)
    for (Index i = 0; i < 30; ++i) {
      for (Index j = 0; j < 3; ++j) CHECK(s.data.at(s.record(i, m), j) == d.at(i, j));
      CHECK(s.weight[s.record(i, m)] == 1.0 / 3.0);
    }
}

TEST_CASE("pattern IV weights are uniform") {
  const Dataset d = toy::table(toy::yxc(), {{0.4, 1, 0}, {0.1, 0, 1}, {0.9, 1, 1}, {NA, NA, 0}, {0.2, 0, 0}});
  std::vector<Dataset> imps;
  for (int m = 0; m < 20; ++m) imps.push_back(filled(d, m % 2));
  StackedImputation s = stack_imputations(imps, d);
  Dataset& w = s.data;
  for (Index m = 0; m < 20; ++m) w.set_imputed(s.record(3, m), 0, 0.1 * static_cast<double>(m));
  compute_weights(s, fixed_fit("y ~ x + c", Family::gaussian, {0.1, 0.5, 0.3}, 1.0));
  CHECK(s.pattern[3] == MissingnessPattern::IV);
  for (Index m = 0; m < 20; ++m) CHECK(s.weight[s.record(3, m)] == 0.05);
}

TEST_CASE("pattern III weights follow the outcome density") {
  CHECK(normalize_log_weights(Eigen::Vector2d(std::log(0.3), std::log(0.1))).isApprox(Eigen::Vector2d(0.75, 0.25), 1e-14));
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(normalize_log_weights(Eigen::Vector3d(-1e4, -1e4 - std::log(3.0), -inf)).isApprox(Eigen::Vector3d(0.75, 0.25, 0), 1e-12));
  CHECK_THROWS(normalize_log_weights(Eigen::Vector2d(-inf, -inf)));

  const Dataset d = toy::table(toy::yxc(), {{0.4, 1, 0}, {0.1, 0, 1}, {0.9, 1, 1}, {1.0, NA, 0}});
  std::vector<Dataset> imps{filled(d, 1.0), filled(d, 0.0)};
  StackedImputation s = stack_imputations(imps, d);
  CHECK(s.pattern[3] == MissingnessPattern::III);
  // y | x ~ N(x, 1): at y = 1 the densities are phi(0) and phi(1)
  compute_weights(s, fixed_fit("y ~ x", Family::gaussian, {0.0, 1.0}, 1.0));
  const double r = std::exp(-0.5);
  CHECK(s.weight[s.record(3, 0)] == doctest::Approx(1.0 / (1.0 + r)).epsilon(1e-14));
  CHECK(s.weight[s.record(3, 1)] == doctest::Approx(r / (1.0 + r)).epsilon(1e-14));
  for (Index i = 0; i < 3; ++i) CHECK(s.weight[s.record(i, 0)] == 0.5);

  // a null covariate coefficient makes every imputation equally likely
  compute_weights(s, fixed_fit("y ~ x", Family::gaussian, {0.3, 0.0}, 1.0));
  CHECK(s.weight[s.record(3, 0)] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.weight[s.record(3, 1)] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("weights normalize per individual and only depart from 1/M in pattern III") {
  const Dataset d = incomplete(150, 6);
  const StackPlan plan = default_stack_plan(d, ModelFormula::parse("y ~ x*c", Family::gaussian), {0.4, 0.2}, 3, 5);
  Rng rng(7);
  const StackedImputation s = run_nar_smc_stack(d, plan, rng);
  for (Index i = 0; i < s.n; ++i) {
    double sum = 0;
    bool uniform = true;
    for (Index m = 0; m < s.M; ++m) {
      sum += s.weight[s.record(i, m)];
      uniform = uniform && s.weight[s.record(i, m)] == 0.2;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    CHECK(s.pattern[static_cast<std::size_t>(i)] == classify_pattern(i, d));
    if (s.pattern[static_cast<std::size_t>(i)] != MissingnessPattern::III) CHECK(uniform);
  }
  for (Index r = 0; r < s.data.rows(); ++r)
    for (Index j = 0; j < 3; ++j) CHECK(s.data.available(r, j));
}

TEST_CASE("stack runs are bit-reproducible") {
  const Dataset d = incomplete(40, 9);
  const StackPlan plan = default_stack_plan(d, ModelFormula::parse("y ~ x + c", Family::gaussian), {0.3, 0}, 5, 2);
  Rng a(12), b(12);
  const StackedImputation sa = run_nar_smc_stack(d, plan, a);
  const StackedImputation sb = run_nar_smc_stack(d, plan, b);
  CHECK((sa.weight.array() == sb.weight.array()).all());
  for (Index r = 0; r < sa.data.rows(); ++r)
    for (Index j = 0; j < 3; ++j) CHECK(sa.data.at(r, j) == sb.data.at(r, j));
}

TEST_CASE("weighted imputations recover the target distribution") {
  // One pattern-III individual (y = 1.2, x missing, c = 1). Proposal for x is
  // Bernoulli(0.5); y | x, c ~ N(0.2 + 0.7x + 0.3c, 0.5). The weighted share of
  // x = 1 over many imputations estimates P(x = 1 | y, c) under f(y|x,c) f(x|c).
  const Dataset d = toy::table(toy::yxc(), {{1.2, NA, 1}});
  const int M = 20000;
  Rng rng(15);
  std::vector<Dataset> imps;
  for (int m = 0; m < M; ++m) {
    Dataset w = d;
    w.set_imputed(0, 1, rng.bernoulli(0.5) ? 1.0 : 0.0);
    imps.push_back(std::move(w));
  }
  StackedImputation s = stack_imputations(imps, d);
  compute_weights(s, fixed_fit("y ~ x + c", Family::gaussian, {0.2, 0.7, 0.3}, 0.5));

  auto f = [](double x) { const double r = 1.2 - (0.2 + 0.7 * x + 0.3); return std::exp(-r * r); };
  const double target = f(1) / (f(0) + f(1));
  double est = 0, var = 0;
  for (Index m = 0; m < M; ++m) est += s.weight[s.record(0, m)] * s.data.at(s.record(0, m), 1);
  for (Index m = 0; m < M; ++m) {
    const double wm = s.weight[s.record(0, m)];
    var += wm * wm * std::pow(s.data.at(s.record(0, m), 1) - target, 2);
  }
  CHECK(std::abs(est - target) < 3.0 * std::sqrt(var));
}

TEST_CASE("plan validation") {
  const Dataset d = incomplete(40, 10);
  StackPlan plan = default_stack_plan(d, ModelFormula::parse("y ~ x + c", Family::gaussian), {0.3, 0}, 5, 2);
  CHECK_NOTHROW(plan.validate(d));
  StackPlan bad = plan;
  bad.covariate_formulas["x"].main_terms.push_back("y");
  CHECK_THROWS(bad.validate(d));
  bad = plan;
  bad.n_imputations = 1;
  CHECK_THROWS(bad.validate(d));
}
