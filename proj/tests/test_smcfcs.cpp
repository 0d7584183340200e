#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "narmi/math.hpp"
#include "narmi/smcfcs.hpp"
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

std::vector<VariableSpec> yxz(Measurement y, Measurement z) {
  return {toy::var("y", Role::outcome, y), toy::var("x", Role::exposure, Measurement::binary),
          toy::var("z", Role::incomplete_confounder, z)};
}

}  // namespace

TEST_CASE("two-point normalization") {
  const double p = compatible_binary_probability(std::log(0.2), std::log(0.1), std::log(0.5), std::log(0.5));
  CHECK(p == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  // log space and direct products agree on non-underflowing inputs
  for (double f1 : {0.01, 0.3, 2.0})
    for (double f0 : {0.05, 0.7})
      for (double p1 : {0.1, 0.5, 0.9}) {
        const double direct = f1 * p1 / (f1 * p1 + f0 * (1 - p1));
        CHECK(std::abs(compatible_binary_probability(std::log(f1), std::log(f0), std::log(p1), std::log(1 - p1)) -
                       direct) < 1e-12);
      }
  CHECK(compatible_binary_probability(-2000.0, -2001.0, std::log(0.5), std::log(0.5)) ==
        doctest::Approx(expit(1.0)).epsilon(1e-12));
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(compatible_binary_probability(-inf, -inf, -0.1, -0.2), Error);
}

TEST_CASE("a null substantive coefficient leaves the proposal untouched") {
  for (double p1 : {0.05, 0.4, 0.93}) CHECK(compatible_binary_probability(-1.7, -1.7, std::log(p1), std::log1p(-p1)) == doctest::Approx(p1).epsilon(1e-14));

  // continuous target: mean and variance of draws equal the proposal's
  Dataset d = toy::table(yxz(Measurement::continuous, Measurement::continuous), {{2.0, 1, NA}});
  const GlmFit sub = fixed_fit("y ~ x + z", Family::gaussian, {0.1, 0.3, 0.0}, 1.0);
  const GlmFit prop = fixed_fit("z ~ x", Family::gaussian, {0.5, 0.5}, 4.0);
  const ParamDraw sp = plug_in(sub), pp = plug_in(prop);
  Rng rng(3);
  SmcfcsDiagnostics diag;
  const int N = 40000;
  double sum = 0, sq = 0;
  for (int k = 0; k < N; ++k) {
    impute_covariate_compatible("z", d, {sub, sp}, {prop, pp}, rng, 1000, diag);
    sum += d.at(0, 2);
    sq += d.at(0, 2) * d.at(0, 2);
  }
  const double mean = sum / N, var = sq / N - mean * mean;
  CHECK(std::abs(mean - 1.0) < 3.0 * std::sqrt(4.0 / N));
  CHECK(std::abs(var - 4.0) < 3.0 * 4.0 * std::sqrt(2.0 / N));
  CHECK(diag.rejection_exhaustions == 0);
}

TEST_CASE("binary covariate with gaussian outcome matches enumeration") {
  Dataset d = toy::table(yxz(Measurement::continuous, Measurement::binary), {{0.7, 1, NA}, {-0.4, 0, NA}});
  const GlmFit sub = fixed_fit("y ~ x + z + x:z", Family::gaussian, {0.2, 0.3, -0.5, 0.9}, 0.8);
  const GlmFit prop = fixed_fit("z ~ x", Family::bernoulli, {-0.3, 0.6});
  const ParamDraw sp = plug_in(sub), pp = plug_in(prop);

  auto exact = [&](double y, double x) {
    double w[2];
    for (int z = 0; z < 2; ++z) {
      const double mu = 0.2 + 0.3 * x - 0.5 * z + 0.9 * x * z;
      const double fy = std::exp(-0.5 * (y - mu) * (y - mu) / 0.8) / std::sqrt(2 * std::numbers::pi * 0.8);
      const double pz = expit(-0.3 + 0.6 * x);
      w[z] = fy * (z ? pz : 1 - pz);
    }
    return w[1] / (w[0] + w[1]);
  };
  const double p0 = exact(0.7, 1), p1 = exact(-0.4, 0);

  Rng rng(11);
  SmcfcsDiagnostics diag;
  const int N = 100000;
  double s0 = 0, s1 = 0;
  for (int k = 0; k < N; ++k) {
    impute_covariate_compatible("z", d, {sub, sp}, {prop, pp}, rng, 1000, diag);
    s0 += d.at(0, 2);
    s1 += d.at(1, 2);
  }
  CHECK(std::abs(s0 / N - p0) < 3.0 * std::sqrt(p0 * (1 - p0) / N));
  CHECK(std::abs(s1 / N - p1) < 3.0 * std::sqrt(p1 * (1 - p1) / N));
}

TEST_CASE("continuous covariate with gaussian outcome matches the conjugate posterior") {
  // z ~ N(m, s2) a priori, y | z ~ N(a + b z, v): z | y is normal in closed form.
  const double m = 0.5, s2 = 1.5, a = 0.1, b = 0.8, v = 0.6, y = 1.9;
  Dataset d = toy::table(yxz(Measurement::continuous, Measurement::continuous), {{y, 0, NA}});
  const GlmFit sub = fixed_fit("y ~ x + z", Family::gaussian, {a, 0.4, b}, v);
  const GlmFit prop = fixed_fit("z ~ x", Family::gaussian, {m, 0.0}, s2);
  const ParamDraw sp = plug_in(sub), pp = plug_in(prop);
  const double post_var = 1.0 / (1.0 / s2 + b * b / v);
  const double post_mean = post_var * (m / s2 + b * (y - a) / v);

  Rng rng(5);
  SmcfcsDiagnostics diag;
  const int N = 50000;
  double sum = 0, sq = 0;
  for (int k = 0; k < N; ++k) {
    impute_covariate_compatible("z", d, {sub, sp}, {prop, pp}, rng, 1000, diag);
    sum += d.at(0, 2);
    sq += d.at(0, 2) * d.at(0, 2);
  }
  const double mean = sum / N, var = sq / N - mean * mean;
  CHECK(std::abs(mean - post_mean) < 3.0 * std::sqrt(post_var / N));
  CHECK(std::abs(var - post_var) < 3.0 * post_var * std::sqrt(2.0 / N));
}

TEST_CASE("rejection cap exhaustion is counted") {
  Dataset d = toy::table(yxz(Measurement::continuous, Measurement::continuous), {{50.0, 0, NA}});
  const GlmFit sub = fixed_fit("y ~ x + z", Family::gaussian, {0.0, 0.0, 1.0}, 0.01);
  const GlmFit prop = fixed_fit("z ~ x", Family::gaussian, {0.0, 0.0}, 1.0);
  const ParamDraw sp = plug_in(sub), pp = plug_in(prop);
  Rng rng(1);
  SmcfcsDiagnostics diag;
  impute_covariate_compatible("z", d, {sub, sp}, {prop, pp}, rng, 5, diag);
  CHECK(diag.rejection_exhaustions == 1);
  CHECK(d.available(0, 2));
}

TEST_CASE("no missingness gives M copies of the input") {
  std::vector<std::vector<double>> rows;
  Rng g(2);
  for (int i = 0; i < 40; ++i) {
    const double z = g.bernoulli(0.5), x = g.bernoulli(0.5);
    rows.push_back({x + z + g.normal(), x, z});
  }
  const Dataset d = toy::table(yxz(Measurement::continuous, Measurement::binary), rows);
  const SmcfcsPlan plan = default_smcfcs_plan(d, ModelFormula::parse("y ~ x*z", Family::gaussian), {0.5, 0}, 5, 3);
  Rng rng(4);
  const SmcfcsResult r = run_nar_smcfcs(d, plan, rng);
  REQUIRE(r.imputations.size() == 3);
  for (const auto& m : r.imputations) CHECK((m.values().array() == d.values().array()).all());
}

TEST_CASE("chains impute every cell, keep observed values and are reproducible") {
  std::vector<std::vector<double>> rows;
  Rng g(8);
  for (int i = 0; i < 150; ++i) {
    const double z = g.bernoulli(0.5), x = g.bernoulli(expit(-0.2 + 0.5 * z));
    rows.push_back({0.3 * x + 0.4 * z + 0.2 * x * z + g.normal(), x, z});
  }
  for (int i = 0; i < 150; i += 4) rows[i][0] = NA;
  for (int i = 1; i < 150; i += 5) rows[i][1] = NA;
  for (int i = 2; i < 150; i += 6) rows[i][2] = NA;
  const Dataset d = toy::table(yxz(Measurement::continuous, Measurement::binary), rows);
  const SmcfcsPlan plan = default_smcfcs_plan(d, ModelFormula::parse("y ~ x*z", Family::gaussian), {0.3, 0.1}, 3, 2);
  CHECK(plan.targets == std::vector<std::string>{"x", "z"});
  CHECK_FALSE(plan.proposal_formulas.at("x").coef_index("y").has_value());
  Rng a(6), b(6);
  const SmcfcsResult ra = run_nar_smcfcs(d, plan, a);
  const SmcfcsResult rb = run_nar_smcfcs(d, plan, b);
  for (std::size_t m = 0; m < 2; ++m) {
    for (Index i = 0; i < d.rows(); ++i)
      for (Index j = 0; j < d.cols(); ++j) {
        REQUIRE(ra.imputations[m].available(i, j));
        CHECK(ra.imputations[m].at(i, j) == rb.imputations[m].at(i, j));
        if (!d.missing(i, j)) CHECK(ra.imputations[m].at(i, j) == d.at(i, j));
      }
  }
}

TEST_CASE("compatibility: stationary imputation probabilities match enumeration") {
  // Binary y, x, z. The fixed-parameter chain for one row with x and z missing
  // is a Gibbs sampler whose stationary law is f(y | x, z) f(x, z).
  Dataset d = toy::table(yxz(Measurement::binary, Measurement::binary), {{1, NA, NA}});
  const GlmFit sub = fixed_fit("y ~ x + z + x:z", Family::bernoulli, {-0.5, 0.8, 0.4, 0.9});
  const GlmFit px = fixed_fit("x ~ z", Family::bernoulli, {0.2, -0.6});
  const GlmFit pz = fixed_fit("z ~ x", Family::bernoulli, {-0.1, -0.6});
  const ParamDraw sp = plug_in(sub), xp = plug_in(px), zp = plug_in(pz);
  // joint prior of (x, z) consistent with both conditionals: log p(x,z) = .2x - .1z - .6xz
  double w[2][2], total = 0;
  for (int x = 0; x < 2; ++x)
    for (int z = 0; z < 2; ++z) {
      w[x][z] = std::exp(0.2 * x - 0.1 * z - 0.6 * x * z) * expit(-0.5 + 0.8 * x + 0.4 * z + 0.9 * x * z);
      total += w[x][z];
    }
  Rng rng(17);
  SmcfcsDiagnostics diag;
  d.set_imputed(0, 1, 0.0);
  d.set_imputed(0, 2, 0.0);
  const int burn = 100, N = 100000;
  double count[2][2] = {{0, 0}, {0, 0}};
  for (int k = 0; k < burn + N; ++k) {
    impute_covariate_compatible("x", d, {sub, sp}, {px, xp}, rng, 1000, diag);
    impute_covariate_compatible("z", d, {sub, sp}, {pz, zp}, rng, 1000, diag);
    if (k >= burn) count[static_cast<int>(d.at(0, 1))][static_cast<int>(d.at(0, 2))] += 1;
  }
  for (int x = 0; x < 2; ++x)
    for (int z = 0; z < 2; ++z) {
      const double p = w[x][z] / total;
      // Gibbs draws are autocorrelated; allow for an effective size of N / 4
      CHECK(std::abs(count[x][z] / N - p) < 3.0 * std::sqrt(p * (1 - p) / (N / 4.0)));
    }
}

TEST_CASE("plan validation") {
  const Dataset d = toy::table(yxz(Measurement::continuous, Measurement::binary), {{1, NA, 0}, {2, 1, NA}, {0.5, 0, 1}});
  SmcfcsPlan plan = default_smcfcs_plan(d, ModelFormula::parse("y ~ x + z", Family::gaussian), {}, 5, 20);
  CHECK_NOTHROW(plan.validate(d));
  SmcfcsPlan bad = plan;
  bad.n_imputations = 1;
  CHECK_THROWS(bad.validate(d));
  bad = plan;
  bad.rejection_cap = 0;
  CHECK_THROWS(bad.validate(d));
  bad = plan;
  bad.proposal_formulas["x"].main_terms.push_back("y");
  CHECK_THROWS(bad.validate(d));
  bad = plan;
  bad.substantive_formula = ModelFormula::parse("z ~ x", Family::bernoulli);
  CHECK_THROWS(bad.validate(d));
}
