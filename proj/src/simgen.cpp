#include "narmi/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "narmi/glm.hpp"
#include "narmi/math.hpp"

namespace narmi {

using nlohmann::json;

// ------------------------------------------------------------------ enums

std::string_view to_string(OutcomeType v) { return v == OutcomeType::continuous ? "continuous" : "binary"; }
std::string_view to_string(Interaction v) {
  switch (v) {
    case Interaction::none: return "none";
    case Interaction::weak: return "weak";
    case Interaction::strong: return "strong";
  }
  return "?";
}
std::string_view to_string(MissingnessKind v) { return v == MissingnessKind::simple ? "simple" : "complex"; }

OutcomeType parse_outcome_type(std::string_view s) {
  if (s == "continuous") return OutcomeType::continuous;
  if (s == "binary") return OutcomeType::binary;
  throw DataError("unknown outcome type '" + std::string(s) + "' (continuous, binary)");
}
Interaction parse_interaction(std::string_view s) {
  if (s == "none") return Interaction::none;
  if (s == "weak") return Interaction::weak;
  if (s == "strong") return Interaction::strong;
  throw DataError("unknown interaction '" + std::string(s) + "' (none, weak, strong)");
}
MissingnessKind parse_missingness(std::string_view s) {
  if (s == "simple") return MissingnessKind::simple;
  if (s == "complex") return MissingnessKind::complex;
  throw DataError("unknown missingness '" + std::string(s) + "' (simple, complex)");
}

double interaction_ratio(Interaction v) {
  switch (v) {
    case Interaction::none: return 0.0;
    case Interaction::weak: return -0.5;
    case Interaction::strong: return -3.0;
  }
  return 0.0;
}

std::string ScenarioConfig::name() const {
  std::string s = std::string(to_string(outcome_type)) + "/" + std::string(to_string(interaction)) + "/" +
                  std::string(to_string(missingness));
  if (recoverable) s += "/recoverable";
  return s;
}

namespace {
constexpr std::array<std::string_view, n_vars> kVarNames{"A", "C1", "C2", "C3", "C4", "C5", "X", "Y", "W"};
constexpr std::array<const char*, 4> kMissKeys{"M_C4", "M_C5", "M_X", "M_Y"};
constexpr std::array<Var, 4> kMissVars{Var::C4, Var::C5, Var::X, Var::Y};
}  // namespace

std::string_view var_name(Var v) { return kVarNames[static_cast<std::size_t>(v)]; }

Var parse_var(std::string_view name) {
  for (std::size_t i = 0; i < kVarNames.size(); ++i)
    if (kVarNames[i] == name) return static_cast<Var>(i);
  throw DataError("unknown generation variable '" + std::string(name) + "'");
}

// ------------------------------------------------------------ LinearModel

double LinearModel::offset(const double* row, Index stride) const {
  double s = 0.0;
  for (const auto& t : terms) {
    double v = row[static_cast<Index>(t.a) * stride];
    if (t.b) v *= row[static_cast<Index>(*t.b) * stride];
    s += t.coef * v;
  }
  return s;
}

double& LinearModel::coef(Var a, std::optional<Var> b) {
  for (auto& t : terms)
    if ((t.a == a && t.b == b) || (b && t.a == *b && t.b == a)) return t.coef;
  terms.push_back({a, b, 0.0});
  return terms.back().coef;
}

double LinearModel::coef_or_zero(Var a, std::optional<Var> b) const {
  for (const auto& t : terms)
    if ((t.a == a && t.b == b) || (b && t.a == *b && t.b == a)) return t.coef;
  return 0.0;
}

const LinearModel& GenerationCoefficients::model(const std::string& key) const {
  auto it = models.find(key);
  if (it == models.end()) throw DataError("generation model '" + key + "' is missing");
  return it->second;
}

LinearModel& GenerationCoefficients::model(const std::string& key) { return models[key]; }

void to_json(json& j, const GenerationCoefficients& c) {
  j = json::object();
  j["outcome_type"] = std::string(to_string(c.outcome_type));
  j["outcome_sd"] = c.outcome_sd;
  json models = json::object();
  for (const auto& [key, m] : c.models) {
    json terms = json::array();
    for (const auto& t : m.terms) {
      std::string name(var_name(t.a));
      if (t.b) name += ":" + std::string(var_name(*t.b));
      terms.push_back({name, t.coef});
    }
    models[key] = {{"intercept", m.intercept}, {"terms", terms}};
  }
  j["models"] = models;
}

void from_json(const json& j, GenerationCoefficients& c) {
  c.outcome_type = parse_outcome_type(j.at("outcome_type").get<std::string>());
  c.outcome_sd = j.at("outcome_sd").get<double>();
  c.models.clear();
  for (const auto& [key, m] : j.at("models").items()) {
    LinearModel lm;
    lm.intercept = m.at("intercept").get<double>();
    for (const auto& t : m.at("terms")) {
      const auto name = t.at(0).get<std::string>();
      const auto colon = name.find(':');
      LinearModel::Term term{parse_var(name.substr(0, colon)), std::nullopt, t.at(1).get<double>()};
      if (colon != std::string::npos) term.b = parse_var(name.substr(colon + 1));
      lm.terms.push_back(term);
    }
    c.models.emplace(key, std::move(lm));
  }
}

// --------------------------------------------------------------- defaults

GenerationCoefficients default_coefficients(const ScenarioConfig& config) {
  using V = Var;
  GenerationCoefficients c;
  c.outcome_type = config.outcome_type;
  auto set = [&](const std::string& key, std::initializer_list<std::pair<V, double>> slopes) {
    LinearModel& m = c.model(key);
    for (const auto& [v, b] : slopes) m.coef(v) = b;
  };
  // C1 is generated independently of A; later variables depend on everything before them.
  c.model("C1");
  set("C2", {{V::A, 0.3}, {V::C1, 0.4}});
  set("C3", {{V::A, 0.3}, {V::C1, 0.4}, {V::C2, 0.5}});
  const bool bin = config.outcome_type == OutcomeType::binary;
  const bool strong = config.interaction == Interaction::strong;
  // Binary outcomes: C3 (the rarest confounder) is decoupled from C4 and tied
  // to C5 so that no C3 cross-cell of the complete cases is nearly empty.
  set("C4", {{V::A, 0.3}, {V::C1, 0.3}, {V::C2, 0.4}, {V::C3, bin ? 0.0 : 0.5}});
  set("C5", {{V::A, 0.3}, {V::C1, 0.3}, {V::C2, 0.4}, {V::C3, bin ? 0.8 : 0.5}, {V::C4, 0.4}});
  set("X", {{V::A, 0.1}, {V::C1, 0.1}, {V::C2, 0.1}, {V::C3, 0.1}, {V::C4, bin ? 0.4 : -1.0}, {V::C5, 0.1}});

  LinearModel& y = c.model("Y");
  // Binary outcome probabilities are kept away from 0 and 1 within the
  // C4 strata; the strong X:C4 term is offset by the C4 main effect.
  y.intercept = bin ? (strong ? -0.2 : -1.0) : 0.0;
  const std::array<double, 5> main = bin ? std::array<double, 5>{0.3, 0.4, 0.5, strong ? -1.2 : 0.0, 0.3}
                                         : std::array<double, 5>{0.2, 0.3, 0.4, 0.5, 0.2};
  for (int k = 0; k < 5; ++k) y.coef(static_cast<V>(static_cast<int>(V::C1) + k)) = main[static_cast<std::size_t>(k)];
  y.coef(V::X) = 0.3;
  y.coef(V::X, V::C4) = interaction_ratio(config.interaction) * 0.3;
  y.coef(V::C1, V::C4) = 0.2;
  y.coef(V::C2, V::C4) = -0.2;
  y.coef(V::C3, V::C4) = 0.3;
  y.coef(V::C4, V::C5) = 0.2;
  y.coef(V::C3, V::C5) = -0.2;

  set("W", {{V::C1, 0.3}, {V::C2, 0.3}, {V::C3, 0.5}});
  set("M_C4", {{V::W, 1.0}, {V::X, 0.3}, {V::C1, 0.2}, {V::C2, 0.2}, {V::C3, 0.2}});
  set("M_C5", {{V::W, 1.0}, {V::X, 0.3}, {V::C1, 0.2}, {V::C2, 0.2}, {V::C3, 0.3}});
  // Exposure missingness leans on C4 much harder with a continuous outcome.
  set("M_X", {{V::W, 1.0}, {V::C1, 0.2}, {V::C2, 0.2}, {V::C3, 0.2}, {V::C4, bin ? 0.3 : 1.0}, {V::C5, 0.3}});
  set("M_Y", {{V::C1, 0.2}, {V::C2, 0.2}, {V::C3, 0.2}, {V::C4, 0.3}, {V::C5, 0.2}, {V::X, 0.3}});
  LinearModel& my = c.model("M_Y");
  my.coef(V::Y) = config.recoverable ? 0.0 : std::log(3.0);
  if (config.missingness == MissingnessKind::complex) my.coef(V::X, V::Y) = config.recoverable ? 0.0 : std::log(2.0);
  return c;
}

// ------------------------------------------------------------- generation

namespace {

Eigen::VectorXd model_offsets(const LinearModel& m, const Pool& pool) {
  Eigen::VectorXd off(pool.rows());
  const Index stride = pool.rows();
  const double* base = pool.data();
  for (Index i = 0; i < pool.rows(); ++i) off[i] = m.offset(base + i, stride);
  return off;
}

void draw_column(const LinearModel& m, Pool& pool, Var v, bool gaussian, double sd, Rng& rng) {
  const Eigen::VectorXd off = model_offsets(m, pool);
  auto col = pool.col(static_cast<Index>(v));
  for (Index i = 0; i < pool.rows(); ++i) {
    const double eta = m.intercept + off[i];
    col[i] = gaussian ? eta + sd * rng.normal() : (rng.uniform() < expit(eta) ? 1.0 : 0.0);
  }
}

constexpr std::array<Var, 6> kCovariates{Var::C1, Var::C2, Var::C3, Var::C4, Var::C5, Var::X};

}  // namespace

Pool generate_pool(const GenerationCoefficients& coefs, Index n, Rng& rng) {
  Pool pool = Pool::Zero(n, n_vars);
  for (Index i = 0; i < n; ++i) pool(i, static_cast<Index>(Var::A)) = rng.normal();
  for (Var v : kCovariates) draw_column(coefs.model(std::string(var_name(v))), pool, v, false, 0.0, rng);
  draw_column(coefs.model("Y"), pool, Var::Y, coefs.outcome_type == OutcomeType::continuous, coefs.outcome_sd, rng);
  draw_column(coefs.model("W"), pool, Var::W, false, 0.0, rng);
  return pool;
}

ModelFormula substantive_formula(const ScenarioConfig& config) {
  std::string spec = "Y ~ C1 + C2 + C3 + C4 + C5 + X";
  if (config.interaction != Interaction::none) spec += " + X:C4";
  spec += " + C1:C4 + C2:C4 + C3:C4 + C4:C5 + C3:C5";
  return ModelFormula::parse(spec, config.outcome_type == OutcomeType::binary ? Family::bernoulli : Family::gaussian);
}

Dataset pool_to_dataset(const Pool& pool, OutcomeType outcome_type, bool with_w) {
  const auto ym = outcome_type == OutcomeType::binary ? Measurement::binary : Measurement::continuous;
  std::vector<VariableSpec> cols{{"Y", Role::outcome, ym},
                                 {"X", Role::exposure, Measurement::binary},
                                 {"C1", Role::complete_confounder, Measurement::binary},
                                 {"C2", Role::complete_confounder, Measurement::binary},
                                 {"C3", Role::complete_confounder, Measurement::binary},
                                 {"C4", Role::incomplete_confounder, Measurement::binary},
                                 {"C5", Role::incomplete_confounder, Measurement::binary},
                                 {"A", Role::auxiliary, Measurement::continuous}};
  std::vector<Var> src{Var::Y, Var::X, Var::C1, Var::C2, Var::C3, Var::C4, Var::C5, Var::A};
  if (with_w) {
    cols.push_back({"W", Role::latent, Measurement::binary});
    src.push_back(Var::W);
  }
  Eigen::MatrixXd values(pool.rows(), static_cast<Index>(src.size()));
  for (std::size_t j = 0; j < src.size(); ++j) values.col(static_cast<Index>(j)) = pool.col(static_cast<Index>(src[j]));
  return Dataset(std::move(cols), std::move(values));
}

Dataset generate_complete(const ScenarioConfig& config, const GenerationCoefficients& coefs, Rng& rng) {
  return pool_to_dataset(generate_pool(coefs, config.n, rng), coefs.outcome_type, true);
}

Eigen::MatrixXd missingness_probabilities(const Pool& pool, const GenerationCoefficients& coefs) {
  Eigen::MatrixXd p(pool.rows(), 4);
  for (int k = 0; k < 4; ++k) {
    const LinearModel& m = coefs.model(kMissKeys[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd off = model_offsets(m, pool);
    for (Index i = 0; i < pool.rows(); ++i) p(i, k) = expit(m.intercept + off[i]);
  }
  return p;
}

namespace {

Pool dataset_to_pool(const Dataset& d) {
  Pool pool = Pool::Zero(d.rows(), n_vars);
  for (int v = 0; v < n_vars; ++v) {
    auto j = d.find_column(kVarNames[static_cast<std::size_t>(v)]);
    if (!j) throw DataError("complete dataset lacks column '" + std::string(kVarNames[static_cast<std::size_t>(v)]) + "'");
    pool.col(v) = d.values().col(*j);
  }
  return pool;
}

Mask draw_indicators(const Eigen::MatrixXd& p, Rng& rng) {
  Mask m(p.rows(), p.cols());
  for (Index k = 0; k < p.cols(); ++k)
    for (Index i = 0; i < p.rows(); ++i) m(i, k) = rng.uniform() < p(i, k);
  return m;
}

}  // namespace

Dataset impose_missingness(const Dataset& complete, const GenerationCoefficients& coefs, Rng& rng) {
  if (complete.has_missing()) throw DataError("impose_missingness expects a complete dataset");
  const Pool pool = dataset_to_pool(complete);
  const Mask ind = draw_indicators(missingness_probabilities(pool, coefs), rng);
  const Dataset d = complete.drop_column("W");
  Mask mask = Mask::Constant(d.rows(), d.cols(), false);
  for (int k = 0; k < 4; ++k) mask.col(d.column_index(var_name(kMissVars[static_cast<std::size_t>(k)]))) = ind.col(k);
  return Dataset(d.columns(), d.values(), std::move(mask));
}

// ------------------------------------------------------------ calibration

double calibrate_intercept(const Eigen::VectorXd& offset, double target, double tolerance) {
  if (!(target > 0.0 && target < 1.0)) throw DataError("calibration target must lie in (0, 1)");
  auto rate = [&](double b, double* slope) {
    double s = 0.0, d = 0.0;
    for (Index i = 0; i < offset.size(); ++i) {
      const double p = expit(b + offset[i]);
      s += p;
      d += p * (1.0 - p);
    }
    if (slope) *slope = d / static_cast<double>(offset.size());
    return s / static_cast<double>(offset.size());
  };
  double lo = -1.0, hi = 1.0;
  while (rate(lo, nullptr) > target) {
    lo *= 2.0;
    if (lo < -20.0) throw Error("intercept calibration failed: target rate below reach in [-20, 20]");
  }
  while (rate(hi, nullptr) < target) {
    hi *= 2.0;
    if (hi > 20.0) throw Error("intercept calibration failed: target rate beyond reach in [-20, 20]");
  }
  double b = logit(target) - offset.mean();
  b = std::clamp(b, lo, hi);
  for (int it = 0; it < 200; ++it) {
    double slope = 0.0;
    const double f = rate(b, &slope) - target;
    if (std::abs(f) < tolerance) return b;
    if (f > 0.0)
      hi = b;
    else
      lo = b;
    double next = slope > 0.0 ? b - f / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    b = next;
    if (hi - lo < 1e-15) return b;
  }
  return b;
}

double calibrate_intercept(const LinearModel& model, const Pool& pool, double target, double tolerance) {
  return calibrate_intercept(model_offsets(model, pool), target, tolerance);
}

double expected_ace(const GenerationCoefficients& coefs, const Pool& pool) {
  const LinearModel& y = coefs.model("Y");
  if (coefs.outcome_type == OutcomeType::continuous) {
    // identity link: only the terms containing X differ between the two arms
    long double s = 0.0L;
    for (Index i = 0; i < pool.rows(); ++i) {
      double d = 0.0;
      for (const auto& t : y.terms) {
        if (t.a == Var::X && !t.b) d += t.coef;
        else if (t.a == Var::X) d += t.coef * pool(i, static_cast<Index>(*t.b));
        else if (t.b == Var::X) d += t.coef * pool(i, static_cast<Index>(t.a));
      }
      s += d;
    }
    return static_cast<double>(s / static_cast<long double>(pool.rows()));
  }
  Pool p1 = pool, p0 = pool;
  p1.col(static_cast<Index>(Var::X)).setOnes();
  p0.col(static_cast<Index>(Var::X)).setZero();
  const Eigen::VectorXd e1 = model_offsets(y, p1).array() + y.intercept;
  const Eigen::VectorXd e0 = model_offsets(y, p0).array() + y.intercept;
  double s = 0.0;
  for (Index i = 0; i < e1.size(); ++i) s += expit(e1[i]) - expit(e0[i]);
  return s / static_cast<double>(e1.size());
}

double estimate_true_ace(const GenerationCoefficients& coefs, Index oracle_n, Rng& rng) {
  return expected_ace(coefs, generate_pool(coefs, oracle_n, rng));
}

namespace {

TrueDelta fit_true_delta(MissingnessKind kind, OutcomeType type, const ModelFormula& subst, const Pool& pool,
                         const Eigen::VectorXd& my) {
  Dataset d = pool_to_dataset(pool, type, false).with_column({"M_Y", Role::auxiliary, Measurement::binary}, my);
  ModelFormula f = subst;
  f.main_terms.push_back("M_Y");
  if (kind == MissingnessKind::complex) f.interaction_terms.emplace_back("X", "M_Y");
  f.validate();
  const GlmFit g = fit(f, d, [](Index) { return true; });
  TrueDelta out;
  const Index j0 = *f.coef_index("M_Y");
  out.delta.delta0 = g.coef[j0];
  out.se0 = std::sqrt(g.covariance(j0, j0));
  if (kind == MissingnessKind::complex) {
    const Index j1 = *f.coef_index("X:M_Y");
    out.delta.delta1 = g.coef[j1];
    out.se1 = std::sqrt(g.covariance(j1, j1));
  }
  return out;
}

Eigen::VectorXd draw_outcome_indicator(const Pool& pool, const GenerationCoefficients& coefs, Rng& rng) {
  const LinearModel& m = coefs.model("M_Y");
  const Eigen::VectorXd off = model_offsets(m, pool);
  Eigen::VectorXd my(pool.rows());
  for (Index i = 0; i < pool.rows(); ++i) my[i] = rng.uniform() < expit(m.intercept + off[i]) ? 1.0 : 0.0;
  return my;
}

}  // namespace

TrueDelta estimate_true_delta(const ScenarioConfig& config, const GenerationCoefficients& coefs, Index oracle_n,
                              Rng& rng) {
  const Pool pool = generate_pool(coefs, oracle_n, rng);
  const Eigen::VectorXd my = draw_outcome_indicator(pool, coefs, rng);
  return fit_true_delta(config.missingness, config.outcome_type, substantive_formula(config), pool, my);
}

void to_json(json& j, const Calibration& c) {
  j = json::object();
  j["scenario"] = c.scenario;
  j["coefficients"] = c.coefs;
  j["true_ace"] = c.true_ace;
  j["true_delta"] = {{"delta0", c.true_delta.delta.delta0},
                     {"delta1", c.true_delta.delta.delta1},
                     {"se0", c.true_delta.se0},
                     {"se1", c.true_delta.se1}};
  j["achieved"] = c.achieved;
  j["warnings"] = c.warnings;
  j["oracle_n"] = c.oracle_n;
  j["seed"] = c.seed;
}

void from_json(const json& j, Calibration& c) {
  c.scenario = j.at("scenario").get<std::string>();
  c.coefs = j.at("coefficients").get<GenerationCoefficients>();
  c.true_ace = j.at("true_ace").get<double>();
  const auto& d = j.at("true_delta");
  c.true_delta.delta = {d.at("delta0").get<double>(), d.at("delta1").get<double>()};
  c.true_delta.se0 = d.at("se0").get<double>();
  c.true_delta.se1 = d.at("se1").get<double>();
  c.achieved = j.at("achieved").get<std::map<std::string, double>>();
  c.warnings = j.at("warnings").get<std::vector<std::string>>();
  c.oracle_n = j.at("oracle_n").get<Index>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

Calibration calibrate_scenario(const ScenarioConfig& config, Index oracle_n, std::uint64_t seed,
                               const CalibrationTargets& targets) {
  return calibrate_scenario(config, default_coefficients(config), oracle_n, seed, targets);
}

Calibration calibrate_scenario(const ScenarioConfig& config, GenerationCoefficients c, Index oracle_n,
                               std::uint64_t seed, const CalibrationTargets& targets) {
  if (oracle_n < 1000) throw DataError("oracle_n must be at least 1000");
  Calibration cal;
  cal.scenario = config.name();
  cal.oracle_n = oracle_n;
  cal.seed = seed;
  Rng rng(derive_seed(seed, {fnv1a("calibration-pool")}));

  // Covariates and exposure, in generation order, each calibrated on the
  // already-generated columns of the pool.
  Pool pool = Pool::Zero(oracle_n, n_vars);
  for (Index i = 0; i < oracle_n; ++i) pool(i, static_cast<Index>(Var::A)) = rng.normal();
  double mean_p4 = 0.0;
  for (Var v : kCovariates) {
    const std::string key(var_name(v));
    LinearModel& m = c.model(key);
    const Eigen::VectorXd off = model_offsets(m, pool);
    m.intercept = calibrate_intercept(off, targets.prevalence.at(key));
    if (v == Var::C4) mean_p4 = targets.prevalence.at(key);
    draw_column(m, pool, v, false, 0.0, rng);
  }

  // beta6 (with beta7 tied to it) for the target ACE.
  LinearModel& y = c.model("Y");
  const double ratio = interaction_ratio(config.interaction);
  auto set_beta6 = [&](double b6) {
    y.coef(Var::X) = b6;
    y.coef(Var::X, Var::C4) = ratio * b6;
  };
  if (config.outcome_type == OutcomeType::continuous) {
    // E[C4] on the pool's expected scale is the calibrated prevalence.
    set_beta6(targets.ace_continuous / (1.0 + ratio * mean_p4));
  } else {
    const double target = targets.ace_binary;
    auto g = [&](double b6) {
      set_beta6(b6);
      return expected_ace(c, pool) - target;
    };
    // Nearest root to zero: scan outward in both directions.
    double lo = 0.0, hi = 0.0;
    bool found = false;
    const double g0 = g(0.0);
    for (double step = 0.05; step <= 20.0 && !found; step += 0.05) {
      for (double s : {step, -step}) {
        const double gs = g(s);
        if ((gs > 0.0) != (g0 > 0.0)) {
          lo = s > 0 ? s - 0.05 : s;
          hi = s > 0 ? s : s + 0.05;
          found = true;
          break;
        }
      }
    }
    if (!found) throw Error("beta6 calibration failed: risk difference target not reachable");
    double glo = g(lo);
    for (int it = 0; it < 100 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double gm = g(mid);
      if ((gm > 0.0) == (glo > 0.0)) {
        lo = mid;
        glo = gm;
      } else {
        hi = mid;
      }
    }
    set_beta6(0.5 * (lo + hi));
  }
  draw_column(y, pool, Var::Y, config.outcome_type == OutcomeType::continuous, c.outcome_sd, rng);

  LinearModel& w = c.model("W");
  w.intercept = calibrate_intercept(w, pool, targets.prevalence.at("W"));
  draw_column(w, pool, Var::W, false, 0.0, rng);

  // Missingness: M_Y once, then the shared W coefficient of the covariate
  // indicators by bisection on the expected complete-case proportion.
  LinearModel& my = c.model("M_Y");
  my.intercept = calibrate_intercept(my, pool, targets.missing_rate.at("M_Y"));
  const Eigen::VectorXd off_y = model_offsets(my, pool);
  Eigen::VectorXd keep_y(oracle_n);
  for (Index i = 0; i < oracle_n; ++i) keep_y[i] = 1.0 - expit(my.intercept + off_y[i]);

  const std::array<std::string, 3> cov_keys{"M_C4", "M_C5", "M_X"};
  auto cc_rate = [&](double gamma) {
    Eigen::VectorXd keep = keep_y;
    for (const auto& key : cov_keys) {
      LinearModel& m = c.model(key);
      m.coef(Var::W) = gamma;
      const Eigen::VectorXd off = model_offsets(m, pool);
      m.intercept = calibrate_intercept(off, targets.missing_rate.at(key));
      for (Index i = 0; i < oracle_n; ++i) keep[i] *= 1.0 - expit(m.intercept + off[i]);
    }
    return keep.mean();
  };
  const double cc_target = config.outcome_type == OutcomeType::continuous ? targets.complete_case_continuous
                                                                          : targets.complete_case_binary;
  double glo = 0.0, ghi = 8.0;
  const double cc_lo = cc_rate(glo), cc_hi = cc_rate(ghi);
  if (cc_lo >= cc_target) {
    cc_rate(glo);
    cal.warnings.push_back("complete-case target below reach; W coefficient set to 0");
  } else if (cc_hi <= cc_target) {
    cc_rate(ghi);
    std::ostringstream msg;
    msg << "complete-case target " << cc_target << " beyond reach; W coefficient set to " << ghi;
    cal.warnings.push_back(msg.str());
  } else {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (glo + ghi);
      if (cc_rate(mid) < cc_target)
        glo = mid;
      else
        ghi = mid;
    }
    cc_rate(0.5 * (glo + ghi));
  }
  cal.coefs = c;

  // Independent oracle sample for the truths and the achieved rates.
  Rng orng(derive_seed(seed, {fnv1a("calibration-oracle")}));
  const Pool oracle = generate_pool(c, oracle_n, orng);
  const Eigen::MatrixXd p = missingness_probabilities(oracle, c);
  const Mask ind = draw_indicators(p, orng);
  cal.true_ace = expected_ace(c, oracle);
  Eigen::VectorXd my_ind(oracle_n);
  for (Index i = 0; i < oracle_n; ++i) my_ind[i] = ind(i, 3) ? 1.0 : 0.0;
  cal.true_delta = fit_true_delta(config.missingness, config.outcome_type, substantive_formula(config), oracle, my_ind);

  for (int v = 1; v < n_vars; ++v)
    if (static_cast<Var>(v) != Var::Y || config.outcome_type == OutcomeType::binary)
      cal.achieved[std::string(kVarNames[static_cast<std::size_t>(v)])] = oracle.col(v).mean();
  for (int k = 0; k < 4; ++k)
    cal.achieved[kMissKeys[static_cast<std::size_t>(k)]] = ind.col(k).cast<double>().mean();
  cal.achieved["complete_case"] = (!ind.rowwise().any()).cast<double>().mean();
  return cal;
}

}  // namespace narmi
