#include "narmi/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <Eigen/Core>
#include <boost/version.hpp>

namespace narmi {

using nlohmann::json;

namespace {
constexpr const char* kVersion = "1.0.0";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::narfcs: return "narfcs";
    case Method::nar_smcfcs: return "nar-smcfcs";
    case Method::nar_smc_stack: return "nar-smc-stack";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "narfcs") return Method::narfcs;
  if (s == "nar-smcfcs") return Method::nar_smcfcs;
  if (s == "nar-smc-stack") return Method::nar_smc_stack;
  throw ConfigError("unknown method '" + std::string(s) + "'; expected one of: " + kMethodList);
}

// ----------------------------------------------------------------- config

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::vector<double> multipliers(const json& j, const char* key, std::vector<double> fallback) {
  auto v = get_or<std::vector<double>>(j, key, std::move(fallback));
  for (double d : v)
    if (!std::isfinite(d)) throw ConfigError(std::string("non-finite value in '") + key + "'");
  return v;
}

std::vector<Method> methods(const json& j, std::vector<Method> fallback) {
  if (!j.contains("methods")) return fallback;
  std::vector<Method> out;
  for (const auto& s : get_or<std::vector<std::string>>(j, "methods", {})) out.push_back(parse_method(s));
  if (out.empty()) throw ConfigError("empty method list");
  return out;
}

StackResample parse_resample(const std::string& s) {
  if (s == "records") return StackResample::records;
  if (s == "individuals") return StackResample::individuals;
  throw ConfigError("stack_resample must be 'records' or 'individuals'");
}

json spec_to_json(const ScenarioSpec& s) {
  json m = json::array();
  for (auto x : s.methods) m.push_back(std::string(to_string(x)));
  const auto& c = s.scenario;
  return {{"outcome", std::string(to_string(c.outcome_type))},
          {"interaction", std::string(to_string(c.interaction))},
          {"missingness", std::string(to_string(c.missingness))},
          {"recoverable", c.recoverable},
          {"delta_multipliers", c.delta_multipliers},
          {"se_multipliers", s.se_multipliers},
          {"methods", m},
          {"n", c.n},
          {"M", c.M},
          {"T", c.T},
          {"B", c.B},
          {"replications", c.replications}};
}

json normalized(const RunConfig& c) {
  json scen = json::array();
  for (const auto& s : c.scenarios) scen.push_back(spec_to_json(s));
  return {{"name", c.name},
          {"seed", c.seed},
          {"oracle_n", c.oracle_n},
          {"threads", c.threads},
          {"rejection_cap", c.rejection_cap},
          {"draw_parameters", c.draw_parameters},
          {"weights_from_draw", c.weights_from_draw},
          {"stack_resample", c.stack_resample == StackResample::records ? "records" : "individuals"},
          {"output_dir", c.output_dir.string()},
          {"calibration_file", c.calibration_file.string()},
          {"scenarios", scen}};
}

}  // namespace

RunConfig parse_config(const json& input) {
  const json& doc = input.contains("config") && input.contains("seed_ledger") ? input.at("config") : input;
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  c.name = get_or<std::string>(doc, "name", c.name);
  c.seed = get_or<std::uint64_t>(doc, "seed", c.seed);
  c.oracle_n = get_or<Index>(doc, "oracle_n", c.oracle_n);
  c.threads = get_or<int>(doc, "threads", c.threads);
  c.rejection_cap = get_or<int>(doc, "rejection_cap", c.rejection_cap);
  c.draw_parameters = get_or<bool>(doc, "draw_parameters", c.draw_parameters);
  c.weights_from_draw = get_or<bool>(doc, "weights_from_draw", c.weights_from_draw);
  c.stack_resample = parse_resample(get_or<std::string>(doc, "stack_resample", "records"));
  c.output_dir = get_or<std::string>(doc, "output_dir", c.output_dir.string());
  c.calibration_file = get_or<std::string>(doc, "calibration_file", c.calibration_file.string());
  if (c.oracle_n < 1000) throw ConfigError("oracle_n must be at least 1000");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
  if (c.rejection_cap < 1) throw ConfigError("rejection_cap must be >= 1");

  const bool full = get_or<bool>(doc, "full_scale", false);
  ScenarioConfig base;
  base.n = get_or<Index>(doc, "n", base.n);
  base.M = get_or<int>(doc, "M", base.M);
  base.T = get_or<int>(doc, "T", base.T);
  base.B = get_or<int>(doc, "B", base.B);
  base.replications = get_or<int>(doc, "replications", full ? 2000 : base.replications);
  base.delta_multipliers = multipliers(doc, "delta_multipliers", base.delta_multipliers);
  const auto base_se = multipliers(doc, "se_multipliers", {1.0});
  const auto base_methods = methods(doc, {Method::narfcs, Method::nar_smcfcs, Method::nar_smc_stack});

  auto make = [&](const json& s) {
    ScenarioSpec spec;
    ScenarioConfig& sc = spec.scenario;
    sc = base;
    try {
      sc.outcome_type = parse_outcome_type(get_or<std::string>(s, "outcome", "continuous"));
      sc.interaction = parse_interaction(get_or<std::string>(s, "interaction", "none"));
      sc.missingness = parse_missingness(get_or<std::string>(s, "missingness", "simple"));
    } catch (const ConfigError&) {
      throw;
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    sc.recoverable = get_or<bool>(s, "recoverable", false);
    sc.n = get_or<Index>(s, "n", sc.n);
    sc.M = get_or<int>(s, "M", sc.M);
    sc.T = get_or<int>(s, "T", sc.T);
    sc.B = get_or<int>(s, "B", sc.B);
    sc.replications = get_or<int>(s, "replications", sc.replications);
    sc.delta_multipliers = multipliers(s, "delta_multipliers", sc.delta_multipliers);
    sc.seed = c.seed;
    spec.se_multipliers = multipliers(s, "se_multipliers", base_se);
    spec.methods = methods(s, base_methods);
    if (sc.n < 10) throw ConfigError("n must be at least 10");
    if (sc.M < 2) throw ConfigError("M must be >= 2");
    if (sc.T < 1) throw ConfigError("T must be >= 1");
    if (sc.B < 2) throw ConfigError("B must be >= 2");
    if (sc.replications < 2) throw ConfigError("replications must be >= 2");
    if (sc.delta_multipliers.empty()) throw ConfigError("empty delta_multipliers");
    return spec;
  };

  if (doc.contains("grid")) {
    const json& g = doc.at("grid");
    for (const auto& o : get_or<std::vector<std::string>>(g, "outcome", {"continuous", "binary"}))
      for (const auto& i : get_or<std::vector<std::string>>(g, "interaction", {"none", "weak", "strong"}))
        for (const auto& m : get_or<std::vector<std::string>>(g, "missingness", {"simple", "complex"}))
          c.scenarios.push_back(make(json{{"outcome", o}, {"interaction", i}, {"missingness", m}}));
  }
  if (doc.contains("scenarios")) {
    if (!doc.at("scenarios").is_array()) throw ConfigError("'scenarios' must be an array");
    for (const auto& s : doc.at("scenarios")) c.scenarios.push_back(make(s));
  }
  if (c.scenarios.empty()) throw ConfigError("config defines no scenarios (use 'scenarios' or 'grid')");
  std::vector<std::string> names;
  for (const auto& s : c.scenarios) names.push_back(s.scenario.name());
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw ConfigError("scenario listed twice");
  c.source = normalized(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

std::uint64_t replicate_seed(std::uint64_t root, const std::string& scenario, Index r, int attempt) {
  return derive_seed(root, {fnv1a("replicate"), fnv1a(scenario), static_cast<std::uint64_t>(r),
                            static_cast<std::uint64_t>(attempt)});
}

std::uint64_t calibration_seed(std::uint64_t root, const std::string& scenario) {
  return derive_seed(root, {fnv1a("calibration"), fnv1a(scenario)});
}

// ------------------------------------------------------------- replicates

namespace {

AceEstimate point_only(double point) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {point, nan, nan, nan, nan};
}

double mi_point(const std::vector<Dataset>& imps, const ModelFormula& f, Analysis analysis) {
  double s = 0.0;
  for (const auto& d : imps) s += analysis == Analysis::outcome_regression ? outcome_regression_ace(d, f).point
                                                                            : gcomputation(d, f);
  return s / static_cast<double>(imps.size());
}

struct EngineSettings {
  int M, T, B;
  int rejection_cap = 1000;
  bool draw_parameters = true;
  bool weights_from_draw = false;
  StackResample resample = StackResample::records;
};

AceEstimate run_method(Method method, const Dataset& data, const ModelFormula& subst, Analysis analysis,
                       DeltaSpec delta, bool with_se, const EngineSettings& es, Rng& rng,
                       SmcfcsDiagnostics& diagnostics) {
  switch (method) {
    case Method::narfcs: {
      ImputationPlan plan = naive_narfcs_plan(data, subst, delta, es.T, es.M);
      plan.draw_parameters = es.draw_parameters;
      const auto imps = run_narfcs(data, plan, rng);
      return with_se ? mi_rubin(imps, subst, analysis, es.B, rng) : point_only(mi_point(imps, subst, analysis));
    }
    case Method::nar_smcfcs: {
      SmcfcsPlan plan = default_smcfcs_plan(data, subst, delta, es.T, es.M);
      plan.rejection_cap = es.rejection_cap;
      plan.draw_parameters = es.draw_parameters;
      SmcfcsResult res = run_nar_smcfcs(data, plan, rng);
      diagnostics += res.diagnostics;
      return with_se ? mi_rubin(res.imputations, subst, analysis, es.B, rng)
                     : point_only(mi_point(res.imputations, subst, analysis));
    }
    case Method::nar_smc_stack: {
      StackPlan plan = default_stack_plan(data, subst, delta, es.T, es.M);
      plan.draw_parameters = es.draw_parameters;
      plan.weights_from_draw = es.weights_from_draw;
      const StackedImputation s = run_nar_smc_stack(data, plan, rng);
      return with_se ? stack_beesley(s, subst, es.B, rng, es.resample) : point_only(gcomputation(s, subst));
    }
  }
  throw Error("unknown method");
}

Analysis scenario_analysis(const ScenarioConfig& sc) {
  return sc.outcome_type == OutcomeType::continuous && sc.interaction == Interaction::none ? Analysis::outcome_regression
                                                                                          : Analysis::gcomputation;
}

}  // namespace

std::vector<ReplicateRow> analyse_replicate(const ScenarioSpec& spec, const Calibration& cal, std::uint64_t seed,
                                            const RunConfig& config, SmcfcsDiagnostics& diagnostics) {
  const ScenarioConfig& sc = spec.scenario;
  Rng data_rng(derive_seed(seed, {1}));
  const Dataset complete = generate_complete(sc, cal.coefs, data_rng);
  const Dataset data = impose_missingness(complete, cal.coefs, data_rng);
  const ModelFormula subst = substantive_formula(sc);
  const Analysis analysis = scenario_analysis(sc);
  const EngineSettings es{sc.M, sc.T, sc.B, config.rejection_cap, config.draw_parameters, config.weights_from_draw,
                          config.stack_resample};
  std::vector<ReplicateRow> rows;
  for (Method method : spec.methods) {
    for (std::size_t k = 0; k < sc.delta_multipliers.size(); ++k) {
      const double mult = sc.delta_multipliers[k];
      const bool with_se =
          std::find(spec.se_multipliers.begin(), spec.se_multipliers.end(), mult) != spec.se_multipliers.end();
      Rng rng(derive_seed(seed, {2, fnv1a(to_string(method)), static_cast<std::uint64_t>(k)}));
      const DeltaSpec delta = cal.true_delta.delta.scaled(mult);
      rows.push_back({method, mult, run_method(method, data, subst, analysis, delta, with_se, es, rng, diagnostics)});
    }
  }
  return rows;
}

ReplicateResult run_replicate(const ScenarioSpec& spec, const Calibration& cal, Index r, const RunConfig& config,
                              int max_attempts) {
  ReplicateResult out;
  out.replicate = r;
  const std::string name = spec.scenario.name();
  for (int a = 0; a < max_attempts; ++a) {
    out.attempt = a;
    out.seed = replicate_seed(config.seed, name, r, a);
    SmcfcsDiagnostics diag;
    try {
      out.rows = analyse_replicate(spec, cal, out.seed, config, diag);
      out.diagnostics += diag;
      return out;
    } catch (const Error& e) {
      out.diagnostics += diag;
      ++out.diagnostics.refit_failures;
      out.failures.push_back(e.what());
    }
  }
  throw Error("replicate " + std::to_string(r) + " of " + name + " failed " + std::to_string(max_attempts) +
              " times; last error: " + out.failures.back());
}

// ------------------------------------------------------------ calibration

Calibration obtain_calibration(const ScenarioConfig& scenario, const RunConfig& config,
                               std::map<std::string, Calibration>& cache) {
  const std::string name = scenario.name();
  const std::uint64_t seed = calibration_seed(config.seed, name);
  auto it = cache.find(name);
  if (it != cache.end() && it->second.seed == seed && it->second.oracle_n == config.oracle_n) return it->second;
  Calibration cal = calibrate_scenario(scenario, config.oracle_n, seed);
  cache[name] = cal;
  return cal;
}

namespace {

std::filesystem::path calibration_path(const RunConfig& c) {
  return c.calibration_file.is_absolute() ? c.calibration_file : c.output_dir / c.calibration_file;
}

std::map<std::string, Calibration> read_calibration_cache(const std::filesystem::path& path) {
  std::map<std::string, Calibration> cache;
  std::ifstream in(path);
  if (!in) return cache;
  try {
    json doc;
    in >> doc;
    for (const auto& [name, c] : doc.at("scenarios").items()) cache[name] = c.get<Calibration>();
  } catch (const std::exception& e) {
    throw ConfigError("calibration file " + path.string() + " is unreadable: " + e.what());
  }
  return cache;
}

std::string csv_join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += v[i];
  }
  return s;
}

std::string fmt(double v) { return std::isnan(v) ? std::string("NA") : format_double(v); }

std::string hex(std::uint64_t h) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

}  // namespace

RunResult run_simulation(const RunConfig& config, std::ostream* log) {
  RunResult result;
  std::map<std::string, Calibration> cache = read_calibration_cache(calibration_path(config));
  const long jitter_before = covariance_jitter_count();
  std::mutex log_mutex;
  json ledger = json::object();
  json diagnostics = json::object();

  for (const auto& spec : config.scenarios) {
    const ScenarioConfig& sc = spec.scenario;
    const std::string name = sc.name();
    if (log) *log << "[" << name << "] calibrating\n" << std::flush;
    ScenarioResult sr;
    sr.spec = spec;
    sr.calibration = obtain_calibration(sc, config, cache);
    if (log)
      *log << "[" << name << "] true ACE " << sr.calibration.true_ace << ", true delta ("
           << sr.calibration.true_delta.delta.delta0 << ", " << sr.calibration.true_delta.delta.delta1 << ")\n"
           << std::flush;

    const Index R = sc.replications;
    const int cap = std::max(1, sc.replications / 100);
    sr.replicates.resize(static_cast<std::size_t>(R));
    std::atomic<Index> next{0};
    std::atomic<Index> done{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (Index r = next++; r < R; r = next++) {
        try {
          sr.replicates[static_cast<std::size_t>(r)] = run_replicate(spec, sr.calibration, r, config, cap + 1);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = R;
          return;
        }
        const Index d = ++done;
        if (log && (d % 10 == 0 || d == R)) {
          std::lock_guard<std::mutex> lock(log_mutex);
          *log << "[" << name << "] " << d << "/" << R << " replicates\n" << std::flush;
        }
      }
    };
    const int nthreads = std::min<int>(config.threads, static_cast<int>(R));
    if (nthreads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    Index reseeded = 0;
    SmcfcsDiagnostics diag;
    json failures = json::array();
    json seeds = json::array();
    for (const auto& rep : sr.replicates) {
      if (rep.attempt > 0) ++reseeded;
      diag += rep.diagnostics;
      for (const auto& f : rep.failures) failures.push_back({{"replicate", rep.replicate}, {"message", f}});
      seeds.push_back({{"replicate", rep.replicate}, {"attempt", rep.attempt}, {"seed", rep.seed}});
    }
    if (reseeded > cap)
      throw Error(name + ": " + std::to_string(reseeded) + " replicates needed re-seeding (cap " +
                  std::to_string(cap) + ")");
    ledger[name] = {{"calibration_seed", sr.calibration.seed}, {"replicates", seeds}};
    diagnostics[name] = {{"rejection_exhaustions", diag.rejection_exhaustions},
                         {"refit_failures", diag.refit_failures},
                         {"reseeded_replicates", reseeded},
                         {"failures", failures},
                         {"calibration_warnings", sr.calibration.warnings}};

    for (Method m : spec.methods) {
      for (double mult : sc.delta_multipliers) {
        std::vector<AceEstimate> est;
        for (const auto& rep : sr.replicates)
          for (const auto& row : rep.rows)
            if (row.method == m && row.delta_mult == mult) est.push_back(row.estimate);
        sr.summaries.push_back({name, m, mult, summarize(est, sr.calibration.true_ace)});
      }
    }
    result.scenarios.push_back(std::move(sr));
  }

  std::ostringstream res, reps;
  res << "scenario,method,delta_mult," << csv_join(summary_csv_header()) << '\n';
  reps << "scenario,replicate,attempt,method,delta_mult,point,se,ci_low,ci_high,df\n";
  for (const auto& sr : result.scenarios) {
    for (const auto& s : sr.summaries)
      res << s.scenario << ',' << to_string(s.method) << ',' << fmt(s.delta_mult) << ','
          << csv_join(summary_csv_fields(s.summary)) << '\n';
    const std::string name = sr.spec.scenario.name();
    for (const auto& rep : sr.replicates)
      for (const auto& row : rep.rows)
        reps << name << ',' << rep.replicate << ',' << rep.attempt << ',' << to_string(row.method) << ','
             << fmt(row.delta_mult) << ',' << fmt(row.estimate.point) << ',' << fmt(row.estimate.se) << ','
             << fmt(row.estimate.ci_low) << ',' << fmt(row.estimate.ci_high) << ',' << fmt(row.estimate.df) << '\n';
  }
  result.results_csv = res.str();
  result.replicates_csv = reps.str();

  json cal = json::object();
  for (const auto& sr : result.scenarios) cal[sr.spec.scenario.name()] = sr.calibration;
  result.manifest = {
      {"config", config.source},
      {"config_hash", hex(fnv1a(config.source.dump()))},
      {"root_seed", config.seed},
      {"seed_ledger", ledger},
      {"calibration_file", calibration_path(config).string()},
      {"calibration", cal},
      {"versions",
       {{"narmi", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"boost", BOOST_LIB_VERSION},
        {"compiler", __VERSION__}}},
      {"diagnostics", diagnostics},
      {"covariance_jitter_fallbacks", covariance_jitter_count() - jitter_before},
      {"outputs",
       {{"results.csv", hex(fnv1a(result.results_csv))}, {"replicates.csv", hex(fnv1a(result.replicates_csv))}}}};
  return result;
}

void write_outputs(const RunResult& result, const RunConfig& config) {
  std::filesystem::create_directories(config.output_dir);
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
  };
  write(config.output_dir / "results.csv", result.results_csv);
  write(config.output_dir / "replicates.csv", result.replicates_csv);
  write(config.output_dir / "manifest.json", result.manifest.dump(2) + "\n");
  const auto cpath = calibration_path(config);
  std::map<std::string, Calibration> cache = read_calibration_cache(cpath);
  for (const auto& sr : result.scenarios) cache[sr.spec.scenario.name()] = sr.calibration;
  json doc = {{"scenarios", json::object()}};
  for (const auto& [name, c] : cache) doc["scenarios"][name] = c;
  if (cpath.has_parent_path()) std::filesystem::create_directories(cpath.parent_path());
  write(cpath, doc.dump(2) + "\n");
}

// -------------------------------------------------------------- estimate

std::vector<VariableSpec> parse_schema(const json& doc, std::string* na_token) {
  try {
    std::vector<VariableSpec> vars;
    for (const auto& v : doc.at("variables")) {
      VariableSpec s;
      s.name = v.at("name").get<std::string>();
      s.role = parse_role(v.at("role").get<std::string>());
      s.measurement = parse_measurement(v.at("measurement").get<std::string>());
      vars.push_back(s);
    }
    if (na_token) *na_token = doc.value("na_token", std::string("NA"));
    return vars;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid schema: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("invalid schema: ") + e.what());
  }
}

std::vector<EstimationRow> run_estimation(const Dataset& data, Method method, const std::vector<DeltaSpec>& deltas,
                                          const ModelFormula& formula, const EstimationOptions& options) {
  if (data.outcome_column() < 0 || data.exposure_column() < 0)
    throw ConfigError("schema needs exactly one outcome and one exposure");
  if (deltas.empty()) throw ConfigError("empty delta grid");
  for (const auto& d : deltas)
    if (!std::isfinite(d.delta0) || !std::isfinite(d.delta1)) throw ConfigError("delta values must be finite");
  const EngineSettings es{options.M, options.T, options.B, 1000, true, false, options.stack_resample};
  std::vector<EstimationRow> rows;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    Rng rng(derive_seed(options.seed, {fnv1a(to_string(method)), static_cast<std::uint64_t>(k)}));
    SmcfcsDiagnostics diag;
    rows.push_back({method, deltas[k], run_method(method, data, formula, options.analysis, deltas[k], true, es, rng, diag)});
  }
  return rows;
}

std::string format_estimation_csv(const std::vector<EstimationRow>& rows) {
  std::ostringstream o;
  o << "method,delta0,delta1,point,se,ci_low,ci_high\n";
  for (const auto& r : rows)
    o << to_string(r.method) << ',' << fmt(r.delta.delta0) << ',' << fmt(r.delta.delta1) << ','
      << fmt(r.estimate.point) << ',' << fmt(r.estimate.se) << ',' << fmt(r.estimate.ci_low) << ','
      << fmt(r.estimate.ci_high) << '\n';
  return o.str();
}

}  // namespace narmi
