// narmi command-line front end: `simulate` and `estimate`.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "narmi/runner.hpp"

namespace {

using narmi::ConfigError;
using nlohmann::json;

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

narmi::DeltaSpec parse_delta(const std::string& text) {
  narmi::DeltaSpec d;
  std::size_t comma = text.find(',');
  try {
    std::size_t used = 0;
    const std::string first = text.substr(0, comma);
    d.delta0 = std::stod(first, &used);
    if (used != first.size()) throw std::invalid_argument(first);
    if (comma != std::string::npos) {
      const std::string second = text.substr(comma + 1);
      d.delta1 = std::stod(second, &used);
      if (used != second.size()) throw std::invalid_argument(second);
    }
  } catch (const std::exception&) {
    throw ConfigError("cannot parse delta '" + text + "'; expected d0 or d0,d1");
  }
  return d;
}

struct SimulateArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> output_dir;
  bool full_scale = false;
  bool quiet = false;
};

int simulate(const SimulateArgs& a) {
  json doc = read_json(a.config);
  if (doc.contains("config") && doc.contains("seed_ledger")) doc = doc.at("config");
  if (a.seed) doc["seed"] = *a.seed;
  if (a.threads) doc["threads"] = *a.threads;
  if (a.output_dir) doc["output_dir"] = *a.output_dir;
  if (a.full_scale || doc.value("full_scale", false)) {
    std::cerr << "warning: full-scale run requested (2000 replicates per scenario); expect many hours of compute\n";
    if (a.full_scale) {
      doc["replications"] = 2000;
      if (doc.contains("scenarios"))
        for (auto& s : doc["scenarios"]) s.erase("replications");
    }
  }
  const narmi::RunConfig config = narmi::parse_config(doc);
  const narmi::RunResult result = narmi::run_simulation(config, a.quiet ? nullptr : &std::cerr);
  narmi::write_outputs(result, config);
  std::cerr << "wrote " << (config.output_dir / "results.csv").string() << " and "
            << (config.output_dir / "manifest.json").string() << "\n";
  return 0;
}

struct EstimateArgs {
  std::string data, schema, method, formula, output;
  std::vector<std::string> deltas;
  std::string analysis = "gcomp";
  int M = 20, T = 5, B = 200;
  std::uint64_t seed = 1;
  std::string resample = "records";
};

int estimate(const EstimateArgs& a) {
  const narmi::Method method = narmi::parse_method(a.method);
  std::string na = "NA";
  const auto schema = narmi::parse_schema(read_json(a.schema), &na);
  narmi::Dataset data;
  narmi::ModelFormula formula;
  try {
    data = narmi::load_dataset(a.data, schema, na);
    const narmi::Index y = data.outcome_column();
    if (y < 0) throw ConfigError("schema has no outcome variable");
    const auto family = data.column(y).measurement == narmi::Measurement::binary ? narmi::Family::bernoulli
                                                                                : narmi::Family::gaussian;
    formula = narmi::ModelFormula::parse(a.formula, family);
    formula.validate();
  } catch (const narmi::DataError& e) {
    throw ConfigError(e.what());
  }
  std::vector<narmi::DeltaSpec> deltas;
  for (const auto& d : a.deltas) deltas.push_back(parse_delta(d));
  narmi::EstimationOptions opt;
  opt.M = a.M;
  opt.T = a.T;
  opt.B = a.B;
  opt.seed = a.seed;
  if (a.analysis == "gcomp")
    opt.analysis = narmi::Analysis::gcomputation;
  else if (a.analysis == "regression")
    opt.analysis = narmi::Analysis::outcome_regression;
  else
    throw ConfigError("--analysis must be gcomp or regression");
  if (a.resample == "records")
    opt.stack_resample = narmi::StackResample::records;
  else if (a.resample == "individuals")
    opt.stack_resample = narmi::StackResample::individuals;
  else
    throw ConfigError("--stack-resample must be records or individuals");
  if (opt.M < 2 || opt.T < 1 || opt.B < 2) throw ConfigError("need M >= 2, T >= 1, B >= 2");

  const std::string csv = narmi::format_estimation_csv(narmi::run_estimation(data, method, deltas, formula, opt));
  if (a.output.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(a.output, std::ios::binary);
    if (!out) throw narmi::Error("cannot write " + a.output);
    out << csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delta-adjusted substantive-model-compatible multiple imputation"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Run a Monte-Carlo simulation from a config (or manifest) file");
  s->add_option("--config", sim.config, "JSON config or a manifest.json from an earlier run")->required();
  s->add_option("--seed", sim.seed, "Root seed (overrides the config)");
  s->add_option("--threads", sim.threads, "Worker threads (overrides the config)");
  s->add_option("--output-dir", sim.output_dir, "Output directory (overrides the config)");
  s->add_flag("--full-scale", sim.full_scale, "2000 replicates per scenario");
  s->add_flag("--quiet", sim.quiet, "No progress log");

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Delta-adjusted ACE for a dataset");
  e->add_option("--data", est.data, "CSV file with a header row")->required();
  e->add_option("--schema", est.schema, "JSON schema: variables with name, role, measurement")->required();
  e->add_option("--method", est.method, std::string("One of: ") + narmi::kMethodList)->required();
  e->add_option("--delta", est.deltas, "d0 or d0,d1; repeat for a grid")->required()->allow_extra_args(false);
  e->add_option("--formula", est.formula, "Analysis model, e.g. \"y ~ x + c1 + x:c1\"")->required();
  e->add_option("--analysis", est.analysis, "gcomp (bootstrap SE) or regression (exposure coefficient)");
  e->add_option("--M", est.M, "Imputations");
  e->add_option("--T", est.T, "Iterations per chain");
  e->add_option("--B", est.B, "Bootstrap resamples");
  e->add_option("--seed", est.seed, "Seed");
  e->add_option("--stack-resample", est.resample, "records or individuals");
  e->add_option("--output", est.output, "CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kConfigError;
  }

  try {
    if (*s) return simulate(sim);
    return estimate(est);
  } catch (const ConfigError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return kConfigError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kRuntimeError;
  }
}
