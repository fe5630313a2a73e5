#include "mvbcf/config.hpp"
#include "mvbcf/csv.hpp"
#include "mvbcf/format.hpp"
#include "mvbcf/pipeline.hpp"
#include "mvbcf/simbench.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace mvbcf;

namespace {

void write_file(OutputGuard& guard, const std::string& name, const std::function<void(std::ostream&)>& body) {
  const fs::path path = guard.track(name);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  body(out);
  out.close();
  if (!out) throw Error(ErrorKind::Io, "error writing '" + path.string() + "'");
}

void write_dataset(std::ostream& out, const CausalDataset& d) {
  for (Eigen::Index c = 0; c < d.X.cols(); ++c) out << 'x' << c + 1 << ',';
  out << "z1,z2,y1,y2\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) out << format_number(d.X(i, c)) << ',';
    out << format_number(d.Z(i, 0)) << ',' << format_number(d.Z(i, 1)) << ',' << format_number(d.Y(i, 0)) << ','
        << format_number(d.Y(i, 1)) << '\n';
  }
}

void write_truth(std::ostream& out, const SyntheticTruth& t) {
  out << "mu,tau1,tau2,pi1,pi2\n";
  for (Eigen::Index i = 0; i < t.mu.size(); ++i) {
    out << format_number(t.mu(i)) << ',' << format_number(t.tau(i, 0)) << ',' << format_number(t.tau(i, 1)) << ','
        << format_number(t.pi(i, 0)) << ',' << format_number(t.pi(i, 1)) << '\n';
  }
}

struct SimOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> n_train, n_test, replications;
  std::optional<std::string> effect;
};

void apply_overrides(const SimOptions& o, SimSpec& spec) {
  spec.seed = *o.seed;
  if (o.n_train) spec.n_train = *o.n_train;
  if (o.n_test) spec.n_test = *o.n_test;
  if (o.replications) spec.replications = *o.replications;
  if (o.effect) spec.effect_kind = parse_effect_kind(*o.effect);
  spec.validate();
}

void run_simulate(const SimOptions& o) {
  SimSpec spec;
  if (!o.config.empty()) spec = sim_spec_from_json(read_json_file(o.config));
  apply_overrides(o, spec);
  // Same stream as replication 0 of `benchmark` with this seed.
  Rng rng(Rng::derive(spec.seed, 0), 0);
  const SyntheticData data = gen_synthetic(spec, rng);

  OutputGuard guard(o.out);
  write_file(guard, "train.csv", [&](std::ostream& out) { write_dataset(out, data.train); });
  write_file(guard, "test.csv", [&](std::ostream& out) { write_dataset(out, data.test); });
  write_file(guard, "truth_train.csv", [&](std::ostream& out) { write_truth(out, data.train_truth); });
  write_file(guard, "truth_test.csv", [&](std::ostream& out) { write_truth(out, data.test_truth); });
  write_file(guard, "spec.json", [&](std::ostream& out) { out << to_json(spec).dump(2) << '\n'; });

  AnalysisConfig analysis;
  analysis.data_path = "train.csv";
  analysis.outcome_groups = {{"y1", "y2"}};
  analysis.treatments = {"z1", "z2"};
  for (int c = 1; c <= 10; ++c) analysis.covariates.push_back({"x" + std::to_string(c), CovariateType::Numeric});
  analysis.output_dir = "run";
  write_file(guard, "analysis.json", [&](std::ostream& out) { out << to_json(analysis).dump(2) << '\n'; });
  guard.commit();

  const SyntheticTruth& t = data.train_truth;
  std::cout << "wrote " << spec.n_train << " training and " << spec.n_test << " test units to " << o.out
            << " (tau " << format_number(t.tau_values[0]) << ", " << format_number(t.tau_values[1]) << "; snr "
            << format_number(t.snr) << ")\n";
}

void run_benchmark_cmd(const SimOptions& o) {
  SimSpec spec;
  BenchmarkSettings settings = default_settings();
  if (!o.config.empty()) benchmark_from_json(read_json_file(o.config), spec, settings);
  apply_overrides(o, spec);
  const BenchmarkResult result = run_benchmark(spec, settings);

  OutputGuard guard(o.out);
  write_file(guard, "summary.csv", [&](std::ostream& out) { write_summary_csv(result, out); });
  write_file(guard, "replications.csv", [&](std::ostream& out) { write_replications_csv(result, out); });
  write_file(guard, "report.txt", [&](std::ostream& out) { write_report(result, out); });
  guard.commit();
  write_report(result, std::cout);
}

void run_fit(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  AnalysisConfig config = load_analysis_config(config_path);
  fs::path dir = out_dir;
  if (dir.empty()) {
    dir = config.output_dir;
    if (dir.is_relative()) dir = fs::path(config_path).parent_path() / dir;
  }
  const AnalysisRun run = fit_analysis(config, seed);
  save_run(run, dir);
  const AteReport ate = weighted_ate(run.pooled(), run.data.weights);
  std::cout << "fitted " << run.chains.size() << " chain(s) on " << run.data.X.rows() << " units; run saved to "
            << dir.string() << '\n';
  write_ate_csv(ate, run.config.components(), std::cout);
}

void run_ate(const std::string& run_dir, const std::string& out_dir) {
  const AnalysisRun run = load_run(run_dir);
  const AteReport ate = weighted_ate(run.pooled(), run.data.weights);
  const std::vector<std::string> components = run.config.components();
  OutputGuard guard(out_dir.empty() ? fs::path(run_dir) : fs::path(out_dir));
  write_file(guard, "ate.csv", [&](std::ostream& out) { write_ate_csv(ate, components, out); });
  write_file(guard, "ate_draws.csv", [&](std::ostream& out) { write_ate_draws_csv(ate, components, out); });
  guard.commit();
  write_ate_csv(ate, components, std::cout);
}

void run_moderation(const std::string& run_dir, const std::string& covariate, std::optional<int> grid,
                    std::optional<int> units, std::uint64_t seed, const std::string& out_dir) {
  const AnalysisRun run = load_run(run_dir);
  Rng rng(seed);
  const ModerationCurve curve =
      moderation_curves(run.pooled(), run.data.X, run.data.columns, covariate, grid.value_or(run.config.grid_size),
                        units.value_or(run.config.max_units), rng);
  std::string name = "moderation_" + covariate + ".csv";
  for (char& c : name) {
    if (c == '/' || c == '\\' || c == ' ' || c == '=') c = '_';
  }
  OutputGuard guard(out_dir.empty() ? fs::path(run_dir) : fs::path(out_dir));
  write_file(guard, name, [&](std::ostream& out) { write_moderation_csv(curve, run.config.components(), out); });
  guard.commit();
  std::cout << "wrote " << curve.units.size() << " ICE curves over " << curve.grid.size() << " grid points to "
            << (guard.dir() / name).string() << '\n';
}

void run_report(const std::string& run_dir) {
  const AnalysisRun run = load_run(run_dir);
  const AteReport ate = weighted_ate(run.pooled(), run.data.weights);
  std::ostringstream text;
  write_run_report(run, ate, text);
  OutputGuard guard(run_dir);
  write_file(guard, "report.txt", [&](std::ostream& out) { out << text.str(); });
  guard.commit();
  std::cout << text.str();
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multivariate Bayesian causal forests"};
  app.require_subcommand(1);

  SimOptions sim;
  auto* simulate = app.add_subcommand("simulate", "write a synthetic two-outcome dataset");
  simulate->add_option("--config", sim.config, "SimSpec JSON file")->check(CLI::ExistingFile);
  simulate->add_option("--seed", sim.seed, "random seed")->required();
  simulate->add_option("--out", sim.out, "output directory")->required();
  simulate->add_option("--n-train", sim.n_train);
  simulate->add_option("--n-test", sim.n_test);
  simulate->add_option("--effect", sim.effect, "homogeneous or heterogeneous");

  SimOptions bench;
  auto* benchmark = app.add_subcommand("benchmark", "run the simulation study");
  benchmark->add_option("--config", bench.config, "SimSpec and method settings JSON file")->check(CLI::ExistingFile);
  benchmark->add_option("--seed", bench.seed, "random seed")->required();
  benchmark->add_option("--out", bench.out, "output directory")->required();
  benchmark->add_option("--replications", bench.replications);
  benchmark->add_option("--n-train", bench.n_train);
  benchmark->add_option("--n-test", bench.n_test);
  benchmark->add_option("--effect", bench.effect, "homogeneous or heterogeneous");

  std::string fit_config, fit_out;
  std::uint64_t fit_seed = 0;
  auto* fit = app.add_subcommand("fit", "fit the causal model described by an analysis config");
  fit->add_option("--config", fit_config, "analysis JSON file")->required()->check(CLI::ExistingFile);
  fit->add_option("--seed", fit_seed, "random seed")->required();
  fit->add_option("--out", fit_out, "run directory (default: output_dir of the config)");

  std::string ate_run, ate_out;
  auto* ate = app.add_subcommand("ate", "weighted average treatment effects of a saved run");
  ate->add_option("--run", ate_run, "run directory")->required()->check(CLI::ExistingDirectory);
  ate->add_option("--out", ate_out, "output directory (default: the run directory)");

  std::string mod_run, mod_covariate, mod_out;
  std::optional<int> mod_grid, mod_units;
  std::uint64_t mod_seed = 0;
  auto* moderation = app.add_subcommand("moderation", "ICE and PDP curves of the treatment effect");
  moderation->add_option("--run", mod_run, "run directory")->required()->check(CLI::ExistingDirectory);
  moderation->add_option("--covariate", mod_covariate, "covariate name")->required();
  moderation->add_option("--grid", mod_grid, "grid points for numeric covariates");
  moderation->add_option("--units", mod_units, "maximum number of ICE curves");
  moderation->add_option("--seed", mod_seed, "seed for the unit subsample");
  moderation->add_option("--out", mod_out, "output directory (default: the run directory)");

  std::string report_run;
  auto* report = app.add_subcommand("report", "plain-text summary of a saved run");
  report->add_option("--run", report_run, "run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mvbcf: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*simulate) run_simulate(sim);
    if (*benchmark) run_benchmark_cmd(bench);
    if (*fit) run_fit(fit_config, fit_seed, fit_out);
    if (*ate) run_ate(ate_run, ate_out);
    if (*moderation) run_moderation(mod_run, mod_covariate, mod_grid, mod_units, mod_seed, mod_out);
    if (*report) run_report(report_run);
  } catch (const Error& e) {
    std::cerr << "mvbcf: " << to_string(e.kind()) << " error: " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mvbcf: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
