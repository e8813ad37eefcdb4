// Command-line front end: simulate, fit, table, scenario.

#include <cstdlib>
#include <functional>
#include <limits>
#include <sstream>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ppcf/ppcf.hpp"

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<int> reps;
  std::optional<int> folds;
  std::optional<double> bandwidth;
  std::optional<int> kernel_order;
  std::optional<std::string> approx;
  bool skip_thinning = false;
  std::optional<std::string> pcf;
  int parallelism = 1;
  std::string out;
  std::string config;
};

struct ScenarioFlags {
  std::optional<int> window;
  std::optional<std::string> process, covar, nuisance, estimators, lgcp_offset;
  int rep = 0;
};

void add_common(CLI::App* app, Common& c, bool with_reps) {
  app->add_option("--seed", c.seed, "base seed (PPCF_SEED overrides)");
  if (with_reps) app->add_option("--reps", c.reps, "replications per scenario");
  app->add_option("--folds", c.folds, "cross-fitting folds V >= 2");
  app->add_option("--bandwidth", c.bandwidth, "kernel bandwidth in standardized z units");
  app->add_option("--kernel-order", c.kernel_order, "kernel order")->check(CLI::IsMember({2, 4}));
  app->add_option("--approx", c.approx, "pseudo-likelihood approximation")
    ->check(CLI::IsMember({"quadrature", "logistic"}));
  app->add_flag("--skip-thinning", c.skip_thinning, "fit the nuisance on the full pattern (log-linear only)");
  app->add_option("--pcf", c.pcf, "pair correlation handling")->check(CLI::IsMember({"known", "estimated", "none"}));
  app->add_option("--parallelism", c.parallelism, "worker threads")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "output path or prefix");
  app->add_option("--config", c.config, "JSON configuration file");
}

void add_scenario_flags(CLI::App* app, ScenarioFlags& f) {
  app->add_option("--window", f.window, "window side length")->check(CLI::PositiveNumber);
  app->add_option("--process", f.process)->check(CLI::IsMember({"poisson", "lgcp"}));
  app->add_option("--covar", f.covar)->check(CLI::IsMember({"ind", "dep"}));
  app->add_option("--nuisance", f.nuisance)->check(CLI::IsMember({"linear", "poly"}));
  app->add_option("--estimators", f.estimators, "comma-separated subset of semi,para,oracle");
  app->add_option("--lgcp-offset", f.lgcp_offset, "latent field offset")->check(CLI::IsMember({"printed", "mean_one"}));
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("PPCF_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ppcf::error(ppcf::errc::parse_error, std::string("PPCF_SEED is not an unsigned integer: ") + s);
  }
}

std::vector<ppcf::Estimator> parse_estimators(const std::string& list) {
  std::vector<ppcf::Estimator> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(ppcf::parse_estimator(item));
  return out;
}

// defaults < config file < flags < PPCF_SEED
ppcf::Scenario build_scenario(const Common& c, const ScenarioFlags& f) {
  ppcf::Scenario s;
  if (!c.config.empty()) {
    const nlohmann::json j = ppcf::read_json_file(c.config);
    try {
      ppcf::apply_crossfit_json(j, s.fit);
      if (j.contains("seed")) s.base_seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("reps")) s.reps = j.at("reps").get<int>();
      if (j.contains("window")) s.window = j.at("window").get<int>();
      if (j.contains("process")) s.process = ppcf::parse_process(j.at("process").get<std::string>());
      if (j.contains("covariates")) s.covariates = ppcf::parse_covariates(j.at("covariates").get<std::string>());
      if (j.contains("nuisance")) s.nuisance = ppcf::parse_nuisance(j.at("nuisance").get<std::string>());
      if (j.contains("pcf")) s.pcf_mode = ppcf::parse_pcf_mode(j.at("pcf").get<std::string>());
      if (j.contains("estimators")) {
        s.estimators.clear();
        for (const auto& e : j.at("estimators")) s.estimators.push_back(ppcf::parse_estimator(e.get<std::string>()));
      }
      if (j.contains("lgcp_offset")) s.offset = ppcf::parse_lgcp_offset(j.at("lgcp_offset").get<std::string>());
      if (j.contains("nodes_per_unit")) s.nodes_per_unit = j.at("nodes_per_unit").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ppcf::error(ppcf::errc::parse_error, c.config + ": " + e.what());
    }
  }
  if (c.seed) s.base_seed = *c.seed;
  if (c.reps) s.reps = *c.reps;
  if (c.folds) s.fit.folds = *c.folds;
  if (c.bandwidth) s.fit.bandwidth = *c.bandwidth;
  if (c.kernel_order) s.fit.kernel_order = *c.kernel_order;
  if (c.approx) s.fit.approximation = ppcf::parse_approximation(*c.approx);
  if (c.skip_thinning) s.fit.skip_thinning = true;
  if (c.pcf) s.pcf_mode = ppcf::parse_pcf_mode(*c.pcf);
  if (f.window) s.window = *f.window;
  if (f.process) s.process = ppcf::parse_process(*f.process);
  if (f.covar) s.covariates = ppcf::parse_covariates(*f.covar);
  if (f.nuisance) s.nuisance = ppcf::parse_nuisance(*f.nuisance);
  if (f.estimators) s.estimators = parse_estimators(*f.estimators);
  if (f.lgcp_offset) s.offset = ppcf::parse_lgcp_offset(*f.lgcp_offset);
  if (auto e = env_seed()) s.base_seed = *e;
  return s;
}

void write_text(const std::string& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path);
  if (!os) throw ppcf::error(ppcf::errc::invalid_argument, "cannot write " + path);
  body(os);
}

int run_scenario_cmd(const Common& c, const ScenarioFlags& f) {
  const ppcf::Scenario s = build_scenario(c, f);
  const ppcf::ScenarioResult res = ppcf::run_scenario(s, c.parallelism);
  std::vector<std::string> head{"window", "process", "covar", "nuisance", "pcf", "estimator", "bias_x100", "rmse",
                                "mean_se", "mean_se_star", "cp90", "cp90_star", "cp95", "cp95_star", "reps_converged"};
  auto emit = [&](std::ostream& os) {
    os << ppcf::join_csv(head) << '\n';
    for (const auto& r : res.rows) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      os << ppcf::join_csv({"W" + std::to_string(s.window), ppcf::to_string(s.process), ppcf::to_string(s.covariates),
                            ppcf::to_string(s.nuisance), ppcf::to_string(s.pcf_mode), ppcf::to_string(r.estimator),
                            ppcf::format_real(r.bias_x100), ppcf::format_real(r.rmse), ppcf::format_real(r.mean_se),
                            ppcf::format_real(r.mean_se_star.value_or(nan)), ppcf::format_real(r.cp90),
                            ppcf::format_real(r.cp90_star.value_or(nan)), ppcf::format_real(r.cp95),
                            ppcf::format_real(r.cp95_star.value_or(nan)), std::to_string(r.reps_converged)})
         << '\n';
    }
  };
  if (c.out.empty()) {
    emit(std::cout);
    return 0;
  }
  write_text(c.out, emit);
  write_text(c.out + ".jsonl", [&](std::ostream& os) {
    for (const auto& rec : res.records) os << ppcf::to_json(rec).dump() << '\n';
  });
  return 0;
}

int run_table_cmd(const Common& c, int id) {
  const ppcf::Scenario base = build_scenario(c, {});
  const std::string out = c.out.empty() ? "table" + std::to_string(id) + ".csv" : c.out;
  ppcf::run_table(id, base, c.parallelism, out);
  std::cout << "wrote " << out << " and " << out << ".jsonl\n";
  return 0;
}

int run_simulate_cmd(const Common& c, const ScenarioFlags& f) {
  const ppcf::Scenario s = build_scenario(c, f);
  const std::uint64_t seed = s.base_seed + static_cast<std::uint64_t>(f.rep);
  const ppcf::SimulatedData d = ppcf::simulate_scenario(s, seed);
  const std::string prefix = c.out.empty() ? "sim" : c.out;
  write_text(prefix + "_pattern.txt", [&](std::ostream& os) { ppcf::write_pattern(os, d.pattern); });
  write_text(prefix + "_y.grid", [&](std::ostream& os) { ppcf::write_grid(os, d.spec.target_fields().front()); });
  write_text(prefix + "_z.grid", [&](std::ostream& os) { ppcf::write_grid(os, d.spec.nuisance_fields().front()); });
  std::cout << "wrote " << d.pattern.count() << " points to " << prefix << "_pattern.txt\n";
  return 0;
}

int run_fit_cmd(const Common& c, const std::string& pattern, const std::vector<std::string>& ys,
                const std::vector<std::string>& zs) {
  ppcf::FitConfig cfg = c.config.empty() ? ppcf::FitConfig{} : ppcf::parse_fit_config(ppcf::read_json_file(c.config));
  if (c.seed) cfg.crossfit.seed = *c.seed;
  if (c.folds) cfg.crossfit.folds = *c.folds;
  if (c.bandwidth) cfg.crossfit.bandwidth = *c.bandwidth;
  if (c.kernel_order) cfg.crossfit.kernel_order = *c.kernel_order;
  if (c.approx) cfg.crossfit.approximation = ppcf::parse_approximation(*c.approx);
  if (c.skip_thinning) cfg.crossfit.skip_thinning = true;
  if (c.pcf) {
    cfg.pcf = ppcf::parse_pcf_mode(*c.pcf);
    if (cfg.pcf == ppcf::PcfMode::known && cfg.known_pcf.trivial() && c.config.empty()) {
      throw ppcf::error(ppcf::errc::invalid_argument, "--pcf known needs sigma2/phi in the config file");
    }
  }
  if (auto e = env_seed()) cfg.crossfit.seed = *e;

  std::vector<ppcf::GridField> yg, zg;
  for (const auto& p : ys) yg.push_back(ppcf::load_grid(p));
  for (const auto& p : zs) zg.push_back(ppcf::load_grid(p));
  const ppcf::PointPattern pp = ppcf::load_pattern(pattern);
  for (const auto* set : {&yg, &zg}) {
    for (const auto& g : *set) {
      if (!(g.window() == yg.front().window())) {
        throw ppcf::error(ppcf::errc::window_mismatch, "covariate grids use different windows");
      }
    }
  }
  const ppcf::ModelSpec spec = ppcf::ModelSpec::log_linear(std::move(yg), std::move(zg));
  const ppcf::FitResult f = ppcf::fit_data(spec, pp, cfg);
  ppcf::write_fit_outputs(f, c.out.empty() ? "fit" : c.out);
  for (Eigen::Index i = 0; i < f.report.theta_hat.size(); ++i) {
    const auto& ci = f.report.ci.back();
    std::cout << "theta" << i + 1 << " = " << ppcf::format_real(f.report.theta_hat[i])
              << "  se = " << ppcf::format_real(f.report.se[i]) << "  " << ppcf::format_real(100 * ci.level)
              << "% CI [" << ppcf::format_real(ci.lower[i]) << ", " << ppcf::format_real(ci.upper[i]) << "]\n";
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semiparametric intensity estimation for spatial point processes"};
  app.require_subcommand(1);

  Common sim_c, fit_c, table_c, scen_c;
  ScenarioFlags sim_f, scen_f;

  auto* sim = app.add_subcommand("simulate", "simulate one replication and write pattern/grid files");
  add_common(sim, sim_c, false);
  add_scenario_flags(sim, sim_f);
  sim->add_option("--rep", sim_f.rep, "replication index (seed = base seed + rep)");

  std::string pattern_path;
  std::vector<std::string> y_paths, z_paths;
  auto* fit = app.add_subcommand("fit", "fit pattern and covariate grid files");
  add_common(fit, fit_c, false);
  fit->add_option("--pattern", pattern_path, "pattern file")->required();
  fit->add_option("--y", y_paths, "target covariate grid (repeatable)")->required();
  fit->add_option("--z", z_paths, "nuisance covariate grid (repeatable)")->required();

  int table_id = 2;
  auto* table = app.add_subcommand("table", "run a simulation table");
  add_common(table, table_c, true);
  table->add_option("--id", table_id, "table number")->check(CLI::IsMember({2, 3, 4}))->required();

  auto* scen = app.add_subcommand("scenario", "run one simulation scenario");
  add_common(scen, scen_c, true);
  add_scenario_flags(scen, scen_f);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return run_simulate_cmd(sim_c, sim_f);
    if (*fit) return run_fit_cmd(fit_c, pattern_path, y_paths, z_paths);
    if (*table) return run_table_cmd(table_c, table_id);
    if (*scen) return run_scenario_cmd(scen_c, scen_f);
  } catch (const ppcf::error& e) {
    std::cerr << "error [" << ppcf::to_string(e.code()) << "]: " << e.what() << '\n';
    return e.code() == ppcf::errc::parse_error ? 2 : 1;
  }
  return 0;
}
