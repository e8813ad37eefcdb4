#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ppcf/crossfit.hpp"
#include "ppcf/error.hpp"
#include "ppcf/fields.hpp"
#include "ppcf/inference.hpp"
#include "ppcf/model.hpp"
#include "ppcf/process.hpp"
#include "ppcf/random.hpp"

namespace ppcf {

enum class ProcessKind { poisson, lgcp };
enum class CovariateKind { ind, dep };
enum class NuisanceKind { linear, poly };
enum class PcfMode { none, known, estimated };
enum class Estimator { semi, para, oracle };

inline const char* to_string(ProcessKind p) { return p == ProcessKind::poisson ? "poisson" : "lgcp"; }
inline const char* to_string(CovariateKind c) { return c == CovariateKind::ind ? "ind" : "dep"; }
inline const char* to_string(NuisanceKind n) { return n == NuisanceKind::linear ? "linear" : "poly"; }
inline const char* to_string(PcfMode m) {
  switch (m) {
    case PcfMode::none: return "none";
    case PcfMode::known: return "known";
    case PcfMode::estimated: return "estimated";
  }
  return "none";
}
inline const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::semi: return "semi";
    case Estimator::para: return "para";
    case Estimator::oracle: return "oracle";
  }
  return "semi";
}

namespace detail {
template <class E, std::size_t N>
E parse_enum(const std::string& s, const std::array<E, N>& values, const char* what) {
  for (E v : values) {
    if (s == to_string(v)) return v;
  }
  throw error(errc::parse_error, std::string("unknown ") + what + " '" + s + "'");
}
} // namespace detail

inline ProcessKind parse_process(const std::string& s) {
  return detail::parse_enum(s, std::array{ProcessKind::poisson, ProcessKind::lgcp}, "process");
}
inline CovariateKind parse_covariates(const std::string& s) {
  return detail::parse_enum(s, std::array{CovariateKind::ind, CovariateKind::dep}, "covariate kind");
}
inline NuisanceKind parse_nuisance(const std::string& s) {
  return detail::parse_enum(s, std::array{NuisanceKind::linear, NuisanceKind::poly}, "nuisance kind");
}
inline PcfMode parse_pcf_mode(const std::string& s) {
  return detail::parse_enum(s, std::array{PcfMode::none, PcfMode::known, PcfMode::estimated}, "pcf mode");
}
inline Estimator parse_estimator(const std::string& s) {
  return detail::parse_enum(s, std::array{Estimator::semi, Estimator::para, Estimator::oracle}, "estimator");
}
inline Approximation parse_approximation(const std::string& s) {
  if (s == "quadrature") return Approximation::quadrature;
  if (s == "logistic") return Approximation::logistic;
  throw error(errc::parse_error, "unknown approximation '" + s + "'");
}
inline LgcpOffset parse_lgcp_offset(const std::string& s) {
  if (s == "printed") return LgcpOffset::printed;
  if (s == "mean_one") return LgcpOffset::mean_one;
  throw error(errc::parse_error, "unknown LGCP offset '" + s + "'");
}

//! One simulation setting: intensity base_rate * exp(theta* y + eta*(z)) on
//! the a-by-a window, optionally modulated by a latent Gaussian field.
struct Scenario {
  int window = 1;
  ProcessKind process = ProcessKind::poisson;
  CovariateKind covariates = CovariateKind::ind;
  NuisanceKind nuisance = NuisanceKind::linear;
  PcfMode pcf_mode = PcfMode::none;
  int reps = 200;
  std::uint64_t base_seed = 1;
  std::vector<Estimator> estimators{Estimator::semi};
  CrossFitConfig fit = [] {
    CrossFitConfig c;
    c.grid_n = 0;  // 128 per unit length
    return c;
  }();
  LgcpOffset offset = LgcpOffset::mean_one;
  int nodes_per_unit = 128;
  double theta_star = 0.3;
  double base_rate = 400.0;
  double field_range = 0.05;
  double lgcp_sigma2 = 0.2;
  double lgcp_phi = 0.2;

  Window region() const { return square_window(static_cast<double>(window)); }
  int grid_n() const { return fit.grid_n > 0 ? fit.grid_n : 128 * window; }
  std::size_t lattice_nodes() const { return static_cast<std::size_t>(nodes_per_unit * window + 1); }

  double eta_star(double z) const { return nuisance == NuisanceKind::linear ? 0.3 * z : -0.09 * z * z; }

  //! max of eta* over [lo, hi].
  double eta_star_max(double lo, double hi) const {
    if (nuisance == NuisanceKind::linear) return 0.3 * hi;
    if (lo <= 0.0 && hi >= 0.0) return 0.0;
    return -0.09 * std::min(lo * lo, hi * hi);
  }

  PcfModel true_pcf() const {
    return process == ProcessKind::lgcp ? PcfModel::lgcp(lgcp_sigma2, lgcp_phi) : PcfModel::poisson();
  }

  void validate() const {
    if (window < 1) throw error(errc::invalid_argument, "window side must be >= 1");
    if (reps < 1) throw error(errc::invalid_argument, "reps must be >= 1");
    if (estimators.empty()) throw error(errc::invalid_argument, "no estimators selected");
    if (nodes_per_unit < 2) throw error(errc::invalid_argument, "nodes_per_unit must be >= 2");
  }

  std::string label() const {
    return "W" + std::to_string(window) + "/" + to_string(process) + "/" + to_string(covariates) + "/" +
           to_string(nuisance) + "/pcf=" + to_string(pcf_mode);
  }
};

struct SimulatedData {
  ModelSpec spec;
  PointPattern pattern;
  IntensitySurface truth;  //!< first-order intensity
};

//! Fields and pattern of replication `seed`.
inline SimulatedData simulate_scenario(const Scenario& s, std::uint64_t seed) {
  s.validate();
  const Window w = s.region();
  const std::size_t n = s.lattice_nodes();
  const GrfSpec grf{1.0, s.field_range, 0.0};
  GridField y = simulate_grf(w, n, n, grf, derive_seed(seed, stream::target_field));
  GridField other = simulate_grf(w, n, n, grf, derive_seed(seed, stream::nuisance_field));
  GridField z = s.covariates == CovariateKind::ind ? std::move(other) : field_product(y, other);

  // Both covariates are bilinear within a lattice cell, so the cell maximum
  // of theta* y + eta*(z) is bounded by corner extremes.
  double bound = -std::numeric_limits<double>::infinity();
  for (std::size_t iy = 0; iy + 1 < n; ++iy) {
    for (std::size_t ix = 0; ix + 1 < n; ++ix) {
      const double yc[4] = {y.at(ix, iy), y.at(ix + 1, iy), y.at(ix, iy + 1), y.at(ix + 1, iy + 1)};
      const double zc[4] = {z.at(ix, iy), z.at(ix + 1, iy), z.at(ix, iy + 1), z.at(ix + 1, iy + 1)};
      const double ty = s.theta_star * (s.theta_star >= 0 ? *std::max_element(yc, yc + 4) : *std::min_element(yc, yc + 4));
      const double e = s.eta_star_max(*std::min_element(zc, zc + 4), *std::max_element(zc, zc + 4));
      bound = std::max(bound, ty + e);
    }
  }
  const double theta = s.theta_star, rate = s.base_rate;
  auto lambda = [y, z, theta, rate, s](double px, double py) {
    return rate * std::exp(theta * y(px, py) + s.eta_star(z(px, py)));
  };
  IntensitySurface truth{w, lambda, 1.05 * rate * std::exp(bound)};
  PointPattern pattern = s.process == ProcessKind::poisson
                           ? simulate_poisson(truth, derive_seed(seed, stream::pattern))
                           : simulate_lgcp(truth, GrfSpec{s.lgcp_sigma2, s.lgcp_phi, 0.0}, n, n, seed, s.offset);
  ModelSpec spec = ModelSpec::log_linear({std::move(y)}, {std::move(z)});
  return {std::move(spec), std::move(pattern), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Per-replication estimation

struct EstimateRecord {
  Estimator estimator = Estimator::semi;
  bool ok = false;
  std::string failure;
  double theta = 0.0;
  double se = 0.0;
  double se_star = std::numeric_limits<double>::quiet_NaN();
  bool hit90 = false, hit95 = false, hit90_star = false, hit95_star = false;
  std::optional<PcfModel> pcf_fit;
};

struct RepRecord {
  int rep = 0;
  std::uint64_t seed = 0;
  std::size_t points = 0;
  std::string failure;  //!< simulation failure, empty when the data exist
  std::vector<EstimateRecord> estimates;
};

namespace detail {

struct Intervals {
  double se = 0.0;
  bool hit90 = false, hit95 = false;
};

inline Intervals wald_first(double theta_true, const Vec& theta, const Mat& S, const Mat& Sigma, double area) {
  const FitReport r = wald_report(theta, S, Sigma, area);
  Vec truth = theta;
  truth[0] = theta_true;
  Intervals out;
  out.se = r.se[0];
  const auto& c90 = r.interval(0.90);
  const auto& c95 = r.interval(0.95);
  out.hit90 = c90.lower[0] <= theta_true && theta_true <= c90.upper[0];
  out.hit95 = c95.lower[0] <= theta_true && theta_true <= c95.upper[0];
  return out;
}

// Unstarred and (for LGCP) starred intervals from one set of plug-ins.
inline void fill_intervals(EstimateRecord& rec, const Scenario& s, const PointPattern& pattern, const Vec& theta,
                           const Mat& grad, const Vec& lambda, const QuadratureScheme& quad,
                           const std::vector<double>& lambda_data) {
  const double area = quad.window().area();
  const Mat S = sensitivity_hat(grad, lambda, quad.weights());
  PcfModel pcf = PcfModel::poisson();
  if (s.pcf_mode == PcfMode::known) {
    pcf = s.true_pcf();
  } else if (s.pcf_mode == PcfMode::estimated) {
    const PcfFit f = estimate_pcf(pattern, lambda_data);
    pcf = f.model;
    rec.pcf_fit = f.model;
  }
  const Intervals main = wald_first(s.theta_star, theta, S, covariance_hat(grad, lambda, quad, pcf), area);
  rec.theta = theta[0];
  rec.se = main.se;
  rec.hit90 = main.hit90;
  rec.hit95 = main.hit95;
  if (s.process == ProcessKind::lgcp) {
    const PcfModel truth = s.true_pcf();
    const Intervals star = s.pcf_mode == PcfMode::known
                             ? main
                             : wald_first(s.theta_star, theta, S, covariance_hat(grad, lambda, quad, truth), area);
    rec.se_star = star.se;
    rec.hit90_star = star.hit90;
    rec.hit95_star = star.hit95;
  }
}

inline std::vector<double> data_values(const Vec& v, const QuadratureScheme& quad) {
  std::vector<double> out;
  for (std::size_t j = 0; j < quad.size(); ++j) {
    if (quad.is_data()[j]) out.push_back(v[static_cast<Eigen::Index>(j)]);
  }
  return out;
}

inline EstimateRecord run_estimator(Estimator e, const Scenario& s, const SimulatedData& d, std::uint64_t seed) {
  EstimateRecord rec;
  rec.estimator = e;
  if (e == Estimator::semi) {
    CrossFitConfig cfg = s.fit;
    cfg.grid_n = s.grid_n();
    cfg.seed = seed;
    const CrossFitResult cf = cross_fit(d.spec, d.pattern, cfg);
    const PlugIn p = semiparametric_plug_in(d.spec, d.pattern, cf, cfg);
    fill_intervals(rec, s, d.pattern, cf.theta_hat, p.gradients.grad, p.gradients.lambda, p.quad,
                   p.lambda_at_data());
  } else {
    const QuadratureScheme quad = build_quadrature(d.pattern, s.grid_n());
    const double log_rate = std::log(s.base_rate);
    std::function<double(const Vec&)> oracle;
    if (e == Estimator::oracle) oracle = [&s, log_rate](const Vec& z) { return log_rate + s.eta_star(z[0]); };
    const BaselineFit fit = fit_parametric_baseline(
      d.spec, quad, e == Estimator::para ? NuisanceForm::linear : NuisanceForm::oracle, oracle, s.fit.optimizer);
    const Covariates cov = fit.design.covariates_at(quad.nodes());
    Vec lambda(cov.y.rows());
    for (Eigen::Index j = 0; j < cov.y.rows(); ++j) {
      lambda[j] = std::exp(cov.y.row(j).dot(fit.coefficients) + fit.offset(cov.z.row(j).transpose()));
    }
    fill_intervals(rec, s, d.pattern, fit.coefficients, cov.y, lambda, quad, data_values(lambda, quad));
  }
  rec.ok = true;
  return rec;
}

} // namespace detail

inline RepRecord run_replication(const Scenario& s, int rep) {
  RepRecord r;
  r.rep = rep;
  r.seed = s.base_seed + static_cast<std::uint64_t>(rep);
  std::optional<SimulatedData> data;
  try {
    data.emplace(simulate_scenario(s, r.seed));
    r.points = data->pattern.count();
  } catch (const error& e) {
    r.failure = std::string(to_string(e.code())) + ": " + e.what();
  }
  for (Estimator est : s.estimators) {
    EstimateRecord rec;
    rec.estimator = est;
    if (!data) {
      rec.failure = r.failure;
    } else {
      try {
        rec = detail::run_estimator(est, s, *data, r.seed);
      } catch (const error& e) {
        rec.ok = false;
        rec.failure = std::string(to_string(e.code())) + ": " + e.what();
      }
    }
    r.estimates.push_back(std::move(rec));
  }
  return r;
}

//! Runs task(i) for i in [0, n) on `parallelism` worker threads; results
//! land in slot i, so the output does not depend on scheduling.
template <class T, class Task>
std::vector<T> run_indexed(int n, int parallelism, Task task) {
  std::vector<T> out(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) out[static_cast<std::size_t>(i)] = task(i);
  };
  const int threads = std::clamp(parallelism, 1, std::max(n, 1));
  if (threads == 1) {
    worker();
    return out;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct TableRow {
  Estimator estimator = Estimator::semi;
  double bias_x100 = 0.0;
  double rmse = 0.0;
  double mean_se = 0.0;
  std::optional<double> mean_se_star;
  double cp90 = 0.0;
  std::optional<double> cp90_star;
  double cp95 = 0.0;
  std::optional<double> cp95_star;
  int reps_converged = 0;
};

struct ScenarioResult {
  Scenario scenario;
  std::vector<TableRow> rows;  //!< one per estimator, in scenario order
  std::vector<RepRecord> records;
};

inline TableRow summarize(const Scenario& s, const std::vector<RepRecord>& records, std::size_t slot) {
  TableRow row;
  row.estimator = s.estimators[slot];
  double sum_err = 0.0, sum_sq = 0.0, sum_se = 0.0, sum_se_star = 0.0;
  int n = 0, h90 = 0, h95 = 0, h90s = 0, h95s = 0;
  bool star = false;
  for (const auto& r : records) {  // fixed order: by replication index
    const EstimateRecord& e = r.estimates[slot];
    if (!e.ok) continue;
    ++n;
    const double err = e.theta - s.theta_star;
    sum_err += err;
    sum_sq += err * err;
    sum_se += e.se;
    h90 += e.hit90;
    h95 += e.hit95;
    if (!std::isnan(e.se_star)) {
      star = true;
      sum_se_star += e.se_star;
      h90s += e.hit90_star;
      h95s += e.hit95_star;
    }
  }
  row.reps_converged = n;
  if (n == 0) return row;
  const double dn = n;
  row.bias_x100 = 100.0 * sum_err / dn;
  row.rmse = std::sqrt(sum_sq / dn);
  row.mean_se = sum_se / dn;
  row.cp90 = 100.0 * h90 / dn;
  row.cp95 = 100.0 * h95 / dn;
  if (star) {
    row.mean_se_star = sum_se_star / dn;
    row.cp90_star = 100.0 * h90s / dn;
    row.cp95_star = 100.0 * h95s / dn;
  }
  return row;
}

//! All replications of a scenario; throws scenario_infeasible when more than
//! half of the replications fail for any estimator.
inline ScenarioResult run_scenario(const Scenario& s, int parallelism = 1) {
  s.validate();
  ScenarioResult res{s, {}, run_indexed<RepRecord>(s.reps, parallelism, [&s](int r) { return run_replication(s, r); })};
  for (std::size_t slot = 0; slot < s.estimators.size(); ++slot) {
    TableRow row = summarize(s, res.records, slot);
    if (2 * row.reps_converged < s.reps) {
      std::string first;
      for (const auto& r : res.records) {
        if (!r.estimates[slot].ok) {
          first = r.estimates[slot].failure;
          break;
        }
      }
      throw error(errc::scenario_infeasible, s.label() + " estimator " + to_string(s.estimators[slot]) + ": " +
                                                std::to_string(s.reps - row.reps_converged) + " of " +
                                                std::to_string(s.reps) + " replications failed (first: " + first + ")");
    }
    res.rows.push_back(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Output

//! Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_real(const std::string& s) {
  if (s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw error(errc::parse_error, "bad number '" + s + "'");
  return v;
}

inline nlohmann::json to_json(const RepRecord& r) {
  nlohmann::json j;
  j["rep"] = r.rep;
  j["seed"] = r.seed;
  j["points"] = r.points;
  if (!r.failure.empty()) j["failure"] = r.failure;
  for (const auto& e : r.estimates) {
    nlohmann::json x;
    x["ok"] = e.ok;
    if (e.ok) {
      x["theta"] = e.theta;
      x["se"] = e.se;
      x["hit90"] = e.hit90;
      x["hit95"] = e.hit95;
      if (!std::isnan(e.se_star)) {
        x["se_star"] = e.se_star;
        x["hit90_star"] = e.hit90_star;
        x["hit95_star"] = e.hit95_star;
      }
      if (e.pcf_fit) x["pcf"] = {{"sigma2", e.pcf_fit->sigma2}, {"phi", e.pcf_fit->phi}};
    } else {
      x["failure"] = e.failure;
    }
    j[to_string(e.estimator)] = x;
  }
  return j;
}

//! Table layouts: 2 (Poisson), 3 (LGCP with starred known-PCF columns),
//! 4 (estimator comparison).
inline std::vector<std::string> table_header(int table_id) {
  std::vector<std::string> h;
  if (table_id == 4) {
    h = {"window", "process", "estimator", "bias_x100", "rmse", "mean_se", "cp90", "cp95"};
  } else if (table_id == 3) {
    h = {"window", "covar", "nuisance", "bias_x100", "rmse", "mean_se", "mean_se_star",
         "cp90", "cp90_star", "cp95", "cp95_star"};
  } else {
    h = {"window", "covar", "nuisance", "bias_x100", "rmse", "mean_se", "cp90", "cp95"};
  }
  h.push_back("reps_converged");
  return h;
}

inline std::vector<std::string> table_cells(int table_id, const Scenario& s, const TableRow& r) {
  auto opt = [](const std::optional<double>& v) { return format_real(v.value_or(std::numeric_limits<double>::quiet_NaN())); };
  std::vector<std::string> c{"W" + std::to_string(s.window)};
  if (table_id == 4) {
    c.insert(c.end(), {s.process == ProcessKind::poisson ? "Poisson" : "LGCP", to_string(r.estimator)});
  } else {
    c.insert(c.end(), {to_string(s.covariates), to_string(s.nuisance)});
  }
  c.push_back(format_real(r.bias_x100));
  c.push_back(format_real(r.rmse));
  c.push_back(format_real(r.mean_se));
  if (table_id == 3) c.push_back(opt(r.mean_se_star));
  c.push_back(format_real(r.cp90));
  if (table_id == 3) c.push_back(opt(r.cp90_star));
  c.push_back(format_real(r.cp95));
  if (table_id == 3) c.push_back(opt(r.cp95_star));
  c.push_back(std::to_string(r.reps_converged));
  return c;
}

inline std::string join_csv(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

inline std::vector<std::vector<std::string>> read_csv(std::istream& is) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

//! Scenario grid of a table; `base` supplies reps, seed and fitting options.
inline std::vector<Scenario> table_scenarios(int table_id, const Scenario& base) {
  if (table_id != 2 && table_id != 3 && table_id != 4) {
    throw error(errc::invalid_argument, "table id must be 2, 3 or 4");
  }
  std::vector<Scenario> out;
  if (table_id == 4) {
    for (int w : {1, 2}) {
      for (ProcessKind p : {ProcessKind::poisson, ProcessKind::lgcp}) {
        Scenario s = base;
        s.window = w;
        s.process = p;
        s.covariates = CovariateKind::dep;
        s.nuisance = NuisanceKind::poly;
        s.pcf_mode = p == ProcessKind::lgcp ? PcfMode::estimated : PcfMode::none;
        s.estimators = {Estimator::semi, Estimator::para, Estimator::oracle};
        out.push_back(s);
      }
    }
    return out;
  }
  for (int w : {1, 2}) {
    for (CovariateKind c : {CovariateKind::ind, CovariateKind::dep}) {
      for (NuisanceKind n : {NuisanceKind::linear, NuisanceKind::poly}) {
        Scenario s = base;
        s.window = w;
        s.covariates = c;
        s.nuisance = n;
        s.process = table_id == 2 ? ProcessKind::poisson : ProcessKind::lgcp;
        s.pcf_mode = table_id == 2 ? PcfMode::none : PcfMode::estimated;
        s.estimators = {Estimator::semi};
        out.push_back(s);
      }
    }
  }
  return out;
}

//! Runs a table's scenarios, writing CSV rows (and per-replication JSON lines
//! to `<out>.jsonl`) as each scenario completes. Failed scenarios leave a
//! row with reps_converged = 0; the first failure is rethrown at the end.
inline void run_table(int table_id, const Scenario& base, int parallelism, const std::string& out_path) {
  const std::vector<Scenario> grid = table_scenarios(table_id, base);
  std::ofstream csv(out_path);
  std::ofstream jsonl(out_path + ".jsonl");
  if (!csv || !jsonl) throw error(errc::invalid_argument, "cannot write " + out_path);
  csv << join_csv(table_header(table_id)) << '\n';
  std::optional<error> first_failure;
  for (const Scenario& s : grid) {
    try {
      const ScenarioResult res = run_scenario(s, parallelism);
      for (const auto& row : res.rows) csv << join_csv(table_cells(table_id, s, row)) << '\n';
      for (const auto& rec : res.records) {
        nlohmann::json j = to_json(rec);
        j["scenario"] = s.label();
        jsonl << j.dump() << '\n';
      }
    } catch (const error& e) {
      for (Estimator est : s.estimators) {
        TableRow empty;
        empty.estimator = est;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        empty.bias_x100 = empty.rmse = empty.mean_se = empty.cp90 = empty.cp95 = nan;
        if (table_id == 3) empty.mean_se_star = empty.cp90_star = empty.cp95_star = nan;
        csv << join_csv(table_cells(table_id, s, empty)) << '\n';
      }
      if (!first_failure) first_failure = e;
    }
    csv.flush();
    jsonl.flush();
  }
  if (first_failure) throw *first_failure;
}

// ---------------------------------------------------------------------------
// Fitting user data

struct FitConfig {
  CrossFitConfig crossfit{};
  PcfMode pcf = PcfMode::none;
  PcfModel known_pcf{};
  std::vector<double> levels{0.90, 0.95};
  std::size_t eta_points = 200;
};

inline void apply_crossfit_json(const nlohmann::json& j, CrossFitConfig& c) {
  if (j.contains("folds")) c.folds = j.at("folds").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("kernel_order")) c.kernel_order = j.at("kernel_order").get<int>();
  if (j.contains("bandwidth") && !j.at("bandwidth").is_null()) c.bandwidth = j.at("bandwidth").get<double>();
  if (j.contains("c0")) c.c0 = j.at("c0").get<double>();
  if (j.contains("smoothness")) c.smoothness = j.at("smoothness").get<int>();
  if (j.contains("grid_n")) c.grid_n = j.at("grid_n").get<int>();
  if (j.contains("eta_bins")) c.eta_bins = j.at("eta_bins").get<std::size_t>();
  if (j.contains("approximation")) c.approximation = parse_approximation(j.at("approximation").get<std::string>());
  if (j.contains("skip_thinning")) c.skip_thinning = j.at("skip_thinning").get<bool>();
  if (j.contains("inverse_complement_scale")) c.inverse_complement_scale = j.at("inverse_complement_scale").get<bool>();
  if (j.contains("eta_grid")) c.eta_grid = j.at("eta_grid").get<std::size_t>();
  if (j.contains("rho")) c.rho = j.at("rho").get<double>();
  if (j.contains("tolerance")) c.optimizer.tol = j.at("tolerance").get<double>();
  if (j.contains("max_iter")) c.optimizer.max_iter = j.at("max_iter").get<int>();
}

inline FitConfig parse_fit_config(const nlohmann::json& j) {
  FitConfig f;
  try {
    apply_crossfit_json(j, f.crossfit);
    if (j.contains("pcf")) {
      const auto& p = j.at("pcf");
      if (p.is_string()) {
        f.pcf = parse_pcf_mode(p.get<std::string>());
        if (f.pcf == PcfMode::known) throw error(errc::parse_error, "pcf 'known' needs {\"sigma2\", \"phi\"}");
      } else {
        f.pcf = PcfMode::known;
        f.known_pcf = PcfModel::lgcp(p.at("sigma2").get<double>(), p.at("phi").get<double>());
      }
    }
    if (j.contains("levels")) f.levels = j.at("levels").get<std::vector<double>>();
    if (j.contains("eta_points")) f.eta_points = j.at("eta_points").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw error(errc::parse_error, std::string("config: ") + e.what());
  }
  return f;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw error(errc::parse_error, "cannot open " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw error(errc::parse_error, path + ": " + e.what());
  }
}

struct FitResult {
  FitReport report;
  CrossFitResult crossfit;
  std::vector<double> eta_z;  //!< plotting grid over the observed z range
  std::vector<double> eta_values;
};

//! Cross-fit, plug-in variance and Wald intervals for in-memory data.
inline FitResult fit_data(const ModelSpec& spec, const PointPattern& pattern, const FitConfig& cfg) {
  if (pattern.empty()) throw error(errc::insufficient_points, "pattern has no points");
  if (!(pattern.window() == spec.window())) {
    throw error(errc::window_mismatch, "pattern window differs from the covariate grid window");
  }
  FitResult out{FitReport{}, cross_fit(spec, pattern, cfg.crossfit), {}, {}};
  const PlugIn p = semiparametric_plug_in(spec, pattern, out.crossfit, cfg.crossfit);
  PcfModel pcf = PcfModel::poisson();
  bool degenerate = false;
  if (cfg.pcf == PcfMode::known) {
    pcf = cfg.known_pcf;
  } else if (cfg.pcf == PcfMode::estimated) {
    const PcfFit f = estimate_pcf(PointPattern(pattern.window(), pattern.points()), p.lambda_at_data());
    pcf = f.model;
    degenerate = f.degenerate;
  }
  const Mat S = sensitivity_hat(p.gradients.grad, p.gradients.lambda, p.quad.weights());
  const Mat Sigma = covariance_hat(p.gradients.grad, p.gradients.lambda, p.quad, pcf);
  out.report = wald_report(out.crossfit.theta_hat, S, Sigma, spec.window().area(), cfg.levels);
  out.report.pcf = pcf;
  out.report.diagnostics.pcf_degenerate = degenerate;
  out.report.diagnostics.folds = out.crossfit.folds;
  out.report.diagnostics.clip_count = out.crossfit.clip_count();

  if (spec.q() == 1 && cfg.eta_points >= 2) {
    const GridField& z = spec.nuisance_fields().front();
    const double lo = z.min(), hi = z.max();
    Vec zq(1);
    for (std::size_t i = 0; i < cfg.eta_points; ++i) {
      zq[0] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.eta_points - 1);
      out.eta_z.push_back(zq[0]);
      out.eta_values.push_back(out.crossfit.eta_hat(zq));
    }
  }
  return out;
}

inline GridField load_grid(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw error(errc::parse_error, "cannot open " + path);
  return read_grid(is, path);
}

inline PointPattern load_pattern(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw error(errc::parse_error, "cannot open " + path);
  return read_pattern(is, path);
}

//! File-based pipeline: pattern file, one grid per target and nuisance
//! covariate, optional JSON config (empty path for defaults).
inline FitResult fit_file(const std::string& pattern_path, const std::vector<std::string>& y_paths,
                          const std::vector<std::string>& z_paths, const std::string& config_path) {
  if (y_paths.empty() || z_paths.empty()) {
    throw error(errc::invalid_argument, "need at least one target and one nuisance grid");
  }
  const FitConfig cfg = config_path.empty() ? FitConfig{} : parse_fit_config(read_json_file(config_path));
  const PointPattern pattern = load_pattern(pattern_path);
  std::vector<GridField> ys, zs;
  for (const auto& p : y_paths) ys.push_back(load_grid(p));
  for (const auto& p : z_paths) zs.push_back(load_grid(p));
  const Window w = ys.front().window();
  for (const auto* set : {&ys, &zs}) {
    for (const auto& g : *set) {
      if (!(g.window() == w)) throw error(errc::window_mismatch, "covariate grids use different windows");
    }
  }
  if (!(pattern.window() == w)) throw error(errc::window_mismatch, "pattern window differs from the grid window");
  if (pattern.empty()) throw error(errc::insufficient_points, "pattern file has no points");
  const ModelSpec spec = ModelSpec::log_linear(std::move(ys), std::move(zs));
  return fit_data(spec, pattern, cfg);
}

inline nlohmann::json to_json(const FitReport& r) {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto mat = [&](const Mat& m) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec(m.row(i).transpose()));
    return rows;
  };
  nlohmann::json j;
  j["theta_hat"] = vec(r.theta_hat);
  j["se"] = vec(r.se);
  j["S_hat"] = mat(r.S_hat);
  j["Sigma_hat"] = mat(r.Sigma_hat);
  for (const auto& c : r.ci) {
    j["ci"].push_back({{"level", c.level}, {"lower", vec(c.lower)}, {"upper", vec(c.upper)}});
  }
  j["pcf"] = {{"family", r.pcf.family == PcfModel::Family::poisson ? "poisson" : "lgcp_exponential"},
              {"sigma2", r.pcf.sigma2}, {"phi", r.pcf.phi}};
  j["area"] = r.area;
  auto& d = j["diagnostics"];
  d["min_eigen_s"] = r.diagnostics.min_eigen_s;
  d["min_eigen_sigma"] = r.diagnostics.min_eigen_sigma;
  d["clip_count"] = r.diagnostics.clip_count;
  d["pcf_degenerate"] = r.diagnostics.pcf_degenerate;
  for (const auto& f : r.diagnostics.folds) {
    nlohmann::json x{{"fold", f.fold}, {"converged", f.converged}, {"train_points", f.train_points},
                     {"eval_points", f.eval_points}};
    if (f.converged) {
      x["theta"] = vec(f.theta);
      x["iterations"] = f.optimizer.iterations;
    } else {
      x["failure"] = f.failure;
    }
    d["folds"].push_back(x);
  }
  return j;
}

//! Writes `<prefix>_summary.csv`, `<prefix>_summary.jsonl` and `<prefix>_eta.csv`.
inline void write_fit_outputs(const FitResult& f, const std::string& prefix) {
  std::ofstream csv(prefix + "_summary.csv");
  std::ofstream jl(prefix + "_summary.jsonl");
  std::ofstream eta(prefix + "_eta.csv");
  if (!csv || !jl || !eta) throw error(errc::invalid_argument, "cannot write outputs under " + prefix);
  std::vector<std::string> head{"parameter", "estimate", "se"};
  for (const auto& c : f.report.ci) {
    const std::string pct = format_real(100.0 * c.level);
    head.push_back("lower" + pct);
    head.push_back("upper" + pct);
  }
  csv << join_csv(head) << '\n';
  for (Eigen::Index i = 0; i < f.report.theta_hat.size(); ++i) {
    std::vector<std::string> cells{"theta" + std::to_string(i + 1), format_real(f.report.theta_hat[i]),
                                   format_real(f.report.se[i])};
    for (const auto& c : f.report.ci) {
      cells.push_back(format_real(c.lower[i]));
      cells.push_back(format_real(c.upper[i]));
    }
    csv << join_csv(cells) << '\n';
  }
  jl << to_json(f.report).dump() << '\n';
  eta << "z,eta_hat\n";
  for (std::size_t i = 0; i < f.eta_z.size(); ++i) {
    eta << format_real(f.eta_z[i]) << ',' << format_real(f.eta_values[i]) << '\n';
  }
}

} // namespace ppcf
