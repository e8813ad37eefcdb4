#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "support.hpp"

using namespace ppcf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ppcf_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Scenario quick(int reps) {
  Scenario s;
  s.reps = reps;
  s.fit.grid_n = 48;
  return s;
}

} // namespace

TEST(Summarize, SingleReplication) {
  Scenario s = quick(1);
  const ScenarioResult r = run_scenario(s);
  ASSERT_EQ(r.records.size(), 1u);
  const EstimateRecord& e = r.records[0].estimates[0];
  ASSERT_TRUE(e.ok) << e.failure;
  const TableRow& row = r.rows[0];
  EXPECT_EQ(row.reps_converged, 1);
  EXPECT_DOUBLE_EQ(row.bias_x100, 100.0 * (e.theta - 0.3));
  EXPECT_DOUBLE_EQ(row.rmse, std::abs(e.theta - 0.3));
  EXPECT_DOUBLE_EQ(row.mean_se, e.se);
  EXPECT_EQ(row.cp95, e.hit95 ? 100.0 : 0.0);
  EXPECT_EQ(r.records[0].seed, s.base_seed);
}

TEST(Summarize, RowInvariants) {
  Scenario s = quick(12);
  s.estimators = {Estimator::semi, Estimator::para, Estimator::oracle};
  const ScenarioResult r = run_scenario(s);
  ASSERT_EQ(r.rows.size(), 3u);
  for (const TableRow& row : r.rows) {
    EXPECT_GE(row.rmse, std::abs(row.bias_x100) / 100.0 - 1e-15);
    for (double cp : {row.cp90, row.cp95}) {
      EXPECT_GE(cp, 0.0);
      EXPECT_LE(cp, 100.0);
    }
    EXPECT_LE(row.cp90, row.cp95);
    EXPECT_GT(row.mean_se, 0.0);
    EXPECT_FALSE(row.mean_se_star.has_value());
  }
  for (std::size_t i = 0; i < r.records.size(); ++i) EXPECT_EQ(r.records[i].seed, s.base_seed + i);
}

TEST(RunIndexed, IndependentOfThreadCount) {
  Scenario s = quick(6);
  const ScenarioResult a = run_scenario(s, 1), b = run_scenario(s, 8);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(to_json(a.records[i]).dump(), to_json(b.records[i]).dump());
  EXPECT_EQ(join_csv(table_cells(2, s, a.rows[0])), join_csv(table_cells(2, s, b.rows[0])));
  const std::vector<int> sq = run_indexed<int>(100, 7, [](int i) { return i * i; });
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sq[i], i * i);
}

TEST(Csv, RealRoundTrip) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = g(rng) * std::pow(10.0, i % 20 - 10);
    EXPECT_EQ(parse_real(format_real(v)), v);
  }
  EXPECT_TRUE(std::isnan(parse_real(format_real(std::nan("")))));
  EXPECT_THROW(parse_real("1.5x"), error);
}

TEST(Tables, ShapesAtOneReplication) {
  const fs::path d = scratch("tables");
  Scenario base;
  base.reps = 1;
  base.fit.grid_n = 0;
  for (int id : {2, 3, 4}) {
    const std::string out = (d / ("t" + std::to_string(id) + ".csv")).string();
    run_table(id, base, 1, out);
    std::ifstream is(out);
    const auto rows = read_csv(is);
    const std::size_t width = table_header(id).size();
    ASSERT_EQ(rows.size(), id == 4 ? 13u : 9u) << id;
    EXPECT_EQ(rows[0], table_header(id));
    for (std::size_t i = 1; i < rows.size(); ++i) {
      ASSERT_EQ(rows[i].size(), width);
      EXPECT_EQ(rows[i].back(), "1") << "table " << id << " row " << i;
      if (id == 3) {
        for (const char* col : {"mean_se_star", "cp90_star", "cp95_star"}) {
          const auto at = std::find(rows[0].begin(), rows[0].end(), col) - rows[0].begin();
          EXPECT_FALSE(std::isnan(parse_real(rows[i][at]))) << col;
        }
      }
    }
    std::ifstream jl(out + ".jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(jl, line)) {
      EXPECT_TRUE(nlohmann::json::parse(line).contains("rep"));
      ++n;
    }
    EXPECT_EQ(n, rows.size() - 1 - (id == 4 ? 8 : 0));
  }
  EXPECT_THROW(table_scenarios(5, base), error);
}

TEST(FitFile, RoundTripMatchesInMemoryFit) {
  const fs::path d = scratch("fit");
  const auto inst = test::random_instance(91, 2);
  auto put_grid = [&](const GridField& g, const std::string& name) {
    std::ofstream os(d / name);
    write_grid(os, g);
    return (d / name).string();
  };
  {
    std::ofstream os(d / "p.txt");
    write_pattern(os, inst.pattern);
  }
  {
    std::ofstream os(d / "cfg.json");
    os << R"({"folds": 2, "seed": 4, "grid_n": 32})";
  }
  const FitResult file = fit_file((d / "p.txt").string(),
                                  {put_grid(inst.spec.target_fields()[0], "y1.txt"), put_grid(inst.spec.target_fields()[1], "y2.txt")},
                                  {put_grid(inst.spec.nuisance_fields()[0], "z.txt")}, (d / "cfg.json").string());
  FitConfig cfg;
  cfg.crossfit.seed = 4;
  cfg.crossfit.grid_n = 32;
  const FitResult mem = fit_data(inst.spec, inst.pattern, cfg);
  EXPECT_EQ(file.report.theta_hat, mem.report.theta_hat);
  EXPECT_EQ(file.report.se, mem.report.se);

  write_fit_outputs(file, (d / "out").string());
  std::ifstream csv(d / "out_summary.csv");
  EXPECT_EQ(read_csv(csv).size(), 3u);
  EXPECT_TRUE(fs::exists(d / "out_eta.csv"));
  EXPECT_TRUE(fs::exists(d / "out_summary.jsonl"));
}

TEST(FitFile, Guards) {
  const fs::path d = scratch("guards");
  const auto inst = test::random_instance(92);
  {
    std::ofstream os(d / "y.txt");
    write_grid(os, inst.spec.target_fields()[0]);
    std::ofstream oz(d / "z.txt");
    write_grid(oz, inst.spec.nuisance_fields()[0]);
    std::ofstream oe(d / "empty.txt");
    write_pattern(oe, PointPattern(inst.spec.window()));
    std::ofstream ow(d / "w2.txt");
    write_pattern(ow, PointPattern(square_window(2), {{1.5, 1.5}}));
    std::ofstream ob(d / "bad.json");
    ob << R"({"folds": "two"})";
  }
  auto code_of = [&](const std::string& pattern, const std::string& cfg) {
    try {
      fit_file((d / pattern).string(), {(d / "y.txt").string()}, {(d / "z.txt").string()}, cfg.empty() ? "" : (d / cfg).string());
    } catch (const error& e) {
      return e.code();
    }
    return errc::invalid_argument;
  };
  EXPECT_EQ(code_of("empty.txt", ""), errc::insufficient_points);
  EXPECT_EQ(code_of("w2.txt", ""), errc::window_mismatch);
  EXPECT_EQ(code_of("empty.txt", "bad.json"), errc::parse_error);
  EXPECT_EQ(code_of("empty.txt", "missing.json"), errc::parse_error);
}

TEST(FitConfig, ParsesKnownKeys) {
  const FitConfig f = parse_fit_config(nlohmann::json::parse(
      R"({"folds": 3, "bandwidth": 0.4, "kernel_order": 4, "approximation": "logistic", "pcf": {"sigma2": 0.2, "phi": 0.1}})"));
  EXPECT_EQ(f.crossfit.folds, 3);
  EXPECT_EQ(f.crossfit.bandwidth.value(), 0.4);
  EXPECT_EQ(f.crossfit.kernel_order, 4);
  EXPECT_EQ(f.crossfit.approximation, Approximation::logistic);
  EXPECT_EQ(f.pcf, PcfMode::known);
  EXPECT_DOUBLE_EQ(f.known_pcf.phi, 0.1);
  EXPECT_THROW(parse_fit_config(nlohmann::json::parse(R"({"pcf": "known"})")), error);
}

TEST(Scenario, InfeasibleWhenMostRepsFail) {
  Scenario s = quick(4);
  s.fit.kernel_order = 4;
  s.fit.bandwidth = 1e-6;
  try {
    run_scenario(s);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::scenario_infeasible);
  }
}

TEST(Scenario, ParsersRejectUnknownNames) {
  EXPECT_EQ(parse_process("lgcp"), ProcessKind::lgcp);
  EXPECT_THROW(parse_process("cox"), error);
  EXPECT_EQ(parse_nuisance("poly"), NuisanceKind::poly);
  EXPECT_THROW(parse_covariates("x"), error);
}
