#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace ppcf;

namespace {

Vec vec1(double v) { return Vec::Constant(1, v); }

CrossFitConfig small_config(std::uint64_t seed = 1) {
  CrossFitConfig c;
  c.seed = seed;
  c.grid_n = 32;
  return c;
}

} // namespace

TEST(CrossFit, FoldsPartitionThePattern) {
  const auto inst = test::random_instance(71);
  for (int V : {2, 3}) {
    CrossFitConfig c = small_config();
    c.folds = V;
    const CrossFitResult r = cross_fit(inst.spec, inst.pattern, c);
    ASSERT_EQ(r.folds.size(), static_cast<std::size_t>(V));
    std::size_t eval = 0;
    for (const auto& f : r.folds) {
      EXPECT_TRUE(f.converged) << f.failure;
      EXPECT_EQ(f.train_points + f.eval_points, inst.pattern.count());
      eval += f.eval_points;
    }
    EXPECT_EQ(eval, inst.pattern.count());
    EXPECT_EQ(r.converged_folds(), static_cast<std::size_t>(V));
    Vec mean = Vec::Zero(1);
    for (const auto& f : r.folds) mean += f.theta;
    EXPECT_LE((r.theta_hat - mean / V).norm(), 1e-15);
  }
}

// every point duplicated across the two folds: fold 1 and its complement are
// the same point set, so both fold fits coincide
TEST(CrossFit, DuplicatedFoldsAreSymmetric) {
  const auto inst = test::random_instance(72);
  std::vector<Point> pts = inst.pattern.points();
  std::vector<int> labels(pts.size(), 1);
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) {
    pts.push_back(pts[i]);
    labels.push_back(2);
  }
  const PointPattern doubled(inst.pattern.window(), pts, labels, 2);
  CrossFitConfig c = small_config();
  c.use_pattern_folds = true;
  const CrossFitResult r = cross_fit(inst.spec, doubled, c);
  ASSERT_EQ(r.converged_folds(), 2u);
  EXPECT_EQ(r.folds[0].theta, r.folds[1].theta);
  EXPECT_EQ(r.theta_hat, r.folds[0].theta);
}

TEST(CrossFit, Guards) {
  const auto inst = test::random_instance(73);
  auto code_of = [&](const ModelSpec& spec, const PointPattern& p, const CrossFitConfig& c) {
    try {
      cross_fit(spec, p, c);
    } catch (const error& e) {
      return e.code();
    }
    return errc::invalid_argument;
  };
  CrossFitConfig c = small_config();
  c.folds = 1;
  EXPECT_EQ(code_of(inst.spec, inst.pattern, c), errc::invalid_folds);
  EXPECT_EQ(code_of(inst.spec, PointPattern(inst.pattern.window()), small_config()), errc::insufficient_points);
  EXPECT_EQ(code_of(inst.spec, PointPattern(square_window(2), {{1.5, 1.5}}), small_config()), errc::window_mismatch);
  CrossFitConfig u = small_config();
  u.use_pattern_folds = true;
  EXPECT_EQ(code_of(inst.spec, inst.pattern, u), errc::unmarked_pattern);

  TauFunctions tau{[](const Vec& th, const Vec& y) { return th.dot(y); }, [](const Vec&, const Vec& y) { return Vec(y); },
                   [](const Vec& th, const Vec&) { return Mat(Mat::Zero(th.size(), th.size())); }};
  const ModelSpec general = ModelSpec::general(inst.spec.target_fields(), inst.spec.nuisance_fields(), tau,
                                               [](double t, double e) {
                                                 const double v = std::exp(t + e);
                                                 return PsiValues{v, v, v, v, v, v};
                                               });
  CrossFitConfig s = small_config();
  s.skip_thinning = true;
  EXPECT_THROW(cross_fit(general, inst.pattern, s), error);
  EXPECT_NO_THROW(cross_fit(inst.spec, inst.pattern, s));
}

TEST(CrossFit, DeterministicGivenSeed) {
  const auto inst = test::random_instance(74, 2);
  const CrossFitResult a = cross_fit(inst.spec, inst.pattern, small_config(5));
  const CrossFitResult b = cross_fit(inst.spec, inst.pattern, small_config(5));
  const CrossFitResult c = cross_fit(inst.spec, inst.pattern, small_config(6));
  EXPECT_EQ(a.theta_hat, b.theta_hat);
  EXPECT_NE(a.theta_hat, c.theta_hat);
  EXPECT_EQ(a.eta_hat(vec1(0.2)), b.eta_hat(vec1(0.2)));
}

// eta_hat = log(N / (s D)): replacing (V-1)/V by V/(V-1) moves it by 2 log((V-1)/V)
TEST(CrossFit, InverseComplementScaleShift) {
  const auto inst = test::random_instance(75);
  for (int V : {2, 3}) {
    CrossFitConfig c = small_config();
    c.folds = V;
    const CrossFitResult a = cross_fit(inst.spec, inst.pattern, c);
    c.inverse_complement_scale = true;
    const CrossFitResult b = cross_fit(inst.spec, inst.pattern, c);
    const double shift = 2.0 * std::log((V - 1.0) / V);
    for (std::size_t f = 0; f < a.fold_fits().size(); ++f) {
      for (double z : {-1.0, 0.0, 1.0}) {
        const double ea = a.fold_fits()[f]->fit_eta(vec1(0.3), vec1(z));
        const double eb = b.fold_fits()[f]->fit_eta(vec1(0.3), vec1(z));
        EXPECT_NEAR(eb - ea, shift, 1e-10);
      }
    }
  }
}

TEST(CrossFit, EtaHatAveragesFoldCurves) {
  const auto inst = test::random_instance(76);
  const CrossFitResult r = cross_fit(inst.spec, inst.pattern, small_config());
  for (double z : {-1.2, 0.0, 0.9}) {
    double mean = 0.0;
    for (const auto& f : r.fold_fits()) mean += f->fit_eta(r.theta_hat, vec1(z));
    mean /= static_cast<double>(r.fold_fits().size());
    EXPECT_NEAR(r.eta_hat(vec1(z)), mean, 1e-3);
  }
}

TEST(CrossFit, UnitWindowReplicationAccuracy) {
  Scenario s;
  s.window = 1;
  s.reps = 200;
  const TableRow row = run_scenario(s).rows.front();
  EXPECT_EQ(row.reps_converged, 200);
  EXPECT_LE(std::abs(row.bias_x100), 1.0);
  EXPECT_GE(row.rmse, 0.5 * 0.0467);
  EXPECT_LE(row.rmse, 1.5 * 0.0467);
  EXPECT_GE(row.mean_se, 0.5 * 0.0459);
  EXPECT_LE(row.mean_se, 1.5 * 0.0459);
}

// on W2 the thinned fit loses little against reusing the full pattern
TEST(CrossFit, ThinningCostOnLargerWindow) {
  Scenario s;
  s.window = 2;
  s.reps = 100;
  const TableRow v2 = run_scenario(s).rows.front();
  s.fit.skip_thinning = true;
  const TableRow full = run_scenario(s).rows.front();
  EXPECT_GE(v2.rmse, 0.012);
  EXPECT_LE(v2.rmse, 0.036);
  EXPECT_LE(std::abs(v2.rmse - full.rmse), 0.25 * full.rmse) << v2.rmse << " vs " << full.rmse;
}
