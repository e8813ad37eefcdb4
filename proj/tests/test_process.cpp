#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace ppcf;
using ppcf::test::moments;

TEST(PointPattern, RejectsOutsidePoints) {
  EXPECT_THROW(PointPattern(square_window(1), {{0.5, 1.5}}), error);
  EXPECT_NO_THROW(PointPattern(square_window(1), {{0.0, 1.0}, {1.0, 0.0}}));  // closed boundary
}

TEST(SimulatePoisson, HomogeneousMeanCount) {
  const auto s = IntensitySurface::constant(square_window(1), 100.0);
  std::vector<double> n;
  for (int r = 0; r < 1000; ++r) {
    const PointPattern p = simulate_poisson(s, r);
    for (const auto& q : p.points()) ASSERT_TRUE(p.window().contains(q.x, q.y));
    n.push_back(static_cast<double>(p.count()));
  }
  EXPECT_LE(std::abs(moments(n).mean - 100.0), 3 * std::sqrt(100.0 / 1000.0));
}

TEST(SimulatePoisson, ZeroIntensityIsEmpty) {
  EXPECT_TRUE(simulate_poisson(IntensitySurface::constant(square_window(1), 0.0), 3).empty());
}

TEST(SimulatePoisson, BoundViolationIsAnError) {
  IntensitySurface s{square_window(1), [](double x, double) { return 100.0 * (1.0 + x); }, 150.0};
  try {
    simulate_poisson(s, 1);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::bound_violation);
  }
}

// E N(A) = integral of lambda, the integral taken on a 512 x 512 midpoint lattice
TEST(SimulatePoisson, InhomogeneousMeanMatchesLatticeIntegral) {
  const Window w = square_window(1);
  const GrfSpec grf{1.0, 0.05, 0.0};
  const GridField y = simulate_grf(w, 129, 129, grf, 31), z = simulate_grf(w, 129, 129, grf, 32);
  auto lam = [&](double a, double b) { return 400.0 * std::exp(0.3 * y(a, b) + 0.3 * z(a, b)); };
  double integral = 0.0;
  const int g = 512;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) integral += lam((i + 0.5) / g, (j + 0.5) / g);
  }
  integral /= g * g;
  const auto surface = IntensitySurface::from_lattice_max(w, lam, 513, 513);
  std::vector<double> n;
  for (int r = 0; r < 500; ++r) n.push_back(static_cast<double>(simulate_poisson(surface, 100 + r).count()));
  const auto m = moments(n);
  EXPECT_LE(std::abs(m.mean - integral), 3 * m.se()) << m.mean << " vs " << integral;
}

TEST(SimulateLgcp, ZeroVarianceRejected) {
  EXPECT_THROW(simulate_lgcp(IntensitySurface::constant(square_window(1), 400), GrfSpec{0.0, 0.2, 0.0}, 33, 33, 1), error);
}

namespace {
// Lattice-corrected E exp(G(u)) for the bilinear interpolant of a lattice
// field: Var G(u) = sum a_i a_j C(d_ij) over the cell corners, averaged over
// the (stationary) cell.
double interpolated_lognormal_mean(const GrfSpec& g, double spacing) {
  const int sub = 64;
  double acc = 0.0;
  for (int i = 0; i < sub; ++i) {
    for (int j = 0; j < sub; ++j) {
      const double tx = (i + 0.5) / sub, ty = (j + 0.5) / sub;
      const double a[4] = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
      const double px[4] = {0, 1, 0, 1}, py[4] = {0, 0, 1, 1};
      double var = 0.0;
      for (int p = 0; p < 4; ++p) {
        for (int q = 0; q < 4; ++q) {
          var += a[p] * a[q] * g.covariance(spacing * std::hypot(px[p] - px[q], py[p] - py[q]));
        }
      }
      acc += std::exp(0.5 * var);
    }
  }
  return acc / (sub * sub);
}

test::Moments lgcp_counts(LgcpOffset mode) {
  const auto base = IntensitySurface::constant(square_window(1), 400.0);
  std::vector<double> n;
  for (int r = 0; r < 500; ++r) {
    n.push_back(static_cast<double>(simulate_lgcp(base, GrfSpec{0.2, 0.2, 0.0}, 129, 129, 700 + r, mode).count()));
  }
  return moments(n);
}
} // namespace

TEST(SimulateLgcp, MeanCountLognormalOracle) {
  const GrfSpec g{0.2, 0.2, 0.0};
  const double corr = interpolated_lognormal_mean(g, 1.0 / 128);
  const auto m = lgcp_counts(LgcpOffset::mean_one);
  const double expect = 400.0 * corr * std::exp(-0.5 * g.variance);
  EXPECT_LE(std::abs(m.mean - expect), 3 * m.se()) << m.mean << " vs " << expect;
}

TEST(SimulateLgcp, PrintedOffsetMeanCount) {
  const GrfSpec g{0.2, 0.2, 0.0};
  const double corr = interpolated_lognormal_mean(g, 1.0 / 128);
  const auto m = lgcp_counts(LgcpOffset::printed);
  const double expect = 400.0 * corr * std::exp(-2.0 / g.variance);  // about 0.02 points
  EXPECT_LE(std::abs(m.mean - expect), 3 * std::max(m.se(), std::sqrt(expect / 500)));
}

TEST(SimulateCox, ConstantLatentShiftsIntensityExactly) {
  const Window w = square_window(1);
  const auto base = IntensitySurface::constant(w, 400.0);
  const double c = 0.7, offset = lgcp_offset(0.2, LgcpOffset::printed);
  const GridField latent = GridField::constant(w, 33, 33, c);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const PointPattern cox = simulate_cox(base, latent, offset, seed);
    const PointPattern pois = simulate_poisson(IntensitySurface::constant(w, 400.0 * std::exp(c - offset)), seed);
    EXPECT_EQ(cox, pois);
  }
}

TEST(VFoldThin, PartitionsThePattern) {
  const PointPattern p = simulate_poisson(IntensitySurface::constant(square_window(1), 300), 4);
  for (int V : {2, 3, 5}) {
    const PointPattern t = v_fold_thin(p, V, 9);
    EXPECT_EQ(t.fold_count(), V);
    std::size_t total = 0;
    for (int v = 1; v <= V; ++v) {
      total += fold(t, v).count();
      EXPECT_EQ(fold(t, v).count() + fold_complement(t, v).count(), p.count());
    }
    EXPECT_EQ(total, p.count());
  }
  const PointPattern t2 = v_fold_thin(p, 2, 1);
  EXPECT_EQ(fold_complement(t2, 1), fold(t2, 2));
}

TEST(VFoldThin, Guards) {
  const PointPattern p = simulate_poisson(IntensitySurface::constant(square_window(1), 50), 4);
  try {
    v_fold_thin(p, 1, 0);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::invalid_folds);
  }
  try {
    fold(p, 1);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::unmarked_pattern);
  }
  EXPECT_THROW(fold(v_fold_thin(p, 2, 0), 3), error);
}

TEST(VFoldThin, FoldAndComplementIntensities) {
  const auto s = IntensitySurface::constant(square_window(1), 100.0);
  std::vector<double> f1, c1;
  for (int r = 0; r < 1000; ++r) {
    const PointPattern t = v_fold_thin(simulate_poisson(s, 5000 + r), 4, r);
    f1.push_back(static_cast<double>(fold(t, 1).count()));
    c1.push_back(static_cast<double>(fold_complement(t, 1).count()));
  }
  const auto mf = moments(f1), mc = moments(c1);
  EXPECT_LE(std::abs(mf.mean - 25.0), 3 * mf.se());
  EXPECT_LE(std::abs(mc.mean - 75.0), 3 * mc.se());
}

// Poisson input: thinned folds are independent, so counts are uncorrelated
TEST(VFoldThin, TwoFoldCountsUncorrelated) {
  const auto s = IntensitySurface::constant(square_window(1), 100.0);
  std::vector<double> a, b;
  for (int r = 0; r < 1000; ++r) {
    const PointPattern t = v_fold_thin(simulate_poisson(s, 9000 + r), 2, r);
    a.push_back(static_cast<double>(fold(t, 1).count()));
    b.push_back(static_cast<double>(fold(t, 2).count()));
  }
  EXPECT_LE(std::abs(test::correlation(a, b)), 3.0 / std::sqrt(1000.0));
}

TEST(CampbellSum, TrivialFunctions) {
  const PointPattern p = simulate_poisson(IntensitySurface::constant(square_window(1), 80), 2);
  EXPECT_EQ(campbell_sum(p, [](double, double) { return 1.0; }), static_cast<double>(p.count()));
  EXPECT_EQ(campbell_sum(p, [](double, double) { return 0.0; }), 0.0);
}

TEST(CampbellSum, FirstMomentOracle) {
  const auto s = IntensitySurface::constant(square_window(1), 50.0);
  std::vector<double> v;
  for (int r = 0; r < 1000; ++r) v.push_back(campbell_sum(simulate_poisson(s, 300 + r), [](double x, double) { return x; }));
  const auto m = moments(v);
  EXPECT_LE(std::abs(m.mean - 25.0), 3 * m.se());
}

TEST(PatternIo, RoundTripWithFolds) {
  const PointPattern p = v_fold_thin(simulate_poisson(IntensitySurface::constant(make_window(0, 0, 2, 1), 40), 8), 3, 2);
  std::stringstream ss;
  write_pattern(ss, p);
  EXPECT_EQ(read_pattern(ss), p);
  std::stringstream plain;
  const PointPattern q(p.window(), p.points());
  write_pattern(plain, q);
  EXPECT_EQ(read_pattern(plain), q);
}

TEST(PatternIo, ParseErrors) {
  auto code_of = [](const std::string& text) {
    std::stringstream ss(text);
    try {
      read_pattern(ss, "p.txt");
    } catch (const error& e) {
      return std::make_pair(e.code(), std::string(e.what()));
    }
    return std::make_pair(errc::invalid_argument, std::string("no error"));
  };
  EXPECT_EQ(code_of("").first, errc::parse_error);
  EXPECT_EQ(code_of("0 0 1 1 2\n0.5 0.5\n").first, errc::parse_error);
  auto [c, msg] = code_of("0 0 1 1 2\n0.5 0.5\n1.5 0.5\n");
  EXPECT_EQ(c, errc::parse_error);
  EXPECT_NE(msg.find("p.txt:3"), std::string::npos) << msg;
  EXPECT_EQ(code_of("0 0 1 1 2\n0.5 0.5 1\n0.2 0.2\n").first, errc::parse_error);
  EXPECT_EQ(code_of("0 0 1 1 1\n0.5 abc\n").first, errc::parse_error);
  std::stringstream empty("0 0 1 1 0\n");
  EXPECT_TRUE(read_pattern(empty).empty());
}
