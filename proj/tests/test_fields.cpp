#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace ppcf;
using ppcf::test::moments;

TEST(Window, Areas) {
  EXPECT_DOUBLE_EQ(make_window(0, 0, 1, 1).area(), 1.0);
  EXPECT_DOUBLE_EQ(make_window(0, 0, 2, 2).area(), 4.0);
  EXPECT_DOUBLE_EQ(make_window(0, 0, 1, 0.5).area(), 0.5);
}

TEST(Window, DegenerateSidesRejected) {
  try {
    make_window(0, 0, 0, 1);
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::degenerate_window);
  }
  EXPECT_THROW(make_window(0, 1, 1, 1), error);
  EXPECT_THROW(make_window(1, 0, 0, 1), error);
}

TEST(GridField, NodesExactAndInteriorBilinear) {
  const Window w = make_window(0, 0, 2, 1);
  const GridField f = test::sample_field(w, 9, [](double x, double y) { return std::sin(3 * x) + y * y; });
  for (std::size_t iy = 0; iy < f.ny(); ++iy) {
    for (std::size_t ix = 0; ix < f.nx(); ++ix) EXPECT_EQ(f(f.node_x(ix), f.node_y(iy)), f.at(ix, iy));
  }
  // bilinear in a cell: centre is the mean of the four corners
  const double cx = 0.5 * (f.node_x(2) + f.node_x(3)), cy = 0.5 * (f.node_y(4) + f.node_y(5));
  const double expect = 0.25 * (f.at(2, 4) + f.at(3, 4) + f.at(2, 5) + f.at(3, 5));
  EXPECT_NEAR(f(cx, cy), expect, 1e-14);
  EXPECT_TRUE(std::isfinite(f(1.2345, 0.777)));
}

TEST(GridField, MismatchedValueCount) {
  try {
    GridField(square_window(1), 3, 3, std::vector<double>(8, 0.0));
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::mismatched_lattice);
  }
}

TEST(Grf, ZeroVarianceIsConstant) {
  const GridField f = simulate_grf(square_window(1), 16, 16, GrfSpec{0.0, 0.05, 3.0}, 7);
  for (double v : f.values()) EXPECT_EQ(v, 3.0);
}

TEST(Grf, Deterministic) {
  const GrfSpec s{1.0, 0.05, 0.0};
  EXPECT_EQ(simulate_grf(square_window(1), 40, 40, s, 11).values(), simulate_grf(square_window(1), 40, 40, s, 11).values());
  EXPECT_NE(simulate_grf(square_window(1), 40, 40, s, 11).values(), simulate_grf(square_window(1), 40, 40, s, 12).values());
}

// pooled moments over 500 fields; per-field averages are iid across seeds
TEST(Grf, MonteCarloMeanAndVariance) {
  const GrfSpec s{1.0, 0.05, 0.0};
  std::vector<double> means, sq;
  for (int r = 0; r < 500; ++r) {
    const GridField f = simulate_grf(square_window(1), 64, 64, s, 1000 + r);
    double a = 0.0, b = 0.0;
    for (double v : f.values()) {
      a += v;
      b += v * v;
    }
    means.push_back(a / f.values().size());
    sq.push_back(b / f.values().size());
  }
  const auto m = moments(means), v = moments(sq);
  EXPECT_LE(std::abs(m.mean), 3 * m.se());
  EXPECT_LE(std::abs(v.mean - 1.0), 3 * v.se());
}

namespace {
// mean of f(ix, iy) f(ix + lag, iy) over a field, then over seeds
test::Moments lag_covariance(std::size_t n, std::size_t lag, std::uint64_t seed0) {
  const GrfSpec s{1.0, 0.05, 0.0};
  std::vector<double> est;
  for (int r = 0; r < 500; ++r) {
    const GridField f = simulate_grf(square_window(1), n, n, s, seed0 + r);
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t iy = 0; iy < n; ++iy) {
      for (std::size_t ix = 0; ix + lag < n; ++ix, ++cnt) acc += f.at(ix, iy) * f.at(ix + lag, iy);
    }
    est.push_back(acc / cnt);
  }
  return moments(est);
}
} // namespace

TEST(Grf, CovarianceAtRangeCirculant) {
  const auto m = lag_covariance(61, 3, 5000);  // spacing 1/60, lag 0.05
  EXPECT_LE(std::abs(m.mean - std::exp(-1.0)), 3 * m.se());
}

TEST(Grf, CovarianceAtRangeCholesky) {
  const auto m = lag_covariance(21, 1, 9000);  // 441 nodes, spacing 0.05
  EXPECT_LE(std::abs(m.mean - std::exp(-1.0)), 3 * m.se());
}

TEST(Grf, InvalidSpec) {
  EXPECT_THROW(simulate_grf(square_window(1), 8, 8, GrfSpec{-1.0, 0.05, 0.0}, 1), error);
  EXPECT_THROW(simulate_grf(square_window(1), 8, 8, GrfSpec{1.0, 0.0, 0.0}, 1), error);
  EXPECT_THROW(simulate_grf(square_window(1), 1, 8, GrfSpec{1.0, 0.1, 0.0}, 1), error);
}

TEST(FieldProduct, Constants) {
  const Window w = square_window(1);
  const GridField a = GridField::constant(w, 5, 5, 2.0), b = GridField::constant(w, 5, 5, 3.0);
  const GridField ab = field_product(a, b);
  for (double v : ab.values()) EXPECT_EQ(v, 6.0);
  const GridField g = simulate_grf(w, 5, 5, GrfSpec{}, 3);
  const GridField g0 = field_product(g, GridField::constant(w, 5, 5, 0.0));
  for (double v : g0.values()) EXPECT_EQ(std::abs(v), 0.0);
}

TEST(FieldProduct, MatchesElementwiseProduct) {
  const Window w = square_window(1);
  const GridField a = simulate_grf(w, 129, 129, GrfSpec{}, 21), b = simulate_grf(w, 129, 129, GrfSpec{}, 22);
  const GridField p = field_product(a, b);
  for (std::size_t i = 0; i < p.values().size(); ++i) EXPECT_EQ(p.values()[i], a.values()[i] * b.values()[i]);
}

TEST(FieldProduct, LatticeMismatch) {
  const Window w = square_window(1);
  try {
    field_product(GridField::constant(w, 5, 5, 1.0), GridField::constant(w, 6, 5, 1.0));
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::mismatched_lattice);
  }
}

TEST(ApplyPointwise, NuisanceShapes) {
  const Window w = square_window(1);
  const GridField lin = apply_pointwise(GridField::constant(w, 4, 4, 1.0), [](double z) { return 0.3 * z; });
  for (double v : lin.values()) EXPECT_DOUBLE_EQ(v, 0.3);
  const GridField poly = apply_pointwise(GridField::constant(w, 4, 4, 2.0), [](double z) { return -0.09 * z * z; });
  for (double v : poly.values()) EXPECT_DOUBLE_EQ(v, -0.36);
  const GridField g = simulate_grf(w, 9, 9, GrfSpec{}, 5);
  EXPECT_EQ(apply_pointwise(g, [](double z) { return z; }).values(), g.values());
}

TEST(ApplyPointwise, NonFiniteRejected) {
  try {
    apply_pointwise(GridField::constant(square_window(1), 4, 4, 0.0), [](double z) { return std::log(z); });
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::non_finite_output);
  }
}

TEST(GridIo, RoundTripIsExact) {
  const GridField g = simulate_grf(make_window(-1, 0.5, 2, 3), 17, 11, GrfSpec{2.0, 0.3, 1.0}, 9);
  std::stringstream ss;
  write_grid(ss, g);
  const GridField back = read_grid(ss);
  EXPECT_TRUE(back.same_lattice(g));
  EXPECT_EQ(back.values(), g.values());
}

TEST(GridIo, ParseErrorsCarryLineNumbers) {
  std::stringstream ss("2 2 0 0 1 1\n1 2\n3 x\n");
  try {
    read_grid(ss, "g.txt");
    FAIL();
  } catch (const error& e) {
    EXPECT_EQ(e.code(), errc::parse_error);
    EXPECT_NE(std::string(e.what()).find("g.txt:3"), std::string::npos) << e.what();
  }
  std::stringstream trailing("2 2 0 0 1 1\n1 2 3 4 5\n");
  EXPECT_THROW(read_grid(trailing), error);
  std::stringstream degenerate("2 2 0 0 0 1\n1 2 3 4\n");
  EXPECT_THROW(read_grid(degenerate), error);
}
