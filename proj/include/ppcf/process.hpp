#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "ppcf/error.hpp"
#include "ppcf/fields.hpp"
#include "ppcf/random.hpp"

namespace ppcf {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

//! Finite point configuration in a closed window, optionally carrying fold
//! labels in 1..V produced by random thinning.
class PointPattern {
public:
  PointPattern() = default;

  explicit PointPattern(Window window, std::vector<Point> points = {},
                        std::vector<int> folds = {}, int fold_count = 0)
    : window_(window), points_(std::move(points)), folds_(std::move(folds)),
      fold_count_(fold_count) {
    for (const auto& p : points_) {
      if (!window_.contains(p.x, p.y)) {
        throw error(errc::invalid_argument, "point (" + std::to_string(p.x) + ", " +
                                              std::to_string(p.y) + ") lies outside the window");
      }
    }
    if (!folds_.empty()) {
      if (folds_.size() != points_.size()) {
        throw error(errc::invalid_argument, "fold label count does not match point count");
      }
      if (fold_count_ < 1) {
        for (int f : folds_) fold_count_ = std::max(fold_count_, f);
      }
      for (int f : folds_) {
        if (f < 1 || f > fold_count_) throw error(errc::invalid_argument, "fold label out of range");
      }
    }
  }

  const Window& window() const { return window_; }
  const std::vector<Point>& points() const { return points_; }
  std::size_t count() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  bool marked() const { return !folds_.empty() || (points_.empty() && fold_count_ > 0); }
  const std::vector<int>& folds() const { return folds_; }
  int fold_count() const { return fold_count_; }

  friend bool operator==(const PointPattern&, const PointPattern&) = default;

private:
  Window window_{};
  std::vector<Point> points_;
  std::vector<int> folds_;
  int fold_count_ = 0;
};

//! Intensity u -> lambda(u) >= 0 with a finite upper bound over its window.
struct IntensitySurface {
  Window window{};
  std::function<double(double, double)> lambda;
  double sup_bound = 0.0;

  double operator()(double x, double y) const { return lambda(x, y); }

  static IntensitySurface constant(const Window& w, double c) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw error(errc::invalid_argument, "constant intensity must be finite and >= 0");
    }
    return {w, [c](double, double) { return c; }, c};
  }

  //! Bound taken as the maximum over an nx-by-ny node lattice times 1.05.
  static IntensitySurface from_lattice_max(const Window& w, std::function<double(double, double)> f,
                                           std::size_t nx, std::size_t ny) {
    double hi = 0.0;
    for (std::size_t iy = 0; iy < ny; ++iy) {
      const double y = w.y_min + w.height() * static_cast<double>(iy) / static_cast<double>(ny - 1);
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const double x = w.x_min + w.width() * static_cast<double>(ix) / static_cast<double>(nx - 1);
        hi = std::max(hi, f(x, y));
      }
    }
    return {w, std::move(f), 1.05 * hi};
  }

  //! lambda = exp(log_field(u)); bilinear interpolation keeps the maximum at
  //! a node, so the bound exp(max) is exact (1.05 retained as safety factor).
  static IntensitySurface from_log_field(GridField log_lambda) {
    const double hi = std::exp(log_lambda.max());
    Window w = log_lambda.window();
    return {w, [f = std::move(log_lambda)](double x, double y) { return std::exp(f(x, y)); },
            1.05 * hi};
  }
};

//! Inhomogeneous Poisson process by thinning a homogeneous one at rate
//! sup_bound. Throws bound_violation if an evaluated lambda exceeds the bound.
inline PointPattern simulate_poisson(const IntensitySurface& surface, std::uint64_t seed) {
  const Window& w = surface.window;
  if (!(surface.sup_bound >= 0.0) || !std::isfinite(surface.sup_bound)) {
    throw error(errc::invalid_argument, "intensity bound must be finite and >= 0");
  }
  std::vector<Point> pts;
  if (surface.sup_bound == 0.0) return PointPattern(w);
  rng_type rng = make_rng(seed);
  std::poisson_distribution<long long> count(surface.sup_bound * w.area());
  std::uniform_real_distribution<double> ux(w.x_min, w.x_max), uy(w.y_min, w.y_max);
  std::uniform_real_distribution<double> accept(0.0, 1.0);
  const long long n = count(rng);
  pts.reserve(static_cast<std::size_t>(n));
  for (long long i = 0; i < n; ++i) {
    const double x = ux(rng), y = uy(rng);
    const double u = accept(rng);
    const double lam = surface(x, y);
    if (!(lam >= 0.0)) throw error(errc::invalid_argument, "intensity is negative or NaN");
    if (lam > surface.sup_bound) {
      throw error(errc::bound_violation, "lambda = " + std::to_string(lam) + " exceeds bound " +
                                           std::to_string(surface.sup_bound));
    }
    if (u * surface.sup_bound < lam) pts.push_back({x, y});
  }
  return PointPattern(w, std::move(pts));
}

//! How the conditional LGCP intensity is offset against the latent field.
enum class LgcpOffset {
  printed,     //!< exp(G - 2 / sigma^2)
  mean_one,    //!< exp(G - sigma^2 / 2), so E exp(G - offset) = 1
};

inline double lgcp_offset(double sigma2, LgcpOffset mode) {
  if (!(sigma2 > 0.0)) throw error(errc::invalid_argument, "LGCP needs a positive field variance");
  return mode == LgcpOffset::printed ? 2.0 / sigma2 : 0.5 * sigma2;
}

//! Cox process with conditional intensity base(u) * exp(latent(u) - offset).
inline PointPattern simulate_cox(const IntensitySurface& base, const GridField& latent,
                                 double offset, std::uint64_t seed) {
  const double scale_hi = std::exp(latent.max() - offset);
  IntensitySurface cond{base.window,
                        [&base, &latent, offset](double x, double y) {
                          return base(x, y) * std::exp(latent(x, y) - offset);
                        },
                        base.sup_bound * scale_hi};
  return simulate_poisson(cond, seed);
}

//! Log-Gaussian Cox process: draws G on an nx-by-ny lattice then a Poisson
//! pattern given base(u) * exp(G(u) - offset).
inline PointPattern simulate_lgcp(const IntensitySurface& base, const GrfSpec& grf,
                                  std::size_t nx, std::size_t ny, std::uint64_t seed,
                                  LgcpOffset mode = LgcpOffset::printed) {
  const double offset = lgcp_offset(grf.variance, mode);
  GridField latent = simulate_grf(base.window, nx, ny, grf, derive_seed(seed, stream::latent_field));
  return simulate_cox(base, latent, offset, derive_seed(seed, stream::pattern));
}

//! Assigns each point an independent uniform label in 1..V.
inline PointPattern v_fold_thin(const PointPattern& pattern, int V, std::uint64_t seed) {
  if (V < 2) throw error(errc::invalid_folds, "V must be >= 2, got " + std::to_string(V));
  rng_type rng = make_rng(derive_seed(seed, stream::thinning));
  std::uniform_int_distribution<int> pick(1, V);
  std::vector<int> labels(pattern.count());
  for (auto& l : labels) l = pick(rng);
  return PointPattern(pattern.window(), pattern.points(), std::move(labels), V);
}

namespace detail {
template <class Keep>
PointPattern select_fold(const PointPattern& pattern, int v, Keep keep) {
  if (!pattern.marked()) throw error(errc::unmarked_pattern, "pattern carries no fold labels");
  if (v < 1 || v > pattern.fold_count()) throw error(errc::invalid_folds, "fold index out of range");
  std::vector<Point> pts;
  for (std::size_t i = 0; i < pattern.count(); ++i) {
    if (keep(pattern.folds()[i])) pts.push_back(pattern.points()[i]);
  }
  return PointPattern(pattern.window(), std::move(pts));
}
} // namespace detail

inline PointPattern fold(const PointPattern& pattern, int v) {
  return detail::select_fold(pattern, v, [v](int f) { return f == v; });
}

inline PointPattern fold_complement(const PointPattern& pattern, int v) {
  return detail::select_fold(pattern, v, [v](int f) { return f != v; });
}

template <class F>
double campbell_sum(const PointPattern& pattern, F&& f) {
  double s = 0.0;
  for (const auto& p : pattern.points()) s += f(p.x, p.y);
  return s;
}

// ---------------------------------------------------------------------------
// Pattern file format: "x_min y_min x_max y_max n" then n lines "x y [fold]".

inline void write_pattern(std::ostream& os, const PointPattern& p) {
  const auto& w = p.window();
  os.precision(17);
  os << w.x_min << ' ' << w.y_min << ' ' << w.x_max << ' ' << w.y_max << ' ' << p.count() << '\n';
  for (std::size_t i = 0; i < p.count(); ++i) {
    os << p.points()[i].x << ' ' << p.points()[i].y;
    if (!p.folds().empty()) os << ' ' << p.folds()[i];
    os << '\n';
  }
}

inline PointPattern read_pattern(std::istream& is, const std::string& source = "pattern") {
  detail::TokenReader in(is, source);
  std::vector<std::string> toks;
  if (!in.next_line(toks)) in.fail("empty pattern file");
  if (toks.size() != 5) in.fail("header must be 'x_min y_min x_max y_max n'");
  auto num = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size() || !std::isfinite(v)) in.fail("bad number '" + t + "'");
    return v;
  };
  Window w;
  try {
    w = make_window(num(toks[0]), num(toks[1]), num(toks[2]), num(toks[3]));
  } catch (const error& e) {
    in.fail(e.what());
  }
  const double nd = num(toks[4]);
  if (nd < 0 || nd != std::floor(nd)) in.fail("point count must be a non-negative integer");
  const auto n = static_cast<std::size_t>(nd);
  std::vector<Point> pts;
  std::vector<int> folds;
  pts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!in.next_line(toks)) in.fail("expected " + std::to_string(n) + " points, found " + std::to_string(i));
    if (toks.size() != 2 && toks.size() != 3) in.fail("point lines are 'x y [fold]'");
    Point p{num(toks[0]), num(toks[1])};
    if (!w.contains(p.x, p.y)) in.fail("point outside the window");
    pts.push_back(p);
    if (toks.size() == 3) {
      if (i != folds.size()) in.fail("fold column must be present on every line or none");
      const double f = num(toks[2]);
      if (f < 1 || f != std::floor(f)) in.fail("fold labels must be positive integers");
      folds.push_back(static_cast<int>(f));
    } else if (!folds.empty()) {
      in.fail("fold column must be present on every line or none");
    }
  }
  if (in.next_line(toks)) in.fail("trailing data after " + std::to_string(n) + " points");
  return PointPattern(w, std::move(pts), std::move(folds));
}

} // namespace ppcf
