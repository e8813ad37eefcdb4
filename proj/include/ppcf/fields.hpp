#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "ppcf/detail/fft.hpp"
#include "ppcf/error.hpp"
#include "ppcf/random.hpp"

namespace ppcf {

//! Axis-aligned rectangular observation window (closed).
struct Window {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 1.0;
  double y_max = 1.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  bool contains(double x, double y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  bool contains(const Window& other) const {
    return other.x_min >= x_min && other.x_max <= x_max && other.y_min >= y_min &&
           other.y_max <= y_max;
  }

  friend bool operator==(const Window&, const Window&) = default;
};

inline Window make_window(double x_min, double y_min, double x_max, double y_max) {
  if (!(x_max > x_min) || !(y_max > y_min)) {
    std::ostringstream os;
    os << "window [" << x_min << ", " << x_max << "] x [" << y_min << ", " << y_max
       << "] has a non-positive side";
    throw error(errc::degenerate_window, os.str());
  }
  return Window{x_min, y_min, x_max, y_max};
}

//! Square window [0, a] x [0, a].
inline Window square_window(double a) { return make_window(0.0, 0.0, a, a); }

//! Scalar field sampled on a regular (nx x ny) lattice whose outermost nodes
//! sit on the window boundary. Values are row-major: index iy * nx + ix.
//! Off-lattice evaluation is bilinear; queries outside the window are clamped
//! to the boundary.
class GridField {
public:
  GridField() = default;

  GridField(Window window, std::size_t nx, std::size_t ny, std::vector<double> values)
    : window_(window), nx_(nx), ny_(ny), values_(std::move(values)) {
    if (nx_ < 2 || ny_ < 2) {
      throw error(errc::invalid_argument, "grid fields need at least 2 nodes per axis");
    }
    if (values_.size() != nx_ * ny_) {
      throw error(errc::mismatched_lattice, "value count does not match nx * ny");
    }
    dx_ = window_.width() / static_cast<double>(nx_ - 1);
    dy_ = window_.height() / static_cast<double>(ny_ - 1);
  }

  static GridField constant(Window window, std::size_t nx, std::size_t ny, double value) {
    return GridField(window, nx, ny, std::vector<double>(nx * ny, value));
  }

  const Window& window() const { return window_; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  double dx() const { return dx_; }
  double dy() const { return dy_; }
  const std::vector<double>& values() const { return values_; }

  double at(std::size_t ix, std::size_t iy) const { return values_[iy * nx_ + ix]; }
  double node_x(std::size_t ix) const { return window_.x_min + static_cast<double>(ix) * dx_; }
  double node_y(std::size_t iy) const { return window_.y_min + static_cast<double>(iy) * dy_; }

  double operator()(double x, double y) const {
    auto [ix, tx] = locate(x, window_.x_min, dx_, nx_);
    auto [iy, ty] = locate(y, window_.y_min, dy_, ny_);
    const double v00 = at(ix, iy), v10 = at(ix + 1, iy);
    const double v01 = at(ix, iy + 1), v11 = at(ix + 1, iy + 1);
    const double lower = (1.0 - tx) * v00 + tx * v10;
    const double upper = (1.0 - tx) * v01 + tx * v11;
    // a convex combination; rounding must not leave the corner range, since
    // intensity bounds are taken from lattice extremes
    return std::clamp((1.0 - ty) * lower + ty * upper, std::min({v00, v10, v01, v11}),
                      std::max({v00, v10, v01, v11}));
  }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

  bool same_lattice(const GridField& other) const {
    return window_ == other.window_ && nx_ == other.nx_ && ny_ == other.ny_;
  }

private:
  // Cell index and fractional offset; coordinates within 1e-9 cells of a node
  // snap to it so that node evaluation is exact.
  static std::pair<std::size_t, double> locate(double v, double origin, double step,
                                               std::size_t n) {
    double f = (v - origin) / step;
    f = std::clamp(f, 0.0, static_cast<double>(n - 1));
    const double r = std::round(f);
    if (std::abs(f - r) < 1e-9) f = r;
    auto i = static_cast<std::size_t>(f);
    if (i >= n - 1) i = n - 2;
    return {i, f - static_cast<double>(i)};
  }

  Window window_{};
  std::size_t nx_ = 0, ny_ = 0;
  double dx_ = 0.0, dy_ = 0.0;
  std::vector<double> values_;
};

//! Stationary isotropic Gaussian random field with exponential covariance
//! C(r) = variance * exp(-r / range).
struct GrfSpec {
  double variance = 1.0;
  double range = 0.05;
  double mean = 0.0;

  double covariance(double r) const { return variance * std::exp(-r / range); }

  void validate() const {
    if (!(variance >= 0.0) || !std::isfinite(variance)) {
      throw error(errc::invalid_argument, "GRF variance must be finite and >= 0");
    }
    if (!(range > 0.0) || !std::isfinite(range)) {
      throw error(errc::invalid_argument, "GRF range must be finite and > 0");
    }
    if (!std::isfinite(mean)) throw error(errc::invalid_argument, "GRF mean must be finite");
  }
};

namespace detail {

// Lattices at or below this node count use an exact dense Cholesky factor.
inline constexpr std::size_t cholesky_node_limit = 1024;

inline void clamp_field(std::vector<double>& values, const GrfSpec& spec) {
  const double half = 6.0 * std::sqrt(spec.variance);
  for (double& v : values) v = std::clamp(v, spec.mean - half, spec.mean + half);
}

inline std::vector<double> grf_cholesky(const Window& w, std::size_t nx, std::size_t ny,
                                        const GrfSpec& spec, rng_type& rng) {
  const std::size_t n = nx * ny;
  const double dx = w.width() / static_cast<double>(nx - 1);
  const double dy = w.height() / static_cast<double>(ny - 1);
  Eigen::MatrixXd cov(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    const double xa = static_cast<double>(a % nx) * dx, ya = static_cast<double>(a / nx) * dy;
    for (std::size_t b = 0; b <= a; ++b) {
      const double xb = static_cast<double>(b % nx) * dx, yb = static_cast<double>(b / nx) * dy;
      const double c = spec.covariance(std::hypot(xa - xb, ya - yb));
      cov(a, b) = c;
      cov(b, a) = c;
    }
  }
  cov.diagonal().array() += 1e-10 * spec.variance;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw error(errc::decomposition_failure, "lattice covariance is not positive definite");
  }
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  for (std::size_t i = 0; i < n; ++i) z[static_cast<Eigen::Index>(i)] = normal(rng);
  Eigen::VectorXd g = llt.matrixL() * z;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spec.mean + g[static_cast<Eigen::Index>(i)];
  return out;
}

// Circulant embedding on a torus of at least twice the lattice extent.
inline std::vector<double> grf_circulant(const Window& w, std::size_t nx, std::size_t ny,
                                         const GrfSpec& spec, rng_type& rng) {
  const double dx = w.width() / static_cast<double>(nx - 1);
  const double dy = w.height() / static_cast<double>(ny - 1);
  std::size_t mx = 2 * (nx - 1), my = 2 * (ny - 1);
  cvec eig;
  for (int attempt = 0;; ++attempt) {
    eig.assign(mx * my, {0.0, 0.0});
    for (std::size_t b = 0; b < my; ++b) {
      const double ry = dy * static_cast<double>(std::min(b, my - b));
      for (std::size_t a = 0; a < mx; ++a) {
        const double rx = dx * static_cast<double>(std::min(a, mx - a));
        eig[b * mx + a] = spec.covariance(std::hypot(rx, ry));
      }
    }
    fft2(eig, mx, my, true);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& e : eig) {
      lo = std::min(lo, e.real());
      hi = std::max(hi, e.real());
    }
    if (lo >= -1e-8 * hi) break;
    if (attempt == 3) {
      if (lo < -1e-3 * hi) {
        throw error(errc::decomposition_failure,
                    "circulant embedding has materially negative eigenvalues");
      }
      break;
    }
    mx *= 2;
    my *= 2;
  }
  const double norm = 1.0 / static_cast<double>(mx * my);
  std::normal_distribution<double> normal;
  for (auto& e : eig) {
    const double s = std::sqrt(std::max(e.real(), 0.0) * norm);
    const double re = normal(rng);
    const double im = normal(rng);
    e = {s * re, s * im};
  }
  fft2(eig, mx, my, true);
  std::vector<double> out(nx * ny);
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) out[iy * nx + ix] = spec.mean + eig[iy * mx + ix].real();
  }
  return out;
}

} // namespace detail

//! Draws a lattice sample of a stationary Gaussian field. Small lattices use
//! a dense Cholesky factor, larger ones circulant embedding. Values are
//! clamped to mean +/- 6 standard deviations. Deterministic given seed.
inline GridField simulate_grf(const Window& window, std::size_t nx, std::size_t ny,
                              const GrfSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (nx < 2 || ny < 2) throw error(errc::invalid_argument, "GRF lattice needs nx, ny >= 2");
  if (spec.variance == 0.0) return GridField::constant(window, nx, ny, spec.mean);
  rng_type rng = make_rng(seed);
  std::vector<double> values = nx * ny <= detail::cholesky_node_limit
                                 ? detail::grf_cholesky(window, nx, ny, spec, rng)
                                 : detail::grf_circulant(window, nx, ny, spec, rng);
  detail::clamp_field(values, spec);
  return GridField(window, nx, ny, std::move(values));
}

inline GridField field_product(const GridField& a, const GridField& b) {
  if (!a.same_lattice(b)) throw error(errc::mismatched_lattice, "field_product operands differ");
  std::vector<double> v(a.values().size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  return GridField(a.window(), a.nx(), a.ny(), std::move(v));
}

template <class F>
GridField apply_pointwise(const GridField& a, F&& f) {
  std::vector<double> v(a.values().size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = f(a.values()[i]);
    if (!std::isfinite(v[i])) {
      throw error(errc::non_finite_output, "pointwise map produced a non-finite value");
    }
  }
  return GridField(a.window(), a.nx(), a.ny(), std::move(v));
}

// ---------------------------------------------------------------------------
// Grid file format: "nx ny x_min y_min x_max y_max" then nx*ny reals.

inline void write_grid(std::ostream& os, const GridField& f) {
  const auto& w = f.window();
  os.precision(17);
  os << f.nx() << ' ' << f.ny() << ' ' << w.x_min << ' ' << w.y_min << ' ' << w.x_max << ' '
     << w.y_max << '\n';
  for (std::size_t iy = 0; iy < f.ny(); ++iy) {
    for (std::size_t ix = 0; ix < f.nx(); ++ix) {
      if (ix) os << ' ';
      os << f.at(ix, iy);
    }
    os << '\n';
  }
}

namespace detail {

//! Whitespace tokenizer that remembers the line each token came from.
class TokenReader {
public:
  explicit TokenReader(std::istream& is, std::string source = "input")
    : is_(is), source_(std::move(source)) {}

  bool next(std::string& tok) {
    while (!(line_stream_ >> tok)) {
      std::string line;
      if (!std::getline(is_, line)) return false;
      ++line_no_;
      line_stream_.clear();
      line_stream_.str(line);
    }
    return true;
  }

  double real(const char* what) {
    std::string tok;
    if (!next(tok)) fail(std::string("unexpected end of file reading ") + what);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v)) fail("bad " + std::string(what) + " '" + tok + "'");
    return v;
  }

  long long integer(const char* what) {
    std::string tok;
    if (!next(tok)) fail(std::string("unexpected end of file reading ") + what);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) fail("bad " + std::string(what) + " '" + tok + "'");
    return v;
  }

  std::size_t line() const { return line_no_; }

  //! Reads the remainder of the current line's tokens (used for optional columns).
  std::vector<std::string> rest_of_line() {
    std::vector<std::string> out;
    std::string tok;
    while (line_stream_ >> tok) out.push_back(tok);
    return out;
  }

  //! Advances to the next non-empty line and returns its tokens.
  bool next_line(std::vector<std::string>& toks) {
    toks.clear();
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) toks.push_back(tok);
      if (!toks.empty()) return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw error(errc::parse_error, source_ + ":" + std::to_string(line_no_) + ": " + msg);
  }

private:
  std::istream& is_;
  std::string source_;
  std::istringstream line_stream_;
  std::size_t line_no_ = 0;
};

} // namespace detail

inline GridField read_grid(std::istream& is, const std::string& source = "grid") {
  detail::TokenReader in(is, source);
  const long long nx = in.integer("nx");
  const long long ny = in.integer("ny");
  if (nx < 2 || ny < 2) in.fail("nx and ny must be >= 2");
  const double x0 = in.real("x_min"), y0 = in.real("y_min");
  const double x1 = in.real("x_max"), y1 = in.real("y_max");
  Window w;
  try {
    w = make_window(x0, y0, x1, y1);
  } catch (const error& e) {
    in.fail(e.what());
  }
  std::vector<double> v(static_cast<std::size_t>(nx * ny));
  for (auto& x : v) x = in.real("grid value");
  std::string extra;
  if (in.next(extra)) in.fail("trailing data after " + std::to_string(nx * ny) + " values");
  return GridField(w, static_cast<std::size_t>(nx), static_cast<std::size_t>(ny), std::move(v));
}

} // namespace ppcf
