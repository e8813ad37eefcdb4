#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <boost/math/distributions/normal.hpp>

#include "ppcf/crossfit.hpp"
#include "ppcf/detail/fft.hpp"
#include "ppcf/detail/nelder_mead.hpp"
#include "ppcf/error.hpp"
#include "ppcf/model.hpp"
#include "ppcf/nuisance.hpp"
#include "ppcf/process.hpp"

namespace ppcf {

//! Pair correlation family: g == 1 (Poisson) or the LGCP form
//! g(r) = exp(sigma2 * exp(-r / phi)) of an exponential-covariance latent field.
struct PcfModel {
  enum class Family { poisson, lgcp_exponential };

  Family family = Family::poisson;
  double sigma2 = 0.0;
  double phi = 1.0;

  static PcfModel poisson() { return {}; }

  static PcfModel lgcp(double sigma2, double phi) {
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw error(errc::invalid_argument, "sigma2 must be >= 0");
    if (!(phi > 0.0) || !std::isfinite(phi)) throw error(errc::invalid_argument, "phi must be > 0");
    return {Family::lgcp_exponential, sigma2, phi};
  }

  bool trivial() const { return family == Family::poisson || sigma2 == 0.0; }

  //! g(r) - 1.
  double excess(double r) const {
    if (trivial()) return 0.0;
    return std::expm1(sigma2 * std::exp(-r / phi));
  }

  double operator()(double r) const { return 1.0 + excess(r); }

  //! Distance beyond which g - 1 < tol.
  double truncation_radius(double tol = 1e-6) const {
    if (trivial()) return 0.0;
    const double lim = std::log1p(tol);
    if (sigma2 <= lim) return 0.0;
    return phi * std::log(sigma2 / lim);
  }
};

// ---------------------------------------------------------------------------
// Least favorable direction

//! nu_hat(z) at a single z. Log-linear: the tilted kernel mean of -y (eta_hat
//! cancels); general links: the implicit-function ratio at gamma = eta_hat.
inline Vec estimate_lfd(const NuisanceFit& nf, const Vec& theta, double eta_hat, const Vec& z) {
  const Vec kw = nf.kernel_weights(z);
  if (nf.spec().link() != Link::log_linear) return nf.implicit_d1(kw, theta, eta_hat);
  const int k = nf.spec().k();
  Vec num = Vec::Zero(k);
  double den = 0.0;
  for (Eigen::Index j = 0; j < nf.y().rows(); ++j) {
    if (kw[j] == 0.0) continue;
    const double psi = nf.weights()[j] * kw[j] * std::exp(nf.y().row(j).dot(theta) + eta_hat);
    den += psi;
    num += psi * nf.y().row(j).transpose();
  }
  if (!(den > 0.0) || !std::isfinite(den)) throw error(errc::zero_denominator, "tilted kernel mass is not positive");
  return -num / den;
}

//! Per-node log-intensity gradient along the least favorable direction and
//! the plug-in intensity.
struct NodeGradients {
  Mat grad;
  Vec lambda;
};

inline NodeGradients plug_in_gradients(const ModelSpec& spec, const Vec& theta, const Vec& eta, const Mat& nu,
                                       const Covariates& cov) {
  const Eigen::Index m = cov.y.rows();
  NodeGradients g{Mat(m, spec.k()), Vec(m)};
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vec y = cov.y.row(j).transpose();
    if (spec.link() == Link::log_linear) {
      g.grad.row(j) = cov.y.row(j) + nu.row(j);
      g.lambda[j] = std::exp(y.dot(theta) + eta[j]);
    } else {
      const PsiValues p = spec.psi(spec.tau(theta, y), eta[j]);
      if (!(p.value > 0.0)) throw error(errc::nonpositive_intensity, "Psi <= 0 at a node");
      g.grad.row(j) = ((p.d_t * spec.tau_gradient(theta, y) + p.d_eta * nu.row(j).transpose()) / p.value).transpose();
      g.lambda[j] = p.value;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Sensitivity and covariance matrices

//! S_hat = sum_j w_j g_j g_j' lambda_j.
inline Mat sensitivity_hat(const Mat& grad, const Vec& lambda, const std::vector<double>& weights) {
  const Eigen::Map<const Vec> w(weights.data(), static_cast<Eigen::Index>(weights.size()));
  const Vec wl = w.cwiseProduct(lambda);
  Mat S = grad.transpose() * wl.asDiagonal() * grad;
  return 0.5 * (S + S.transpose());
}

inline Mat sensitivity_hat(const ModelSpec& spec, const Vec& theta, const Vec& eta, const Mat& nu,
                           const QuadratureScheme& quad) {
  const NodeGradients g = plug_in_gradients(spec, theta, eta, nu, spec.covariates_at(quad.nodes()));
  return sensitivity_hat(g.grad, g.lambda, quad.weights());
}

namespace detail {

inline Mat weighted_gradients(const Mat& grad, const Vec& lambda, const std::vector<double>& weights) {
  Mat b = grad;
  for (Eigen::Index j = 0; j < b.rows(); ++j) b.row(j) *= weights[static_cast<std::size_t>(j)] * lambda[j];
  return b;
}

// True when the non-data nodes are the row-major cell centres of a grid_n
// lattice, as laid out by build_quadrature.
inline bool has_lattice_tail(const QuadratureScheme& quad) {
  const auto g = static_cast<std::size_t>(quad.grid_n());
  const std::size_t nd = quad.data_count();
  if (g == 0 || quad.size() != nd + g * g) return false;
  for (std::size_t j = 0; j < nd; ++j) {
    if (!quad.is_data()[j]) return false;
  }
  const Window& w = quad.window();
  const double cw = w.width() / static_cast<double>(g), ch = w.height() / static_cast<double>(g);
  for (std::size_t c : {std::size_t{0}, g * g - 1}) {
    const Point& p = quad.nodes()[nd + c];
    const double ex = w.x_min + (static_cast<double>(c % g) + 0.5) * cw;
    const double ey = w.y_min + (static_cast<double>(c / g) + 0.5) * ch;
    if (std::abs(p.x - ex) > 1e-9 * cw || std::abs(p.y - ey) > 1e-9 * ch) return false;
  }
  return true;
}

// sum_{i in rows, j in cols} c(|u_i - u_j|) b_i b_j' over pairs within r_max.
inline Mat direct_pair_sum(const QuadratureScheme& quad, const Mat& b, const PcfModel& pcf, std::size_t row_begin,
                           std::size_t row_end, std::size_t col_begin, std::size_t col_end, double r_max) {
  const auto k = b.cols();
  Mat acc = Mat::Zero(k, k);
  if (col_end <= col_begin || row_end <= row_begin || pcf.trivial()) return acc;
  const auto& nodes = quad.nodes();
  const auto nc = static_cast<Eigen::Index>(col_end - col_begin);
  Eigen::ArrayXd cx(nc), cy(nc);
  for (Eigen::Index j = 0; j < nc; ++j) {
    cx[j] = nodes[col_begin + static_cast<std::size_t>(j)].x;
    cy[j] = nodes[col_begin + static_cast<std::size_t>(j)].y;
  }
  const auto cols = b.middleRows(static_cast<Eigen::Index>(col_begin), nc);
  const double r2 = r_max * r_max;
  Eigen::ArrayXd d2(nc), e(nc);
  for (std::size_t i = row_begin; i < row_end; ++i) {
    d2 = (cx - nodes[i].x).square() + (cy - nodes[i].y).square();
    e = (pcf.sigma2 * (-d2.sqrt() / pcf.phi).exp()).expm1();
    e = (d2 <= r2).select(e, 0.0);
    const Vec row_acc = cols.transpose() * e.matrix();
    acc += b.row(static_cast<Eigen::Index>(i)).transpose() * row_acc.transpose();
  }
  return acc;
}

// Lattice-by-lattice block of the pair sum by zero-padded FFT convolution.
inline Mat lattice_pair_sum(const QuadratureScheme& quad, const Mat& b, const PcfModel& pcf, double r_max) {
  const auto g = static_cast<std::size_t>(quad.grid_n());
  const std::size_t nd = quad.data_count();
  const std::size_t n = 2 * g;
  const double cw = quad.window().width() / static_cast<double>(g);
  const double ch = quad.window().height() / static_cast<double>(g);
  cvec kern(n * n, {0.0, 0.0});
  for (std::size_t iy = 0; iy < n; ++iy) {
    const long oy = iy < g ? static_cast<long>(iy) : static_cast<long>(iy) - static_cast<long>(n);
    if (oy == -static_cast<long>(g)) continue;
    for (std::size_t ix = 0; ix < n; ++ix) {
      const long ox = ix < g ? static_cast<long>(ix) : static_cast<long>(ix) - static_cast<long>(n);
      if (ox == -static_cast<long>(g)) continue;
      const double r = std::hypot(ox * cw, oy * ch);
      if (r <= r_max) kern[iy * n + ix] = pcf.excess(r);
    }
  }
  fft2(kern, n, n, true);
  const auto k = b.cols();
  std::vector<cvec> conv(static_cast<std::size_t>(k));
  for (Eigen::Index c = 0; c < k; ++c) {
    cvec buf(n * n, {0.0, 0.0});
    for (std::size_t cy = 0; cy < g; ++cy) {
      for (std::size_t cx = 0; cx < g; ++cx) buf[cy * n + cx] = b(static_cast<Eigen::Index>(nd + cy * g + cx), c);
    }
    fft2(buf, n, n, true);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= kern[i];
    fft2(buf, n, n, false);
    conv[static_cast<std::size_t>(c)] = std::move(buf);
  }
  const double norm = 1.0 / static_cast<double>(n * n);
  Mat acc = Mat::Zero(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index c = 0; c < k; ++c) {
      double s = 0.0;
      const cvec& cv = conv[static_cast<std::size_t>(c)];
      for (std::size_t cy = 0; cy < g; ++cy) {
        for (std::size_t cx = 0; cx < g; ++cx) {
          s += b(static_cast<Eigen::Index>(nd + cy * g + cx), a) * cv[cy * n + cx].real();
        }
      }
      acc(a, c) = s * norm;
    }
  }
  return acc;
}

} // namespace detail

struct CovarianceOptions {
  double tolerance = 1e-6;  //!< pairs with g - 1 below this are dropped
  bool use_fft = true;      //!< lattice-lattice block by FFT when the layout allows
};

//! Sigma_hat = S_hat + sum_{i,j} w_i w_j g_i g_j' lambda_i lambda_j (g(u_i, u_j) - 1),
//! the double sum truncated where g - 1 < tolerance.
inline Mat covariance_hat(const Mat& grad, const Vec& lambda, const QuadratureScheme& quad, const PcfModel& pcf,
                          const CovarianceOptions& opts = {}) {
  const Mat S = sensitivity_hat(grad, lambda, quad.weights());
  if (pcf.trivial()) return S;
  const double r_max = pcf.truncation_radius(opts.tolerance);
  if (r_max <= 0.0) return S;
  const Mat b = detail::weighted_gradients(grad, lambda, quad.weights());
  const std::size_t m = quad.size();
  Mat pairs;
  if (opts.use_fft && detail::has_lattice_tail(quad)) {
    const std::size_t nd = quad.data_count();
    const Mat dd = detail::direct_pair_sum(quad, b, pcf, 0, nd, 0, nd, r_max);
    const Mat dg = detail::direct_pair_sum(quad, b, pcf, 0, nd, nd, m, r_max);
    pairs = dd + dg + dg.transpose() + detail::lattice_pair_sum(quad, b, pcf, r_max);
  } else {
    pairs = detail::direct_pair_sum(quad, b, pcf, 0, m, 0, m, r_max);
  }
  const Mat sigma = S + pairs;
  return 0.5 * (sigma + sigma.transpose());
}

//! Untruncated O(m^2) double sum; reference implementation.
inline Mat covariance_hat_bruteforce(const Mat& grad, const Vec& lambda, const QuadratureScheme& quad,
                                     const PcfModel& pcf) {
  const Mat b = detail::weighted_gradients(grad, lambda, quad.weights());
  Mat sigma = sensitivity_hat(grad, lambda, quad.weights());
  const auto& nodes = quad.nodes();
  for (std::size_t i = 0; i < quad.size(); ++i) {
    for (std::size_t j = 0; j < quad.size(); ++j) {
      const double c = pcf.excess(std::hypot(nodes[i].x - nodes[j].x, nodes[i].y - nodes[j].y));
      sigma += c * b.row(static_cast<Eigen::Index>(i)).transpose() * b.row(static_cast<Eigen::Index>(j));
    }
  }
  return 0.5 * (sigma + sigma.transpose());
}

inline Mat covariance_hat(const ModelSpec& spec, const Vec& theta, const Vec& eta, const Mat& nu,
                          const QuadratureScheme& quad, const PcfModel& pcf, const CovarianceOptions& opts = {}) {
  const NodeGradients g = plug_in_gradients(spec, theta, eta, nu, spec.covariates_at(quad.nodes()));
  return covariance_hat(g.grad, g.lambda, quad, pcf, opts);
}

// ---------------------------------------------------------------------------
// Minimum-contrast PCF estimation

struct PcfFitOptions {
  double r_max_fraction = 0.25;  //!< of the shorter window side
  int r_points = 48;
  double min_sigma2 = 1e-3;      //!< fits below this are reported as Poisson
};

struct PcfFit {
  PcfModel model;
  bool degenerate = false;
  double contrast = 0.0;
  std::vector<double> r;
  std::vector<double> k_hat;
};

//! K(r) = pi r^2 + 2 pi int_0^r s (g(s) - 1) ds on an increasing grid.
inline std::vector<double> k_model(const PcfModel& pcf, const std::vector<double>& r) {
  std::vector<double> out(r.size());
  double integral = 0.0, prev = 0.0;
  const int sub = 8;  // Simpson panels per grid interval
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!pcf.trivial()) {
      const double h = (r[i] - prev) / sub;
      double s = 0.0;
      for (int p = 0; p <= sub; ++p) {
        const double u = prev + h * p;
        const double wgt = (p == 0 || p == sub) ? 1.0 : (p % 2 ? 4.0 : 2.0);
        s += wgt * u * pcf.excess(u);
      }
      integral += s * h / 3.0;
    }
    prev = r[i];
    out[i] = std::numbers::pi * r[i] * r[i] + 2.0 * std::numbers::pi * integral;
  }
  return out;
}

//! Translation-corrected inhomogeneous K-function at the given radii.
inline std::vector<double> k_inhom(const PointPattern& pattern, const std::vector<double>& lambda,
                                   const std::vector<double>& r) {
  const Window& w = pattern.window();
  const auto& pts = pattern.points();
  std::vector<double> bins(r.size(), 0.0);
  const double r_top = r.back();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
      const double d = std::hypot(dx, dy);
      if (d > r_top) continue;
      const double overlap = (w.width() - std::abs(dx)) * (w.height() - std::abs(dy));
      const auto it = std::lower_bound(r.begin(), r.end(), d);
      bins[static_cast<std::size_t>(it - r.begin())] += 2.0 / (lambda[i] * lambda[j] * overlap);
    }
  }
  std::partial_sum(bins.begin(), bins.end(), bins.begin());
  return bins;
}

//! Minimum contrast on K^(1/4) over (sigma2, phi): log-grid search then
//! Nelder-Mead in log parameters.
inline PcfFit estimate_pcf(const PointPattern& pattern, const std::vector<double>& lambda_at_points,
                           const PcfFitOptions& opts = {}) {
  if (pattern.count() < 10) throw error(errc::insufficient_points, "PCF estimation needs at least 10 points");
  if (lambda_at_points.size() != pattern.count()) {
    throw error(errc::invalid_argument, "need one intensity value per point");
  }
  for (double l : lambda_at_points) {
    if (!(l > 0.0) || !std::isfinite(l)) throw error(errc::nonpositive_intensity, "intensity must be positive at points");
  }
  const Window& w = pattern.window();
  const double side = std::min(w.width(), w.height());
  const double r_max = opts.r_max_fraction * side;
  PcfFit fit;
  for (int i = 1; i <= opts.r_points; ++i) fit.r.push_back(r_max * i / opts.r_points);
  fit.k_hat = k_inhom(pattern, lambda_at_points, fit.r);
  const double dr = r_max / opts.r_points;
  std::vector<double> target(fit.r.size());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = std::pow(std::max(fit.k_hat[i], 0.0), 0.25);

  auto contrast = [&](const PcfModel& m) {
    const std::vector<double> km = k_model(m, fit.r);
    double s = 0.0;
    for (std::size_t i = 0; i < km.size(); ++i) {
      const double d = target[i] - std::pow(km[i], 0.25);
      s += d * d * dr;
    }
    return s;
  };
  const double ls_lo = std::log(1e-4), ls_hi = std::log(10.0);
  const double lp_lo = std::log(r_max / 200.0), lp_hi = std::log(2.0 * side);
  auto objective = [&](const std::array<double, 2>& p) {
    if (p[0] < ls_lo || p[0] > ls_hi || p[1] < lp_lo || p[1] > lp_hi) return std::numeric_limits<double>::max();
    const double c = contrast(PcfModel::lgcp(std::exp(p[0]), std::exp(p[1])));
    return std::isfinite(c) ? c : std::numeric_limits<double>::max();
  };

  std::array<double, 2> best{};
  double best_v = std::numeric_limits<double>::infinity();
  const int n_grid = 12;
  for (int a = 0; a < n_grid; ++a) {
    for (int b = 0; b < n_grid; ++b) {
      const std::array<double, 2> p{std::log(1e-2) + (std::log(3.0) - std::log(1e-2)) * a / (n_grid - 1),
                                    std::log(r_max / 50.0) + (std::log(side) - std::log(r_max / 50.0)) * b / (n_grid - 1)};
      const double v = objective(p);
      if (v < best_v) {
        best_v = v;
        best = p;
      }
    }
  }
  best = detail::nelder_mead<2>(objective, best, 0.5, 400, 1e-12);
  best_v = objective(best);
  const double poisson_v = contrast(PcfModel::poisson());
  const double s2 = std::exp(best[0]);
  if (!std::isfinite(best_v) || best_v >= poisson_v || s2 < opts.min_sigma2) {
    fit.model = PcfModel::poisson();
    fit.degenerate = true;
    fit.contrast = poisson_v;
  } else {
    fit.model = PcfModel::lgcp(s2, std::exp(best[1]));
    fit.contrast = best_v;
  }
  return fit;
}

inline PcfFit estimate_pcf(const PointPattern& pattern, const IntensitySurface& intensity_hat,
                           const PcfFitOptions& opts = {}) {
  std::vector<double> lam;
  lam.reserve(pattern.count());
  for (const auto& p : pattern.points()) lam.push_back(intensity_hat(p.x, p.y));
  return estimate_pcf(pattern, lam, opts);
}

// ---------------------------------------------------------------------------
// Wald intervals

struct ConfidenceInterval {
  double level = 0.95;
  Vec lower;
  Vec upper;
};

struct FitDiagnostics {
  double min_eigen_s = 0.0;
  double min_eigen_sigma = 0.0;
  std::size_t clip_count = 0;
  bool pcf_degenerate = false;
  std::vector<FoldResult> folds;
};

struct FitReport {
  Vec theta_hat;
  Mat S_hat;
  Mat Sigma_hat;
  Mat covariance;  //!< S^-1 Sigma S^-1
  Vec se;
  std::vector<ConfidenceInterval> ci;
  PcfModel pcf;
  double area = 0.0;
  FitDiagnostics diagnostics;

  const ConfidenceInterval& interval(double level) const {
    for (const auto& c : ci) {
      if (std::abs(c.level - level) < 1e-12) return c;
    }
    throw error(errc::invalid_argument, "no interval at level " + std::to_string(level));
  }

  bool covers(double level, const Vec& truth) const {
    const ConfidenceInterval& c = interval(level);
    return ((c.lower.array() <= truth.array()) && (truth.array() <= c.upper.array())).all();
  }
};

inline FitReport wald_report(const Vec& theta_hat, const Mat& S_hat, const Mat& Sigma_hat, double area,
                             const std::vector<double>& levels = {0.90, 0.95}) {
  const auto k = theta_hat.size();
  if (S_hat.rows() != k || S_hat.cols() != k || Sigma_hat.rows() != k || Sigma_hat.cols() != k) {
    throw error(errc::invalid_argument, "S and Sigma must be k x k");
  }
  FitReport rep;
  rep.theta_hat = theta_hat;
  rep.S_hat = S_hat;
  rep.Sigma_hat = Sigma_hat;
  rep.area = area;
  const Mat Ssym = 0.5 * (S_hat + S_hat.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(Ssym, Eigen::EigenvaluesOnly);
  rep.diagnostics.min_eigen_s = eig.eigenvalues().minCoeff();
  const double floor = 1e-10 * Ssym.trace() / static_cast<double>(k);
  if (!(rep.diagnostics.min_eigen_s > floor)) {
    throw error(errc::singular_sensitivity,
                "sensitivity matrix is singular: min eigenvalue " + std::to_string(rep.diagnostics.min_eigen_s));
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig_sigma(0.5 * (Sigma_hat + Sigma_hat.transpose()), Eigen::EigenvaluesOnly);
  rep.diagnostics.min_eigen_sigma = eig_sigma.eigenvalues().minCoeff();
  const Mat Sinv = Ssym.inverse();
  const Mat cov = Sinv * Sigma_hat * Sinv;
  rep.covariance = 0.5 * (cov + cov.transpose());
  rep.se = rep.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  const boost::math::normal_distribution<double> normal;
  for (double level : levels) {
    if (!(level > 0.0 && level < 1.0)) throw error(errc::invalid_argument, "confidence level must be in (0, 1)");
    const double zq = boost::math::quantile(normal, 0.5 + 0.5 * level);
    rep.ci.push_back({level, theta_hat - zq * rep.se, theta_hat + zq * rep.se});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Plug-in quantities for a cross-fitted model on the full pattern

struct PlugIn {
  QuadratureScheme quad;
  Covariates cov;
  Vec eta;
  Mat nu;
  NodeGradients gradients;

  std::vector<double> lambda_at_data() const {
    std::vector<double> out;
    for (std::size_t j = 0; j < quad.size(); ++j) {
      if (quad.is_data()[j]) out.push_back(gradients.lambda[static_cast<Eigen::Index>(j)]);
    }
    return out;
  }
};

//! eta_hat from the cross-fit, nu_hat from a kernel fit on the full pattern,
//! both evaluated on the full quadrature scheme.
inline PlugIn semiparametric_plug_in(const ModelSpec& spec, const PointPattern& pattern, const CrossFitResult& cf,
                                     const CrossFitConfig& cfg) {
  const PointPattern plain(pattern.window(), pattern.points());
  PlugIn p;
  p.quad = build_quadrature(plain, cfg.grid_n);
  p.cov = spec.covariates_at(p.quad.nodes());
  p.eta = cf.eta_hat_rows(p.cov.z);
  auto nf = std::make_shared<const NuisanceFit>(spec, p.quad, cf.kernel, 1.0);
  const Eigen::Index m = p.cov.z.rows();
  p.nu.resize(m, spec.k());
  if (spec.link() == Link::log_linear && spec.q() == 1 && cfg.eta_grid > 0) {
    const auto& zf = spec.nuisance_fields().front();
    const NuisanceTable table(nf, zf.min(), zf.max(), cfg.eta_grid, cfg.eta_bins);
    const Mat grid = table.tilted_mean_grid(cf.theta_hat);
    for (Eigen::Index j = 0; j < m; ++j) {
      const Stencil s = locate_on(table.z_grid(), p.cov.z(j, 0));
      p.nu.row(j) = (1.0 - s.t) * grid.row(s.index) + s.t * grid.row(s.index + 1);
    }
  } else {
    for (Eigen::Index j = 0; j < m; ++j) {
      p.nu.row(j) = estimate_lfd(*nf, cf.theta_hat, p.eta[j], p.cov.z.row(j).transpose()).transpose();
    }
  }
  p.gradients = plug_in_gradients(spec, cf.theta_hat, p.eta, p.nu, p.cov);
  return p;
}

} // namespace ppcf
