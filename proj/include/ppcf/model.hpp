#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "ppcf/error.hpp"
#include "ppcf/fields.hpp"
#include "ppcf/process.hpp"
#include "ppcf/random.hpp"

namespace ppcf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Link { log_linear, general };

//! Value and partials of the link Psi(t, eta).
struct PsiValues {
  double value = 0.0;
  double d_t = 0.0;
  double d_eta = 0.0;
  double d_tt = 0.0;
  double d_teta = 0.0;
  double d_etaeta = 0.0;
};

using PsiFunction = std::function<PsiValues(double t, double eta)>;

//! tau_theta(y) with its theta-gradient and theta-Hessian.
struct TauFunctions {
  std::function<double(const Vec& theta, const Vec& y)> value;
  std::function<Vec(const Vec& theta, const Vec& y)> gradient;
  std::function<Mat(const Vec& theta, const Vec& y)> hessian;
};

//! Covariates at a set of locations: y is m x k, z is m x q.
struct Covariates {
  Mat y;
  Mat z;
  std::size_t size() const { return static_cast<std::size_t>(y.rows()); }
};

//! log lambda at one node and its total theta-derivatives along a curve.
struct LogIntensityTerms {
  double log_lambda = 0.0;
  Vec gradient;
  Mat hessian;
};

//! Intensity model lambda(u) = Psi[tau_theta(y_u), eta(z_u)].
class ModelSpec {
public:
  static ModelSpec log_linear(std::vector<GridField> target, std::vector<GridField> nuisance) {
    ModelSpec m(Link::log_linear, std::move(target), std::move(nuisance));
    m.tau_ = TauFunctions{
      [](const Vec& th, const Vec& y) { return th.dot(y); },
      [](const Vec&, const Vec& y) { return Vec(y); },
      [](const Vec& th, const Vec&) { return Mat(Mat::Zero(th.size(), th.size())); }};
    m.psi_ = [](double t, double eta) {
      const double e = std::exp(t + eta);
      return PsiValues{e, e, e, e, e, e};
    };
    m.validate();
    return m;
  }

  static ModelSpec general(std::vector<GridField> target, std::vector<GridField> nuisance,
                           TauFunctions tau, PsiFunction psi) {
    ModelSpec m(Link::general, std::move(target), std::move(nuisance));
    m.tau_ = std::move(tau);
    m.psi_ = std::move(psi);
    m.validate();
    return m;
  }

  Link link() const { return link_; }
  int k() const { return static_cast<int>(target_.size()); }
  int q() const { return static_cast<int>(nuisance_.size()); }
  const Window& window() const { return target_.front().window(); }
  const std::vector<GridField>& target_fields() const { return target_; }
  const std::vector<GridField>& nuisance_fields() const { return nuisance_; }

  Covariates covariates_at(const std::vector<Point>& pts) const {
    Covariates c{Mat(pts.size(), k()), Mat(pts.size(), q())};
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      for (int a = 0; a < k(); ++a) c.y(r, a) = target_[a](pts[j].x, pts[j].y);
      for (int b = 0; b < q(); ++b) c.z(r, b) = nuisance_[b](pts[j].x, pts[j].y);
    }
    return c;
  }

  double tau(const Vec& theta, const Vec& y) const { return tau_.value(theta, y); }
  Vec tau_gradient(const Vec& theta, const Vec& y) const { return tau_.gradient(theta, y); }
  Mat tau_hessian(const Vec& theta, const Vec& y) const { return tau_.hessian(theta, y); }
  PsiValues psi(double t, double eta) const { return psi_(t, eta); }

  double intensity(const Vec& theta, const Vec& y, double eta) const {
    if (link_ == Link::log_linear) return std::exp(theta.dot(y) + eta);
    return psi_(tau(theta, y), eta).value;
  }

  //! Total theta-derivatives of log lambda given eta(theta) and its first
  //! (d1, length k) and second (d2, k x k) theta-derivatives.
  LogIntensityTerms log_intensity_terms(const Vec& theta, const Vec& y, double eta, const Vec& d1,
                                        const Mat& d2) const {
    if (link_ == Link::log_linear) return {theta.dot(y) + eta, y + d1, d2};
    const PsiValues p = psi_(tau(theta, y), eta);
    if (!(p.value > 0.0)) throw error(errc::nonpositive_intensity, "Psi <= 0");
    const Vec gt = tau_gradient(theta, y);
    const Vec dl = p.d_t * gt + p.d_eta * d1;
    const Mat d2l = p.d_tt * gt * gt.transpose() + p.d_teta * (gt * d1.transpose() + d1 * gt.transpose()) +
                    p.d_etaeta * d1 * d1.transpose() + p.d_t * tau_hessian(theta, y) + p.d_eta * d2;
    const Vec g = dl / p.value;
    return {std::log(p.value), g, d2l / p.value - g * g.transpose()};
  }

  //! d/d eta of d/d theta log lambda at fixed eta; identically zero for the
  //! log-linear link.
  Vec mixed_log_partial(const Vec& theta, const Vec& y, double eta) const {
    const PsiValues p = psi_(tau(theta, y), eta);
    return (p.d_teta / p.value - p.d_t * p.d_eta / (p.value * p.value)) * tau_gradient(theta, y);
  }

private:
  ModelSpec(Link link, std::vector<GridField> target, std::vector<GridField> nuisance)
    : link_(link), target_(std::move(target)), nuisance_(std::move(nuisance)) {
    if (target_.empty()) throw error(errc::invalid_argument, "model needs k >= 1 target fields");
    if (nuisance_.empty()) throw error(errc::invalid_argument, "model needs q >= 1 nuisance fields");
    const Window& w = target_.front().window();
    for (const auto& f : target_) {
      if (!(f.window() == w)) throw error(errc::window_mismatch, "target fields use different windows");
    }
    for (const auto& f : nuisance_) {
      if (!(f.window() == w)) throw error(errc::window_mismatch, "nuisance fields use different windows");
    }
  }

  // Central-difference check of the supplied partials at a few points.
  void validate() const {
    const double h = 1e-5;
    const int kk = k();
    for (int trial = 0; trial < 4; ++trial) {
      Vec th = Vec::Constant(kk, 0.1 * trial - 0.15);
      Vec y = Vec::LinSpaced(kk, -0.5 + 0.2 * trial, 0.4);
      const double t = 0.3 * trial - 0.4, e = 0.2 - 0.1 * trial;
      const PsiValues p = psi_(t, e);
      auto close = [](double a, double b) { return std::abs(a - b) <= 1e-4 * (1.0 + std::abs(b)); };
      const PsiValues pt1 = psi_(t + h, e), pt0 = psi_(t - h, e);
      const PsiValues pe1 = psi_(t, e + h), pe0 = psi_(t, e - h);
      const bool ok = close(p.d_t, (pt1.value - pt0.value) / (2 * h)) &&
                      close(p.d_eta, (pe1.value - pe0.value) / (2 * h)) &&
                      close(p.d_tt, (pt1.d_t - pt0.d_t) / (2 * h)) &&
                      close(p.d_teta, (pe1.d_t - pe0.d_t) / (2 * h)) &&
                      close(p.d_etaeta, (pe1.d_eta - pe0.d_eta) / (2 * h));
      if (!ok) throw error(errc::invalid_argument, "link partials disagree with finite differences");
      const Vec g = tau_gradient(th, y);
      const Mat H = tau_hessian(th, y);
      for (int a = 0; a < kk; ++a) {
        Vec tp = th, tm = th;
        tp[a] += h;
        tm[a] -= h;
        if (!close(g[a], (tau(tp, y) - tau(tm, y)) / (2 * h))) {
          throw error(errc::invalid_argument, "tau gradient disagrees with finite differences");
        }
        const Vec dg = (tau_gradient(tp, y) - tau_gradient(tm, y)) / (2 * h);
        for (int b = 0; b < kk; ++b) {
          if (!close(H(b, a), dg[b])) throw error(errc::invalid_argument, "tau Hessian disagrees with finite differences");
        }
      }
    }
  }

  Link link_;
  std::vector<GridField> target_;
  std::vector<GridField> nuisance_;
  TauFunctions tau_;
  PsiFunction psi_;
};

// ---------------------------------------------------------------------------
// Quadrature

//! Berman-Turner quadrature: data points followed by the centres of a
//! grid_n x grid_n partition, with counting weights (cell area shared equally
//! among the nodes falling in a cell).
class QuadratureScheme {
public:
  QuadratureScheme() = default;
  QuadratureScheme(Window w, int grid_n, std::vector<Point> nodes, std::vector<double> weights,
                   std::vector<char> is_data)
    : window_(w), grid_n_(grid_n), nodes_(std::move(nodes)), weights_(std::move(weights)),
      is_data_(std::move(is_data)) {}

  const Window& window() const { return window_; }
  int grid_n() const { return grid_n_; }
  const std::vector<Point>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<char>& is_data() const { return is_data_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t data_count() const {
    std::size_t n = 0;
    for (char d : is_data_) n += d ? 1 : 0;
    return n;
  }

  //! y_j = 1(node j is a data point) / w_j.
  std::vector<double> responses() const {
    std::vector<double> r(size());
    for (std::size_t j = 0; j < size(); ++j) r[j] = is_data_[j] ? 1.0 / weights_[j] : 0.0;
    return r;
  }

  double total_weight() const {
    double s = 0.0;
    for (double w : weights_) s += w;
    return s;
  }

private:
  Window window_{};
  int grid_n_ = 0;
  std::vector<Point> nodes_;
  std::vector<double> weights_;
  std::vector<char> is_data_;
};

inline QuadratureScheme build_quadrature(const PointPattern& pattern, int grid_n) {
  if (grid_n < 4) throw error(errc::invalid_argument, "grid_n must be >= 4");
  const Window& w = pattern.window();
  const auto g = static_cast<std::size_t>(grid_n);
  const double cw = w.width() / grid_n, ch = w.height() / grid_n;
  auto cell_of = [&](const Point& p) {
    const auto cx = std::min(g - 1, static_cast<std::size_t>(std::max(0.0, (p.x - w.x_min) / cw)));
    const auto cy = std::min(g - 1, static_cast<std::size_t>(std::max(0.0, (p.y - w.y_min) / ch)));
    return cy * g + cx;
  };
  std::vector<int> count(g * g, 1);
  std::vector<std::size_t> cell(pattern.count());
  for (std::size_t i = 0; i < pattern.count(); ++i) {
    cell[i] = cell_of(pattern.points()[i]);
    ++count[cell[i]];
  }
  const double area = cw * ch;
  std::vector<Point> nodes;
  std::vector<double> weights;
  std::vector<char> is_data;
  nodes.reserve(pattern.count() + g * g);
  for (std::size_t i = 0; i < pattern.count(); ++i) {
    nodes.push_back(pattern.points()[i]);
    weights.push_back(area / count[cell[i]]);
    is_data.push_back(1);
  }
  for (std::size_t cy = 0; cy < g; ++cy) {
    for (std::size_t cx = 0; cx < g; ++cx) {
      nodes.push_back({w.x_min + (static_cast<double>(cx) + 0.5) * cw,
                       w.y_min + (static_cast<double>(cy) + 0.5) * ch});
      weights.push_back(area / count[cy * g + cx]);
      is_data.push_back(0);
    }
  }
  return QuadratureScheme(w, grid_n, std::move(nodes), std::move(weights), std::move(is_data));
}

//! Data points plus uniformly scattered dummy points of intensity rho.
struct LogisticScheme {
  Window window{};
  std::vector<Point> nodes;
  std::vector<char> is_data;
  double rho = 0.0;
};

inline LogisticScheme build_logistic(const PointPattern& data, const PointPattern& dummy, double rho) {
  if (!(rho > 0.0)) throw error(errc::invalid_argument, "dummy intensity must be positive");
  LogisticScheme s{data.window(), data.points(), std::vector<char>(data.count(), 1), rho};
  for (const auto& p : dummy.points()) {
    s.nodes.push_back(p);
    s.is_data.push_back(0);
  }
  return s;
}

//! Dummy points from a homogeneous Poisson process with intensity rho.
inline PointPattern draw_dummy(const Window& w, double rho, std::uint64_t seed) {
  return simulate_poisson(IntensitySurface::constant(w, rho), derive_seed(seed, stream::dummy));
}

//! Default dummy intensity rho = 4 n / |A|.
inline double default_rho(std::size_t n, const Window& w) {
  return 4.0 * static_cast<double>(std::max<std::size_t>(n, 1)) / w.area();
}

// ---------------------------------------------------------------------------
// Approximate pseudo-log-likelihood as a sum of per-node terms f_j(L_j) with
// L_j = log(scale * lambda_j).

enum class Approximation { quadrature, logistic };

class Objective {
public:
  static Objective quadrature(const ModelSpec& spec, const QuadratureScheme& q, double scale) {
    check_scale(scale);
    Objective o;
    o.kind_ = Approximation::quadrature;
    o.window_ = q.window();
    o.nodes_ = q.nodes();
    o.is_data_ = q.is_data();
    o.weights_ = q.weights();
    o.scale_ = scale;
    o.cov_ = spec.covariates_at(o.nodes_);
    return o;
  }

  static Objective logistic(const ModelSpec& spec, const LogisticScheme& s, double scale) {
    check_scale(scale);
    Objective o;
    o.kind_ = Approximation::logistic;
    o.window_ = s.window;
    o.nodes_ = s.nodes;
    o.is_data_ = s.is_data;
    o.weights_.assign(s.nodes.size(), 0.0);
    o.rho_ = s.rho;
    o.scale_ = scale;
    o.cov_ = spec.covariates_at(o.nodes_);
    return o;
  }

  Approximation kind() const { return kind_; }
  const Window& window() const { return window_; }
  const std::vector<Point>& nodes() const { return nodes_; }
  const std::vector<char>& is_data() const { return is_data_; }
  const std::vector<double>& weights() const { return weights_; }
  const Covariates& covariates() const { return cov_; }
  double scale() const { return scale_; }
  double rho() const { return rho_; }
  std::size_t size() const { return nodes_.size(); }

  //! f_j(L), f_j'(L), f_j''(L) with L = log(scale * lambda_j).
  void term(std::size_t j, double L, double& f, double& f1, double& f2) const {
    if (kind_ == Approximation::quadrature) {
      const double e = weights_[j] * std::exp(L);
      f = (is_data_[j] ? L : 0.0) - e;
      f1 = (is_data_[j] ? 1.0 : 0.0) - e;
      f2 = -e;
      return;
    }
    // logistic: log(l / (l + rho)) for data, log(rho / (l + rho)) for dummies
    const double lam = std::exp(L);
    const double lse = log_sum_exp(L, std::log(rho_));
    const double p = lam / (lam + rho_);
    if (is_data_[j]) {
      f = L - lse;
      f1 = 1.0 - p;
    } else {
      f = std::log(rho_) - lse;
      f1 = -p;
    }
    f2 = -p * (1.0 - p);
  }

private:
  static void check_scale(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw error(errc::invalid_argument, "scale must be positive");
  }
  static double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  }

  Approximation kind_ = Approximation::quadrature;
  Window window_{};
  std::vector<Point> nodes_;
  std::vector<char> is_data_;
  std::vector<double> weights_;
  double rho_ = 0.0;
  double scale_ = 1.0;
  Covariates cov_;
};

// ---------------------------------------------------------------------------
// Nuisance curves theta -> eta_theta evaluated at a fixed set of nodes.

//! eta_theta and its first/second theta-derivatives at each node. d2 stores
//! the k x k block of node j in row j, column a * k + b.
struct CurveEval {
  Vec eta;
  Mat d1;
  Mat d2;
};

class ProfileCurve {
public:
  virtual ~ProfileCurve() = default;
  virtual CurveEval evaluate(const Vec& theta) const = 0;
};

//! theta-independent eta(z): the oracle or a fixed plug-in.
class FixedCurve : public ProfileCurve {
public:
  FixedCurve(std::function<double(const Vec& z)> eta, const Mat& z, int k) : k_(k) {
    values_.resize(z.rows());
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      values_[j] = eta(z.row(j).transpose());
      if (!std::isfinite(values_[j])) throw error(errc::non_finite_output, "eta is not finite at a node");
    }
  }

  CurveEval evaluate(const Vec&) const override {
    return {values_, Mat::Zero(values_.size(), k_), Mat::Zero(values_.size(), k_ * k_)};
  }

private:
  Vec values_;
  int k_;
};

// ---------------------------------------------------------------------------
// Profile pseudo-log-likelihood along theta -> (theta, eta_theta).

struct ProfileDerivatives {
  double value = 0.0;
  Vec score;
  Mat hessian;
};

inline ProfileDerivatives profile_derivatives(const ModelSpec& spec, const Objective& obj,
                                              const ProfileCurve& curve, const Vec& theta,
                                              bool with_derivatives = true) {
  const CurveEval c = curve.evaluate(theta);
  const int k = spec.k();
  const double log_scale = std::log(obj.scale());
  const Covariates& cov = obj.covariates();
  ProfileDerivatives out{0.0, Vec::Zero(k), Mat::Zero(k, k)};
  double f = 0.0, f1 = 0.0, f2 = 0.0;
  if (spec.link() == Link::log_linear) {
    Vec g(k);
    for (std::size_t j = 0; j < obj.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      const double L = cov.y.row(r).dot(theta) + c.eta[r] + log_scale;
      obj.term(j, L, f, f1, f2);
      out.value += f;
      if (!with_derivatives) continue;
      for (int a = 0; a < k; ++a) g[a] = cov.y(r, a) + c.d1(r, a);
      out.score.noalias() += f1 * g;
      for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) out.hessian(a, b) += f2 * g[a] * g[b] + f1 * c.d2(r, a * k + b);
      }
    }
  } else {
    for (std::size_t j = 0; j < obj.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      Mat d2(k, k);
      for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) d2(a, b) = c.d2(r, a * k + b);
      }
      const LogIntensityTerms t = spec.log_intensity_terms(
        theta, cov.y.row(r).transpose(), c.eta[r], c.d1.row(r).transpose(), d2);
      obj.term(j, t.log_lambda + log_scale, f, f1, f2);
      out.value += f;
      if (!with_derivatives) continue;
      out.score.noalias() += f1 * t.gradient;
      out.hessian.noalias() += f2 * t.gradient * t.gradient.transpose() + f1 * t.hessian;
    }
  }
  if (!std::isfinite(out.value)) {
    throw error(errc::nonpositive_intensity, "pseudo-log-likelihood is not finite");
  }
  return out;
}

inline double profile_value(const ModelSpec& spec, const Objective& obj, const ProfileCurve& curve,
                            const Vec& theta) {
  return profile_derivatives(spec, obj, curve, theta, false).value;
}

//! Quadrature pseudo-log-likelihood for a fixed eta(z):
//! sum_data log(scale lambda) - sum_j w_j scale lambda_j.
inline double pseudo_loglik(const ModelSpec& spec, const Vec& theta,
                            const std::function<double(const Vec&)>& eta,
                            const QuadratureScheme& quad, double scale) {
  const Objective obj = Objective::quadrature(spec, quad, scale);
  double total = 0.0;
  for (std::size_t j = 0; j < obj.size(); ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    const double e = eta(obj.covariates().z.row(r).transpose());
    const double lam = scale * spec.intensity(theta, obj.covariates().y.row(r).transpose(), e);
    if (quad.is_data()[j]) {
      if (!(lam > 0.0)) throw error(errc::nonpositive_intensity, "scale * lambda <= 0 at a data node");
      total += std::log(lam);
    }
    total -= quad.weights()[j] * lam;
  }
  return total;
}

//! Logistic-regression approximation for a fixed eta(z):
//! sum_data log(l / (l + rho)) + sum_dummy log(rho / (l + rho)).
inline double logistic_loglik(const ModelSpec& spec, const Vec& theta,
                              const std::function<double(const Vec&)>& eta,
                              const PointPattern& pattern, const PointPattern& dummy, double rho) {
  if (!(rho > 0.0)) throw error(errc::invalid_argument, "dummy intensity must be positive");
  double total = 0.0;
  auto add = [&](const PointPattern& p, bool data) {
    const Covariates c = spec.covariates_at(p.points());
    for (Eigen::Index j = 0; j < c.y.rows(); ++j) {
      const double lam = spec.intensity(theta, c.y.row(j).transpose(), eta(c.z.row(j).transpose()));
      if (!(lam > 0.0)) throw error(errc::nonpositive_intensity, "lambda <= 0 at a node");
      total += data ? std::log(lam / (lam + rho)) : std::log(rho / (lam + rho));
    }
  };
  add(pattern, true);
  add(dummy, false);
  return total;
}

// ---------------------------------------------------------------------------
// Profile maximization

struct OptimizerOptions {
  double tol = 1e-8;        //!< stop when max |score| <= tol * |A|
  int max_iter = 100;
  double armijo_c = 1e-4;
  int max_halvings = 60;
};

struct OptimizerResult {
  Vec theta;
  int iterations = 0;
  double score_norm = 0.0;
  double value = 0.0;
  int gradient_steps = 0;
};

//! Damped Newton ascent with Armijo backtracking; falls back to gradient
//! ascent where the Hessian is not negative definite.
inline OptimizerResult profile_maximize(const ModelSpec& spec, const Objective& obj,
                                        const ProfileCurve& curve, const Vec& init,
                                        const OptimizerOptions& opts = {}) {
  if (init.size() != spec.k() || !init.allFinite()) {
    throw error(errc::invalid_argument, "initial theta must be finite with k components");
  }
  const double stop = opts.tol * obj.window().area();
  OptimizerResult res{init};
  auto safe_value = [&](const Vec& th) {
    try {
      return profile_value(spec, obj, curve, th);
    } catch (const error&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  ProfileDerivatives cur = profile_derivatives(spec, obj, curve, res.theta);
  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    res.score_norm = cur.score.lpNorm<Eigen::Infinity>();
    res.value = cur.value;
    if (res.score_norm <= stop) return res;

    Eigen::LLT<Mat> llt(-cur.hessian);
    const bool newton_ok = llt.info() == Eigen::Success;
    Vec dir = newton_ok ? Vec(llt.solve(cur.score)) : Vec(cur.score);
    bool moved = false;
    // predicted gain within the rounding noise of a sum over many nodes:
    // Armijo cannot discriminate, so take the Newton step as is
    const double noise = 1e-11 * (1.0 + std::abs(cur.value));
    if (newton_ok && cur.score.dot(dir) <= noise) {
      res.theta += dir;
      moved = true;
    }
    for (int attempt = 0; attempt < 2 && !moved; ++attempt) {
      const bool gradient_step = !newton_ok || attempt == 1;
      if (attempt == 1) {
        if (!newton_ok) break;
        dir = cur.score;
      }
      if (gradient_step) {
        // unit-length first trial; Armijo halves from there
        dir /= std::max(1.0, dir.norm());
        ++res.gradient_steps;
      }
      const double slope = cur.score.dot(dir);
      double step = 1.0;
      for (int h = 0; h < opts.max_halvings; ++h, step *= 0.5) {
        const Vec trial = res.theta + step * dir;
        const double v = safe_value(trial);
        if (std::isfinite(v) && v >= cur.value + opts.armijo_c * step * slope) {
          res.theta = trial;
          moved = true;
          break;
        }
      }
    }
    if (!moved) {
      if (!newton_ok) {
        throw error(errc::singular_hessian, "Hessian not negative definite and gradient ascent stalled");
      }
      // line search exhausted at floating-point resolution
      if (res.score_norm <= 1e3 * stop) return res;
      throw error(errc::non_convergence, "line search stalled with |score| = " + std::to_string(res.score_norm));
    }
    cur = profile_derivatives(spec, obj, curve, res.theta);
  }
  res.score_norm = cur.score.lpNorm<Eigen::Infinity>();
  res.value = cur.value;
  if (res.score_norm <= stop) return res;
  throw error(errc::non_convergence, "no convergence after " + std::to_string(opts.max_iter) +
                                       " iterations, |score| = " + std::to_string(res.score_norm));
}

// ---------------------------------------------------------------------------
// Parametric baselines

enum class NuisanceForm { linear, oracle };

struct BaselineFit {
  Vec theta;        //!< the k target coefficients
  Vec coefficients; //!< all fitted coefficients (theta, then intercept and z slopes for linear)
  ModelSpec design; //!< augmented log-linear model used for the fit
  std::function<double(const Vec&)> offset; //!< fixed eta(z) (zero for linear)
  OptimizerResult optimizer;
};

//! Log-linear fit with eta replaced by b0 + b'z (jointly estimated) or by a
//! known oracle function.
inline BaselineFit fit_parametric_baseline(const ModelSpec& spec, const QuadratureScheme& quad,
                                           NuisanceForm form,
                                           std::function<double(const Vec&)> oracle = {},
                                           const OptimizerOptions& opts = {}) {
  if (spec.link() != Link::log_linear) {
    throw error(errc::invalid_argument, "parametric baselines need the log-linear link");
  }
  std::vector<GridField> design = spec.target_fields();
  std::function<double(const Vec&)> offset = [](const Vec&) { return 0.0; };
  if (form == NuisanceForm::linear) {
    const GridField& ref = spec.target_fields().front();
    design.push_back(GridField::constant(ref.window(), ref.nx(), ref.ny(), 1.0));
    for (const auto& z : spec.nuisance_fields()) design.push_back(z);
  } else {
    if (!oracle) throw error(errc::invalid_argument, "oracle baseline needs an eta function");
    offset = std::move(oracle);
  }
  ModelSpec aug = ModelSpec::log_linear(design, spec.nuisance_fields());
  const Objective obj = Objective::quadrature(aug, quad, 1.0);
  const FixedCurve curve(offset, obj.covariates().z, aug.k());
  Vec init = Vec::Zero(aug.k());
  if (form == NuisanceForm::linear) {
    init[spec.k()] = std::log(std::max<std::size_t>(quad.data_count(), 1) / quad.window().area());
  }
  OptimizerResult r = profile_maximize(aug, obj, curve, init, opts);
  return {r.theta.head(spec.k()), r.theta, std::move(aug), std::move(offset), r};
}

} // namespace ppcf
