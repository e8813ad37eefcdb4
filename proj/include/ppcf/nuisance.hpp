#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ppcf/error.hpp"
#include "ppcf/kernel.hpp"
#include "ppcf/model.hpp"

namespace ppcf {

//! eta_theta(z) and its theta-derivatives at one z.
struct EtaDerivatives {
  double eta = 0.0;
  Vec d1;
  Mat d2;
  bool clipped = false;
};

//! Spatial kernel-regression estimate of the least favorable curve
//! theta -> eta_theta(z), trained on one quadrature scheme.
//!
//! The kernel weights at a query z are renormalized by their total
//! quadrature mass, which also serves as the boundary correction. Nuisance
//! covariates are standardized by the training scheme's area-weighted
//! moments, so the bandwidth is in standard-deviation units. Estimates are
//! clipped to the compact range H = [eta_lo, eta_hi].
class NuisanceFit {
public:
  NuisanceFit(const ModelSpec& spec, const QuadratureScheme& train, KernelSpec kernel, double scale,
              std::optional<std::pair<double, double>> range = std::nullopt)
    : spec_(std::make_shared<ModelSpec>(spec)), kernel_(kernel), scale_(scale) {
    if (!(scale > 0.0)) throw error(errc::invalid_argument, "nuisance scale must be positive");
    const Covariates cov = spec.covariates_at(train.nodes());
    y_ = cov.y;
    weights_ = Eigen::Map<const Vec>(train.weights().data(), static_cast<Eigen::Index>(train.size()));
    is_data_ = Vec(static_cast<Eigen::Index>(train.size()));
    for (std::size_t j = 0; j < train.size(); ++j) is_data_[static_cast<Eigen::Index>(j)] = train.is_data()[j] ? 1.0 : 0.0;
    data_count_ = train.data_count();

    const double total = weights_.sum();
    z_mean_ = (cov.z.transpose() * weights_) / total;
    z_scale_ = Vec(spec.q());
    for (int b = 0; b < spec.q(); ++b) {
      const double var = (cov.z.col(b).array() - z_mean_[b]).square().matrix().dot(weights_) / total;
      z_scale_[b] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    zs_ = standardize_rows(cov.z);

    if (range) {
      eta_lo_ = range->first;
      eta_hi_ = range->second;
    } else {
      const double rate = scale * static_cast<double>(std::max<std::size_t>(data_count_, 1)) / train.window().area();
      eta_lo_ = std::log(1e-6 * rate);
      eta_hi_ = std::log(1e6 * rate);
    }
    if (!(eta_hi_ > eta_lo_)) throw error(errc::invalid_argument, "empty nuisance range H");
  }

  const ModelSpec& spec() const { return *spec_; }
  const KernelSpec& kernel() const { return kernel_; }
  double scale() const { return scale_; }
  std::pair<double, double> range() const { return {eta_lo_, eta_hi_}; }
  std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }
  std::size_t data_count() const { return data_count_; }
  const Vec& weights() const { return weights_; }
  const Vec& data_indicator() const { return is_data_; }
  const Mat& y() const { return y_; }
  const Mat& z_standardized() const { return zs_; }
  std::size_t clip_count() const { return clip_count_.load(); }
  void count_clip(std::size_t n = 1) const { clip_count_ += n; }

  Vec standardize(const Vec& z) const { return (z - z_mean_).cwiseQuotient(z_scale_); }

  Mat standardize_rows(const Mat& z) const {
    Mat out = z;
    for (Eigen::Index b = 0; b < z.cols(); ++b) out.col(b) = (z.col(b).array() - z_mean_[b]) / z_scale_[b];
    return out;
  }

  //! Mass-normalized kernel weights K_h(z_j - z) / sum_j w_j K_h(z_j - z)
  //! over the training nodes, for a query z in original units.
  Vec kernel_weights(const Vec& z) const { return normalized_weights_std(standardize(z)); }

  Vec normalized_weights_std(const Vec& zs) const {
    Vec k(zs_.rows());
    Vec d(zs.size());
    for (Eigen::Index j = 0; j < zs_.rows(); ++j) {
      d = zs_.row(j).transpose() - zs;
      k[j] = kernel_(d);
    }
    const double mass = k.dot(weights_);
    if (!(mass > 0.0) || !std::isfinite(mass)) {
      throw error(errc::zero_mass, "no kernel mass at this z; bandwidth too small");
    }
    return k / mass;
  }

  //! Kernel-weighted per-z objective
  //! sum_data K log(s Psi(tau_j, gamma)) - sum_j w_j K s Psi(tau_j, gamma).
  double kernel_objective(const Vec& theta, double gamma, const Vec& z) const {
    return objective_with(kernel_weights(z), theta, gamma);
  }

  //! Closed form for the log-linear link, numeric argmax otherwise; clipped to H.
  double fit_eta(const Vec& theta, const Vec& z) const { return evaluate(theta, z, false).eta; }
  Vec eta_dtheta(const Vec& theta, const Vec& z) const { return evaluate(theta, z, true).d1; }
  Mat eta_d2theta(const Vec& theta, const Vec& z) const { return evaluate(theta, z, true).d2; }

  EtaDerivatives evaluate(const Vec& theta, const Vec& z, bool derivatives = true) const {
    return evaluate_with(kernel_weights(z), theta, derivatives);
  }

  //! Scan + golden-section argmax of kernel_objective over H, polished by
  //! bisection on its analytic gamma-derivative.
  double fit_eta_numeric(const Vec& theta, const Vec& z) const {
    return numeric_argmax(kernel_weights(z), theta);
  }

  EtaDerivatives evaluate_with(const Vec& kw, const Vec& theta, bool derivatives) const {
    const int k = spec_->k();
    EtaDerivatives out{0.0, Vec::Zero(k), Mat::Zero(k, k), false};
    if (spec_->link() == Link::log_linear) {
      const double num = kw.dot(is_data_);
      const Vec a = weights_.cwiseProduct(kw).cwiseProduct((y_ * theta).array().exp().matrix());
      const double den = a.sum();
      if (!(den > 0.0) || !std::isfinite(den)) throw error(errc::zero_denominator, "tilted kernel mass is not positive");
      double eta = num > 0.0 ? std::log(num / (scale_ * den)) : eta_lo_;
      out.clipped = !(num > 0.0) || eta < eta_lo_ || eta > eta_hi_;
      out.eta = std::clamp(eta, eta_lo_, eta_hi_);
      if (out.clipped) {
        count_clip();
        return out;
      }
      if (derivatives) {
        const Vec mean = y_.transpose() * a / den;
        const Mat second = y_.transpose() * a.asDiagonal() * y_ / den;
        out.d1 = -mean;
        out.d2 = -(second - mean * mean.transpose());
      }
      return out;
    }
    out.eta = numeric_argmax(kw, theta);
    out.clipped = out.eta <= eta_lo_ || out.eta >= eta_hi_;
    if (out.clipped) {
      count_clip();
      return out;
    }
    if (derivatives) {
      out.d1 = implicit_d1(kw, theta, out.eta);
      // second implicit derivative would need third link partials; use
      // central differences of the analytic first derivative instead
      const double h = 1e-5;
      for (int a = 0; a < k; ++a) {
        Vec tp = theta, tm = theta;
        tp[a] += h;
        tm[a] -= h;
        out.d2.col(a) = (implicit_d1(kw, tp, numeric_argmax(kw, tp)) -
                         implicit_d1(kw, tm, numeric_argmax(kw, tm))) / (2 * h);
      }
      out.d2 = 0.5 * (out.d2 + out.d2.transpose()).eval();
    }
    return out;
  }

  //! d eta / d theta = -F_theta / F_gamma at gamma, where F is the
  //! gamma-derivative of the kernel objective.
  Vec implicit_d1(const Vec& kw, const Vec& theta, double gamma) const {
    const int k = spec_->k();
    double f_gamma = 0.0;
    Vec f_theta = Vec::Zero(k);
    for (Eigen::Index j = 0; j < y_.rows(); ++j) {
      if (kw[j] == 0.0) continue;
      const Vec yj = y_.row(j).transpose();
      const PsiValues p = spec_->psi(spec_->tau(theta, yj), gamma);
      const Vec gt = spec_->tau_gradient(theta, yj);
      double cg = -weights_[j] * scale_ * p.d_etaeta;
      double ct = -weights_[j] * scale_ * p.d_teta;
      if (is_data_[j] != 0.0) {
        cg += p.d_etaeta / p.value - p.d_eta * p.d_eta / (p.value * p.value);
        ct += p.d_teta / p.value - p.d_t * p.d_eta / (p.value * p.value);
      }
      f_gamma += kw[j] * cg;
      f_theta += kw[j] * ct * gt;
    }
    if (!(std::abs(f_gamma) > 0.0)) throw error(errc::zero_denominator, "flat kernel objective in gamma");
    return -f_theta / f_gamma;
  }

  double objective_with(const Vec& kw, const Vec& theta, double gamma) const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < y_.rows(); ++j) {
      if (kw[j] == 0.0) continue;
      const double psi = spec_->psi(spec_->tau(theta, y_.row(j).transpose()), gamma).value;
      if (is_data_[j] != 0.0) {
        if (!(psi > 0.0)) throw error(errc::nonpositive_intensity, "Psi <= 0 at a training point");
        total += kw[j] * std::log(scale_ * psi);
      }
      total -= weights_[j] * kw[j] * scale_ * psi;
    }
    return total;
  }

private:
  double objective_slope(const Vec& kw, const Vec& theta, double gamma) const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < y_.rows(); ++j) {
      if (kw[j] == 0.0) continue;
      const PsiValues p = spec_->psi(spec_->tau(theta, y_.row(j).transpose()), gamma);
      if (is_data_[j] != 0.0) total += kw[j] * p.d_eta / p.value;
      total -= weights_[j] * kw[j] * scale_ * p.d_eta;
    }
    return total;
  }

  double numeric_argmax(const Vec& kw, const Vec& theta) const {
    const int scan = 32;
    const double step = (eta_hi_ - eta_lo_) / (scan - 1);
    int best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < scan; ++i) {
      const double v = objective_with(kw, theta, eta_lo_ + step * i);
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    double a = eta_lo_ + step * std::max(best - 1, 0);
    double b = eta_lo_ + step * std::min(best + 1, scan - 1);
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = objective_with(kw, theta, c), fd = objective_with(kw, theta, d);
    while (b - a > 1e-6) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = objective_with(kw, theta, c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = objective_with(kw, theta, d);
      }
    }
    // widen slightly and bisect on the slope for full precision
    double lo = std::max(eta_lo_, a - 1e-6), hi = std::min(eta_hi_, b + 1e-6);
    double slo = objective_slope(kw, theta, lo), shi = objective_slope(kw, theta, hi);
    if (!(slo > 0.0 && shi < 0.0)) return 0.5 * (a + b);
    while (hi - lo > 1e-13 * std::max(1.0, std::abs(lo))) {
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      const double s = objective_slope(kw, theta, mid);
      if (s > 0.0) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
  }

  std::shared_ptr<const ModelSpec> spec_;
  KernelSpec kernel_;
  double scale_;
  Mat y_;
  Mat zs_;
  Vec weights_;
  Vec is_data_;
  std::size_t data_count_ = 0;
  Vec z_mean_, z_scale_;
  double eta_lo_ = 0.0, eta_hi_ = 0.0;
  mutable std::atomic<std::size_t> clip_count_{0};
};

// ---------------------------------------------------------------------------
// Tabulation for one-dimensional z: eta_theta and its derivatives on a fixed
// z grid with linear interpolation in between. The kernel matrix between the
// grid and the training nodes does not depend on theta and is built once.

//! eta, d1 (G x k) and d2 (G x k*k) on the z grid at one theta.
struct GridTable {
  Vec z;
  Vec eta;
  Mat d1;
  Mat d2;
};

//! The fitted curve on a uniform grid of G z values (q = 1), from which
//! evaluation nodes interpolate. For the log-linear link the per-node sums
//! are linearly binned onto `bins` points in z before the kernel is applied,
//! so each theta costs O(m + G bins); bins = 0 keeps the dense G x m matrix.
class NuisanceTable {
public:
  NuisanceTable(std::shared_ptr<const NuisanceFit> fit, double z_lo, double z_hi, std::size_t points,
                std::size_t bins = 2048)
    : fit_(std::move(fit)) {
    if (fit_->spec().q() != 1) throw error(errc::invalid_argument, "tabulation needs a scalar nuisance covariate");
    if (points < 2) throw error(errc::invalid_argument, "tabulation needs at least 2 grid points");
    if (bins == 1) throw error(errc::invalid_argument, "binning needs at least 2 bins");
    if (!(z_hi > z_lo)) z_hi = z_lo + 1e-9 * std::max(1.0, std::abs(z_lo));
    z_ = Vec::LinSpaced(static_cast<Eigen::Index>(points), z_lo, z_hi);
    const bool log_linear = fit_->spec().link() == Link::log_linear;
    if (log_linear && bins > 0) {
      build_binned(bins);
    } else {
      build_dense();
    }
    if (log_linear) numerator_ = kmat_ * reduce(fit_->data_indicator());
  }

  const NuisanceFit& fit() const { return *fit_; }
  std::shared_ptr<const NuisanceFit> fit_ptr() const { return fit_; }
  double z_lo() const { return z_[0]; }
  double z_hi() const { return z_[z_.size() - 1]; }
  bool binned() const { return !bin_index_.empty(); }

  GridTable table(const Vec& theta) const {
    const NuisanceFit& nf = *fit_;
    const int k = nf.spec().k();
    const Eigen::Index G = z_.size();
    GridTable t{z_, Vec(G), Mat::Zero(G, k), Mat::Zero(G, k * k)};
    if (nf.spec().link() != Link::log_linear) {
      for (Eigen::Index g = 0; g < G; ++g) {
        const EtaDerivatives e = nf.evaluate_with(kmat_.row(g).transpose(), theta, true);
        t.eta[g] = e.eta;
        t.d1.row(g) = e.d1.transpose();
        for (int a = 0; a < k; ++a) {
          for (int b = 0; b < k; ++b) t.d2(g, a * k + b) = e.d2(a, b);
        }
      }
      return t;
    }
    const Mat& y = nf.y();
    const Vec a = nf.weights().cwiseProduct((y * theta).array().exp().matrix());
    const int cols = 1 + k + k * k;
    Mat B(y.rows(), cols);
    B.col(0) = a;
    for (int i = 0; i < k; ++i) B.col(1 + i) = a.cwiseProduct(y.col(i));
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) B.col(1 + k + i * k + j) = B.col(1 + i).cwiseProduct(y.col(j));
    }
    const Mat P = kmat_ * reduce(B);
    const auto [lo, hi] = nf.range();
    std::size_t clipped = 0;
    for (Eigen::Index g = 0; g < G; ++g) {
      const double den = P(g, 0), num = numerator_[g];
      if (!(den > 0.0) || !std::isfinite(den)) throw error(errc::zero_denominator, "tilted kernel mass is not positive");
      const double eta = num > 0.0 ? std::log(num / (nf.scale() * den)) : lo;
      if (!(num > 0.0) || eta < lo || eta > hi) {
        t.eta[g] = std::clamp(eta, lo, hi);
        ++clipped;
        continue;
      }
      t.eta[g] = eta;
      for (int i = 0; i < k; ++i) t.d1(g, i) = -P(g, 1 + i) / den;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          t.d2(g, i * k + j) = -(P(g, 1 + k + i * k + j) / den - t.d1(g, i) * t.d1(g, j));
        }
      }
    }
    if (clipped) nf.count_clip(clipped);
    return t;
  }

  //! Tilted kernel mean -sum w K e^{theta'y} y / sum w K e^{theta'y} on the
  //! grid (G x k), unaffected by clipping of eta. Log-linear link only.
  Mat tilted_mean_grid(const Vec& theta) const {
    const NuisanceFit& nf = *fit_;
    if (nf.spec().link() != Link::log_linear) throw error(errc::invalid_argument, "tilted mean needs the log-linear link");
    const Mat& y = nf.y();
    const int k = nf.spec().k();
    const Vec a = nf.weights().cwiseProduct((y * theta).array().exp().matrix());
    Mat B(y.rows(), 1 + k);
    B.col(0) = a;
    for (int i = 0; i < k; ++i) B.col(1 + i) = a.cwiseProduct(y.col(i));
    const Mat P = kmat_ * reduce(B);
    Mat out(P.rows(), k);
    for (Eigen::Index g = 0; g < P.rows(); ++g) {
      if (!(P(g, 0) > 0.0)) throw error(errc::zero_denominator, "tilted kernel mass is not positive");
      out.row(g) = -P.row(g).tail(k) / P(g, 0);
    }
    return out;
  }

  const Vec& z_grid() const { return z_; }

private:
  void build_dense() {
    const std::size_t m = fit_->size();
    kmat_.resize(z_.size(), static_cast<Eigen::Index>(m));
    Vec zq(1);
    for (Eigen::Index g = 0; g < z_.size(); ++g) {
      zq[0] = z_[g];
      kmat_.row(g) = fit_->kernel_weights(zq).transpose();
    }
  }

  void build_binned(std::size_t bins) {
    const Mat& zs = fit_->z_standardized();
    double lo = zs.col(0).minCoeff(), hi = zs.col(0).maxCoeff();
    if (!(hi > lo)) hi = lo + 1e-9 * std::max(1.0, std::abs(lo));
    const auto nb = static_cast<Eigen::Index>(bins);
    const double step = (hi - lo) / static_cast<double>(nb - 1);
    bin_index_.resize(static_cast<std::size_t>(zs.rows()));
    bin_frac_.resize(static_cast<std::size_t>(zs.rows()));
    for (Eigen::Index j = 0; j < zs.rows(); ++j) {
      const double f = std::clamp((zs(j, 0) - lo) / step, 0.0, static_cast<double>(nb - 1));
      auto i = std::min(static_cast<Eigen::Index>(f), nb - 2);
      bin_index_[static_cast<std::size_t>(j)] = i;
      bin_frac_[static_cast<std::size_t>(j)] = f - static_cast<double>(i);
    }
    bins_ = nb;
    const Vec mass_per_bin = reduce(fit_->weights());
    const KernelSpec& kernel = fit_->kernel();
    kmat_.resize(z_.size(), nb);
    Vec zq(1), d(1);
    for (Eigen::Index g = 0; g < z_.size(); ++g) {
      zq[0] = z_[g];
      const double zg = fit_->standardize(zq)[0];
      for (Eigen::Index b = 0; b < nb; ++b) {
        d[0] = lo + step * static_cast<double>(b) - zg;
        kmat_(g, b) = kernel(d);
      }
      const double mass = kmat_.row(g).dot(mass_per_bin);
      if (!(mass > 0.0) || !std::isfinite(mass)) {
        throw error(errc::zero_mass, "no kernel mass at this z; bandwidth too small");
      }
      kmat_.row(g) /= mass;
    }
  }

  //! Per-node columns to the representation kmat_ acts on.
  Mat reduce(const Mat& node_values) const {
    if (bin_index_.empty()) return node_values;
    Mat out = Mat::Zero(bins_, node_values.cols());
    for (std::size_t j = 0; j < bin_index_.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      const double f = bin_frac_[j];
      out.row(bin_index_[j]) += (1.0 - f) * node_values.row(r);
      out.row(bin_index_[j] + 1) += f * node_values.row(r);
    }
    return out;
  }

  std::shared_ptr<const NuisanceFit> fit_;
  Vec z_;
  Mat kmat_;
  Vec numerator_;
  Eigen::Index bins_ = 0;
  std::vector<Eigen::Index> bin_index_;
  std::vector<double> bin_frac_;
};

//! Linear-interpolation stencil on a uniform grid.
struct Stencil {
  Eigen::Index index = 0;
  double t = 0.0;
};

inline Stencil locate_on(const Vec& grid, double z) {
  const Eigen::Index G = grid.size();
  const double step = (grid[G - 1] - grid[0]) / static_cast<double>(G - 1);
  double f = (z - grid[0]) / step;
  f = std::clamp(f, 0.0, static_cast<double>(G - 1));
  auto i = static_cast<Eigen::Index>(f);
  if (i >= G - 1) i = G - 2;
  return {i, f - static_cast<double>(i)};
}

inline double interpolate(const GridTable& t, double z) {
  const Stencil s = locate_on(t.z, z);
  return (1.0 - s.t) * t.eta[s.index] + s.t * t.eta[s.index + 1];
}

//! Profile curve bound to evaluation nodes, read off a NuisanceTable.
class TabulatedCurve : public ProfileCurve {
public:
  TabulatedCurve(std::shared_ptr<const NuisanceTable> table, const Mat& eval_z) : table_(std::move(table)) {
    stencils_.reserve(static_cast<std::size_t>(eval_z.rows()));
    for (Eigen::Index j = 0; j < eval_z.rows(); ++j) {
      const double z = eval_z(j, 0);
      if (z < table_->z_lo() - 1e-12 || z > table_->z_hi() + 1e-12) {
        throw error(errc::invalid_argument, "evaluation node outside the tabulated z range");
      }
      stencils_.push_back(z);
    }
  }

  CurveEval evaluate(const Vec& theta) const override { return read(table_->table(theta)); }

  CurveEval read(const GridTable& t) const {
    const auto m = static_cast<Eigen::Index>(stencils_.size());
    CurveEval c{Vec(m), Mat(m, t.d1.cols()), Mat(m, t.d2.cols())};
    for (Eigen::Index j = 0; j < m; ++j) {
      const Stencil s = locate_on(t.z, stencils_[static_cast<std::size_t>(j)]);
      const double u = s.t, v = 1.0 - s.t;
      c.eta[j] = v * t.eta[s.index] + u * t.eta[s.index + 1];
      c.d1.row(j) = v * t.d1.row(s.index) + u * t.d1.row(s.index + 1);
      c.d2.row(j) = v * t.d2.row(s.index) + u * t.d2.row(s.index + 1);
    }
    return c;
  }

private:
  std::shared_ptr<const NuisanceTable> table_;
  std::vector<double> stencils_;
};

//! Profile curve evaluating the kernel estimator exactly at every node
//! (any q; cost grows with nodes x training nodes).
class ExactCurve : public ProfileCurve {
public:
  ExactCurve(std::shared_ptr<const NuisanceFit> fit, const Mat& eval_z) : fit_(std::move(fit)) {
    weights_.reserve(static_cast<std::size_t>(eval_z.rows()));
    for (Eigen::Index j = 0; j < eval_z.rows(); ++j) {
      weights_.push_back(fit_->kernel_weights(eval_z.row(j).transpose()));
    }
  }

  CurveEval evaluate(const Vec& theta) const override {
    const int k = fit_->spec().k();
    const auto m = static_cast<Eigen::Index>(weights_.size());
    CurveEval c{Vec(m), Mat(m, k), Mat(m, k * k)};
    for (Eigen::Index j = 0; j < m; ++j) {
      const EtaDerivatives e = fit_->evaluate_with(weights_[static_cast<std::size_t>(j)], theta, true);
      c.eta[j] = e.eta;
      c.d1.row(j) = e.d1.transpose();
      for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) c.d2(j, a * k + b) = e.d2(a, b);
      }
    }
    return c;
  }

private:
  std::shared_ptr<const NuisanceFit> fit_;
  std::vector<Vec> weights_;
};

} // namespace ppcf
