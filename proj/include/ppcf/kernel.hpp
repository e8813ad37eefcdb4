#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "ppcf/error.hpp"

namespace ppcf {

enum class KernelBase {
  gaussian,   //!< order 2, unbounded support
  quartic,    //!< order 4 polynomial (15/32)(3 - 10u^2 + 7u^4) on [-1, 1]
};

//! Univariate l-th order kernel with bandwidth h; q-variate kernels are
//! products of the univariate one.
class KernelSpec {
public:
  KernelSpec() : KernelSpec(KernelBase::gaussian, 1.0) {}

  KernelSpec(KernelBase base, double bandwidth) : base_(base), bandwidth_(bandwidth) {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
      throw error(errc::invalid_argument, "kernel bandwidth must be positive");
    }
    verify_moments();
  }

  static KernelSpec of_order(int order, double bandwidth) {
    if (order == 2) return {KernelBase::gaussian, bandwidth};
    if (order == 4) return {KernelBase::quartic, bandwidth};
    throw error(errc::invalid_argument, "built-in kernels have order 2 or 4, got " + std::to_string(order));
  }

  KernelBase base() const { return base_; }
  double bandwidth() const { return bandwidth_; }
  int order() const { return base_ == KernelBase::gaussian ? 2 : 4; }

  KernelSpec with_bandwidth(double h) const { return {base_, h}; }

  //! Unscaled univariate kernel k(u).
  double unit(double u) const {
    switch (base_) {
      case KernelBase::gaussian:
        return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
      case KernelBase::quartic: {
        if (std::abs(u) > 1.0) return 0.0;
        const double u2 = u * u;
        return (15.0 / 32.0) * (3.0 - 10.0 * u2 + 7.0 * u2 * u2);
      }
    }
    return 0.0;
  }

  //! K_h(d) = h^-q prod_i k(d_i / h) over the q coordinates of d.
  template <class Vec>
  double operator()(const Vec& d) const {
    double v = 1.0;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(d.size()); ++i) {
      v *= unit(d[i] / bandwidth_) / bandwidth_;
    }
    return v;
  }

  //! Numerical moment integral_{-inf}^{inf} u^p k(u) du.
  double moment(int p) const {
    const double lim = base_ == KernelBase::gaussian ? 12.0 : 1.0;
    const int n = 4000;  // composite Simpson, even panel count
    const double step = 2.0 * lim / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double u = -lim + step * i;
      const double wgt = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      s += wgt * std::pow(u, p) * unit(u);
    }
    return s * step / 3.0;
  }

private:
  void verify_moments() const {
    const int l = order();
    if (std::abs(moment(0) - 1.0) > 1e-6) throw error(errc::invalid_argument, "kernel does not integrate to 1");
    for (int i = 1; i < l; ++i) {
      if (std::abs(moment(i)) > 1e-6) throw error(errc::invalid_argument, "kernel moment condition fails");
    }
    if (std::abs(moment(l)) < 1e-6) throw error(errc::invalid_argument, "kernel order is higher than declared");
  }

  KernelBase base_;
  double bandwidth_;
};

//! Rate exponent alpha / (l + q + beta) with alpha = (m-1)/(k+q+m+1) and
//! beta = (k+q+1)/(k+q+m+1); bandwidths shrink like |A|^-exponent.
inline double bandwidth_exponent(int q, int k, int l, int m) {
  if (q < 1 || k < 1 || l < 2 || m < 2) {
    throw error(errc::invalid_argument, "bandwidth rule needs q, k >= 1, l >= 2, m >= 2");
  }
  const double denom = static_cast<double>(k + q + m + 1);
  const double alpha = (m - 1) / denom;
  const double beta = (k + q + 1) / denom;
  return alpha / (l + q + beta);
}

//! h = c0 * |A|^(-alpha / (l + q + beta)), in standardized-z units.
inline double default_bandwidth(double window_area, int q, int k, int l, int m, double c0 = 1.0) {
  if (!(window_area > 0.0)) throw error(errc::invalid_argument, "window area must be positive");
  return c0 * std::pow(window_area, -bandwidth_exponent(q, k, l, m));
}

} // namespace ppcf
