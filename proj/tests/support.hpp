#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "ppcf/ppcf.hpp"

namespace ppcf::test {

//! Grid field sampled from a function at the lattice nodes.
inline GridField sample_field(const Window& w, std::size_t n, const std::function<double(double, double)>& f) {
  std::vector<double> v(n * n);
  const double dx = w.width() / static_cast<double>(n - 1), dy = w.height() / static_cast<double>(n - 1);
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      v[iy * n + ix] = f(w.x_min + dx * static_cast<double>(ix), w.y_min + dy * static_cast<double>(iy));
    }
  }
  return GridField(w, n, n, std::move(v));
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  double se() const { return sd / std::sqrt(static_cast<double>(n)); }
  std::size_t n = 0;
};

inline Moments moments(const std::vector<double>& x) {
  Moments m;
  m.n = x.size();
  m.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - m.mean) * (v - m.mean);
  m.sd = std::sqrt(ss / static_cast<double>(x.size() - 1));
  return m;
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const Moments ma = moments(a), mb = moments(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma.mean) * (b[i] - mb.mean);
  return s / (static_cast<double>(a.size() - 1) * ma.sd * mb.sd);
}

inline double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

//! Small random log-linear instance: k target GRFs, one nuisance GRF.
struct Instance {
  ModelSpec spec;
  PointPattern pattern;
};

inline Instance random_instance(std::uint64_t seed, int k = 1, double side = 1.0, double rate = 200.0,
                                std::size_t lattice = 33) {
  const Window w = square_window(side);
  const GrfSpec grf{1.0, 0.1, 0.0};
  std::vector<GridField> ys;
  for (int a = 0; a < k; ++a) ys.push_back(simulate_grf(w, lattice, lattice, grf, derive_seed(seed, stream::target_field, a)));
  GridField z = simulate_grf(w, lattice, lattice, grf, derive_seed(seed, stream::nuisance_field));
  const std::vector<GridField> ys_copy = ys;
  const GridField z_copy = z;
  auto lam = [ys_copy, z_copy, rate](double x, double y) {
    double t = 0.0;
    for (const auto& f : ys_copy) t += 0.2 * f(x, y);
    return rate * std::exp(t + 0.3 * z_copy(x, y));
  };
  PointPattern p = simulate_poisson(IntensitySurface::from_lattice_max(w, lam, 4 * lattice - 3, 4 * lattice - 3),
                                    derive_seed(seed, stream::pattern));
  return {ModelSpec::log_linear(std::move(ys), {std::move(z)}), std::move(p)};
}

} // namespace ppcf::test
