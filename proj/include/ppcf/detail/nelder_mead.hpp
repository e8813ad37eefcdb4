#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>

namespace ppcf::detail {

//! Nelder-Mead simplex minimizer over R^N with standard coefficients.
template <std::size_t N, class F>
std::array<double, N> nelder_mead(F&& f, std::array<double, N> start, double step, int max_evals = 400,
                                  double ftol = 1e-10) {
  using P = std::array<double, N>;
  std::array<P, N + 1> x;
  std::array<double, N + 1> fx;
  x[0] = start;
  for (std::size_t i = 0; i < N; ++i) {
    x[i + 1] = start;
    x[i + 1][i] += step;
  }
  for (std::size_t i = 0; i <= N; ++i) fx[i] = f(x[i]);
  int evals = static_cast<int>(N + 1);

  auto blend = [](const P& a, const P& b, double t) {
    P r;
    for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + t * (b[i] - a[i]);
    return r;
  };

  std::array<std::size_t, N + 1> order;
  while (evals < max_evals) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
    const std::size_t best = order[0], worst = order[N], second = order[N - 1];
    if (std::abs(fx[worst] - fx[best]) <= ftol * (std::abs(fx[best]) + ftol)) break;

    P centroid{};
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t k = order[i];
      for (std::size_t d = 0; d < N; ++d) centroid[d] += x[k][d] / static_cast<double>(N);
    }
    const P xr = blend(centroid, x[worst], -1.0);
    const double fr = f(xr);
    ++evals;
    if (fr < fx[best]) {
      const P xe = blend(centroid, x[worst], -2.0);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        x[worst] = xe;
        fx[worst] = fe;
      } else {
        x[worst] = xr;
        fx[worst] = fr;
      }
      continue;
    }
    if (fr < fx[second]) {
      x[worst] = xr;
      fx[worst] = fr;
      continue;
    }
    const bool outside = fr < fx[worst];
    const P xc = blend(centroid, outside ? xr : x[worst], 0.5);
    const double fc = f(xc);
    ++evals;
    if (fc < (outside ? fr : fx[worst])) {
      x[worst] = xc;
      fx[worst] = fc;
      continue;
    }
    for (std::size_t i = 1; i <= N; ++i) {
      const std::size_t k = order[i];
      x[k] = blend(x[best], x[k], 0.5);
      fx[k] = f(x[k]);
      ++evals;
    }
  }
  const auto it = std::min_element(fx.begin(), fx.end());
  return x[static_cast<std::size_t>(it - fx.begin())];
}

} // namespace ppcf::detail
