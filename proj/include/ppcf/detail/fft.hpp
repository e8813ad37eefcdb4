#pragma once

#include <algorithm>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace ppcf::detail {

using cvec = std::vector<std::complex<double>>;

//! In-place, unscaled 2-d DFT of an nx-by-ny array stored with x fastest
//! (index iy*nx + ix). forward=false applies the conjugate transform without
//! the 1/(nx*ny) factor.
inline void fft2(cvec& data, std::size_t nx, std::size_t ny, bool forward) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  cvec in(std::max(nx, ny)), out(std::max(nx, ny));

  in.resize(nx);
  for (std::size_t iy = 0; iy < ny; ++iy) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(iy * nx), nx, in.begin());
    if (forward) fft.fwd(out, in); else fft.inv(out, in);
    std::copy_n(out.begin(), nx, data.begin() + static_cast<std::ptrdiff_t>(iy * nx));
  }
  in.resize(ny);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    for (std::size_t iy = 0; iy < ny; ++iy) in[iy] = data[iy * nx + ix];
    if (forward) fft.fwd(out, in); else fft.inv(out, in);
    for (std::size_t iy = 0; iy < ny; ++iy) data[iy * nx + ix] = out[iy];
  }
}

} // namespace ppcf::detail
