#pragma once

#include <memory>

#include <Eigen/Dense>

namespace bsf {

// Real DFT restricted to the lowest `modes` frequencies of a length-`len`
// signal, as dense matrices acting on the time axis.
//
//   Re X = fwd_cos * v,   Im X = -fwd_sin * v           (modes x len)
//   irfft(X, zero above modes) = inv_cos * Re X - inv_sin * Im X
//
// inv_* carry the 1/len normalisation and the factor 2 for the mirrored
// (non-DC, non-Nyquist) bins.
struct SpectralBasis {
  int len = 0;
  int modes = 0;
  Eigen::MatrixXd fwd_cos;
  Eigen::MatrixXd fwd_sin;
  Eigen::MatrixXd inv_cos;
  Eigen::MatrixXd inv_sin;
};

// Cached and safe to call from several threads.
std::shared_ptr<const SpectralBasis> spectral_basis(int len, int modes);

// Keeps the lowest `modes` frequencies of each column of v.
Eigen::MatrixXd low_pass(const Eigen::MatrixXd& v, int modes);

}  // namespace bsf
