#include "bsf/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

#include "bsf/errors.hpp"

namespace bsf {

namespace {

std::shared_ptr<const SpectralBasis> build_basis(int len, int modes) {
  auto basis = std::make_shared<SpectralBasis>();
  basis->len = len;
  basis->modes = modes;
  basis->fwd_cos.resize(modes, len);
  basis->fwd_sin.resize(modes, len);
  basis->inv_cos.resize(len, modes);
  basis->inv_sin.resize(len, modes);
  for (int k = 0; k < modes; ++k) {
    const bool self_conjugate = k == 0 || 2 * k == len;
    const double weight = (self_conjugate ? 1.0 : 2.0) / len;
    for (int m = 0; m < len; ++m) {
      const long long phase = (static_cast<long long>(k) * m) % len;
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(phase) / len;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      basis->fwd_cos(k, m) = c;
      basis->fwd_sin(k, m) = s;
      basis->inv_cos(m, k) = weight * c;
      basis->inv_sin(m, k) = weight * s;
    }
  }
  return basis;
}

}  // namespace

std::shared_ptr<const SpectralBasis> spectral_basis(int len, int modes) {
  if (modes < 1 || len / 2 + 1 < modes) {
    throw ShapeError("sequence length " + std::to_string(len) + " is too short for " +
                     std::to_string(modes) + " Fourier modes");
  }
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::shared_ptr<const SpectralBasis>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{len, modes}];
  if (!slot) slot = build_basis(len, modes);
  return slot;
}

Eigen::MatrixXd low_pass(const Eigen::MatrixXd& v, int modes) {
  const auto basis = spectral_basis(static_cast<int>(v.rows()), modes);
  return basis->inv_cos * (basis->fwd_cos * v) + basis->inv_sin * (basis->fwd_sin * v);
}

}  // namespace bsf
