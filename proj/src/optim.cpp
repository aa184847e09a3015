#include "bsf/optim.hpp"

#include <cmath>

#include "bsf/errors.hpp"

namespace bsf {

void AdamW::step(std::vector<double>& params, const std::vector<double>& grad) {
  if (params.size() != grad.size() || params.size() != m_.size()) {
    throw ShapeError("optimizer state and gradient sizes differ");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  const double decay = 1.0 - s_.lr * s_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * g;
    v_[i] = s_.beta2 * v_[i] + (1.0 - s_.beta2) * g * g;
    params[i] *= decay;
    params[i] -= s_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + s_.eps);
  }
}

void NAdam::step(std::vector<double>& params, const std::vector<double>& grad) {
  if (params.size() != grad.size() || params.size() != m_.size()) {
    throw ShapeError("optimizer state and gradient sizes differ");
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const double mu = s_.beta1 * (1.0 - 0.5 * std::pow(0.96, t * s_.momentum_decay));
  const double mu_next = s_.beta1 * (1.0 - 0.5 * std::pow(0.96, (t + 1.0) * s_.momentum_decay));
  mu_product_ *= mu;
  const double bc2 = 1.0 - std::pow(s_.beta2, t);
  const double grad_coef = s_.lr * (1.0 - mu) / (1.0 - mu_product_);
  const double mom_coef = s_.lr * mu_next / (1.0 - mu_product_ * mu_next);
  const double l2 = s_.decoupled_weight_decay ? 0.0 : s_.weight_decay;
  const double shrink = s_.decoupled_weight_decay ? 1.0 - s_.lr * s_.weight_decay : 1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] *= shrink;
    const double g = grad[i] + l2 * params[i];
    m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * g;
    v_[i] = s_.beta2 * v_[i] + (1.0 - s_.beta2) * g * g;
    const double denom = std::sqrt(v_[i] / bc2) + s_.eps;
    params[i] -= grad_coef * g / denom + mom_coef * m_[i] / denom;
  }
}

}  // namespace bsf
