#pragma once

#include <vector>

namespace bsf {

struct AdamWSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t n, AdamWSettings s) : s_(s), m_(n, 0.0), v_(n, 0.0) {}
  void step(std::vector<double>& params, const std::vector<double>& grad);
  long steps() const { return t_; }

 private:
  AdamWSettings s_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

struct NAdamSettings {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double momentum_decay = 4e-3;
  // false: L2 penalty folded into the gradient; true: parameters shrink by
  // (1 - lr * weight_decay) before each update.
  bool decoupled_weight_decay = false;
};

// Nesterov-accelerated Adam with the momentum warm-up schedule
// mu_t = beta1 * (1 - 0.5 * 0.96^(t * momentum_decay)).
class NAdam {
 public:
  NAdam(std::size_t n, NAdamSettings s) : s_(s), m_(n, 0.0), v_(n, 0.0) {}
  void step(std::vector<double>& params, const std::vector<double>& grad);

 private:
  NAdamSettings s_;
  std::vector<double> m_, v_;
  double mu_product_ = 1.0;
  long t_ = 0;
};

}  // namespace bsf
