#pragma once

// Learned boundary barrier phi(t, Y): an MLP on [t, Y] with tanh hidden
// layers and a linear scalar output. Convention: phi <= 0 marks outputs in
// the safe set.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "bsf/optim.hpp"
#include "bsf/task.hpp"
#include "bsf/trajectory.hpp"

namespace bsf {

struct BarrierConfig {
  std::vector<int> hidden{32, 128, 64, 32};
  int d_y = 2;
  double alpha = 1.0;  // class-K gain
  double C = 0.5;      // finite-time gain on phi(t0, Y0)

  bool operator==(const BarrierConfig&) const = default;
};

class BarrierModel {
 public:
  explicit BarrierModel(BarrierConfig cfg);  // all weights zero
  static BarrierModel random(const BarrierConfig& cfg, std::uint64_t seed);

  const BarrierConfig& config() const { return cfg_; }
  BarrierConfig& config() { return cfg_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  // Widths from input to output: [1 + d_y, hidden..., 1].
  const std::vector<int>& widths() const { return widths_; }
  int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
  std::size_t weight_offset(int l) const { return offsets_[l]; }
  std::size_t bias_offset(int l) const { return offsets_[l] + static_cast<std::size_t>(widths_[l + 1]) * widths_[l]; }

  // Fixed input standardization x' = (x - shift) / scale, applied before the
  // first layer. Not trained; defaults to the identity.
  const Eigen::VectorXd& input_shift() const { return shift_; }
  const Eigen::VectorXd& input_scale() const { return scale_; }
  void set_input_normalization(const Eigen::VectorXd& shift, const Eigen::VectorXd& scale);

 private:
  BarrierConfig cfg_;
  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  Eigen::VectorXd shift_, scale_;
};

double bcbf_eval(const BarrierModel& model, double t, const Eigen::VectorXd& y);

struct BarrierGradient {
  double value = 0.0;
  double d_t = 0.0;
  Eigen::VectorXd d_y;
};

// Exact input gradient of the network output.
BarrierGradient bcbf_grad(const BarrierModel& model, double t, const Eigen::VectorXd& y);

// Column-batched evaluation. X is (1 + d_y) x B; if V (same shape) is given,
// also returns the directional derivatives grad phi . V column by column.
struct BarrierBatch {
  Eigen::RowVectorXd value;
  Eigen::RowVectorXd directional;
};
BarrierBatch bcbf_eval_batch(const BarrierModel& model, const Eigen::MatrixXd& X,
                             const Eigen::MatrixXd* V = nullptr);

// Training set in column layout: one column per time point.
struct BarrierSamples {
  Eigen::MatrixXd X;      // [t; Y]
  Eigen::MatrixXd V;      // [1; dY/dt]
  Eigen::MatrixXd X0;     // [t0; Y0] of the sample's trajectory
  std::vector<char> safe;

  std::size_t size() const { return safe.size(); }
};

// One sample per recorded output. Output row i is stamped with time
// (i + 1) * dt; dY/dt uses central differences inside the trajectory and
// one-sided differences at its ends.
BarrierSamples make_barrier_samples(const std::vector<Trajectory>& trajs, const SafeSet& safe_set);

struct BarrierLossSettings {
  double lambda_safe = 1.0;
  double lambda_unsafe = 1.0;
  double lambda_decrease = 0.5;
  double margin = 0.01;
};

struct BarrierLoss {
  double total = 0.0;
  double safe_term = 0.0;
  double unsafe_term = 0.0;
  double decrease_term = 0.0;
};

// Hinge surrogate: safe samples pushed below -margin, unsafe above +margin,
// and the decrease condition phi_dot + alpha phi + C phi(t0, Y0) <= 0 on safe
// samples. Means over empty subsets count as zero. If `grad` is non-null the
// parameter gradient is accumulated into it.
BarrierLoss barrier_loss(const BarrierModel& model, const BarrierSamples& data,
                         const std::vector<std::size_t>& columns, const BarrierLossSettings& s,
                         std::vector<double>* grad = nullptr);

struct BarrierStats {
  double sign_agreement = 0.0;   // fraction with (phi <= 0) == safe
  double violation_rate = 0.0;   // fraction of safe samples violating the decrease condition
};
BarrierStats barrier_stats(const BarrierModel& model, const BarrierSamples& data);

struct BarrierTrainOptions {
  int epochs = 30;
  int batch_size = 512;
  std::uint64_t seed = 0;
  NAdamSettings nadam;
  BarrierLossSettings loss;
};

struct BarrierLogRow {
  int epoch = 0;
  double loss = 0.0;
  BarrierStats train;
  BarrierStats test;
};

struct BarrierTrainResult {
  BarrierModel model;
  std::vector<BarrierLogRow> log;
};

BarrierTrainResult train_bcbf(const BarrierSamples& train, const BarrierSamples& test,
                              const BarrierConfig& cfg, const BarrierTrainOptions& opt,
                              const std::function<void(const BarrierLogRow&)>& on_epoch = {});

void write_barrier_log_csv(const std::vector<BarrierLogRow>& log, const std::filesystem::path& path);

void save_bcbf(const BarrierModel& model, const std::filesystem::path& path);
BarrierModel load_bcbf(const std::filesystem::path& path);

}  // namespace bsf
