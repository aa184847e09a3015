#pragma once

// Online rate filter. At step i the operator predicts the next output from
// the applied history with the last slot held at u_{i-1}; the barrier turns
// that prediction into one affine constraint a^T Udot + b <= 0 on the control
// rate, which is enforced by half-space projection and a mismatch gate.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "bsf/bcbf.hpp"
#include "bsf/fno.hpp"
#include "bsf/task.hpp"

namespace bsf {

// Reference point for the one-step drift c = (y_pred - ref) / dt.
enum class DriftAnchor {
  Observation,  // ref = measured y_{i-1}
  Model         // ref = the operator's own prediction of y_{i-1}
};

struct FilterConfig {
  double alpha = 1.0;
  double C = 0.5;
  double beta = 50.0;
  int warmup = 40;          // steps passed through before filtering starts
  bool clip_phi0 = false;   // use max(phi0, 0) instead of phi0
  double eps_a = 1e-10;
  DriftAnchor drift = DriftAnchor::Model;
  bool clip_control = true;     // saturate projected controls to `control_range`
  Interval control_range{-1.0, 1.0};
};

// Config from task defaults, with alpha, C and beta taken from the task file
// and the actuator range from the policy clip.
FilterConfig filter_config(const TaskSpec& spec);
void validate_filter_config(const FilterConfig& cfg, const FnoConfig& operator_cfg);

enum class PredictorMode {
  Online,       // prefix evaluated at its own length
  OfflinePadded // prefix zero-padded to a fixed horizon, row i read out
};

struct Predictor {
  const FnoModel* model = nullptr;
  PredictorMode mode = PredictorMode::Online;
  int horizon = 0;  // padded length in OfflinePadded mode
};

struct Prediction {
  Eigen::VectorXd y_last;  // predicted output after the last prefix slot
  Eigen::VectorXd y_prev;  // predicted output one slot earlier (empty for a 1-row prefix)
  Eigen::MatrixXd G;       // d y_last / d u_last, d_y x d_u
};

// `prefix` is (i + 1) x d_u.
Prediction predict_last(const Predictor& p, const Eigen::MatrixXd& prefix);

struct FilterState {
  Eigen::MatrixXd history;  // rows 0..step-1 hold applied controls; capacity grows as needed
  Vec2 prev_control = Vec2::Zero();
  Vec2 prev_output = Vec2::Zero();
  double phi0 = 0.0;
  bool phi0_set = false;
  int step = 0;
  double dt = 0.0;
};

// phi0 = phi(t0, y0) for the rollout's first observation.
FilterState start_filter(const BarrierModel& bcbf, const Vec2& y0, double t0, double dt, int capacity = 0);

Vec2 nominal_rate(const Vec2& u, const Vec2& u_prev, double dt);

struct Constraint {
  Eigen::VectorXd a;
  double b = 0.0;
  double phi = 0.0;
};

Constraint assemble_constraint(const Predictor& pred, const BarrierModel& bcbf, const FilterConfig& cfg,
                               const FilterState& state, const Vec2& y, double t);

enum class QpStatus { Inactive, Projected, Infeasible };

struct QpResult {
  Eigen::VectorXd rate;
  QpStatus status = QpStatus::Inactive;
};

QpResult qp_project(const Eigen::VectorXd& rate_nom, const Eigen::VectorXd& a, double b,
                    double eps_a = 1e-10);

// True when the safe rate is kept, i.e. ||safe - nom|| <= beta.
bool beta_gate(const Eigen::VectorXd& rate_safe, const Eigen::VectorXd& rate_nom, double beta);

enum class GateDecision { Warmup, Inactive, Projected, Rejected, Infeasible };
const char* gate_name(GateDecision g);

struct StepDiagnostics {
  int step = 0;
  double t = 0.0;
  double phi = 0.0;
  Vec2 a = Vec2::Zero();
  double b = 0.0;
  GateDecision gate = GateDecision::Warmup;
  double diff_norm = 0.0;
  bool infeasible = false;
};

struct FilterOutput {
  Vec2 control;
  StepDiagnostics diag;
};

FilterOutput filter_step(const Predictor& pred, const BarrierModel& bcbf, const FilterConfig& cfg,
                         FilterState& state, const Vec2& y, const Vec2& u_nom, double t);

void write_diagnostics_csv(const std::vector<StepDiagnostics>& rows, const std::filesystem::path& path);

// Base policy wrapped by the filter. The filter state lives inside the
// controller; `bcbf` and `pred.model` must outlive it.
// Diagnostics are appended to `diag` when it is non-null.
Controller make_filtered_controller(const TaskSpec& spec, const Predictor& pred, const BarrierModel& bcbf,
                                    const FilterConfig& cfg, std::uint64_t noise_seed,
                                    std::shared_ptr<std::vector<StepDiagnostics>> diag = nullptr);

}  // namespace bsf
