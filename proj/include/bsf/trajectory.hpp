#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace bsf {

// One recorded rollout. Row i holds the control u_i applied over
// [t_i, t_i + dt) and the boundary output sampled at the end of that
// interval, so the output row is a causal response to controls 0..i.
struct Trajectory {
  std::string task_id;
  std::uint64_t seed = 0;
  double dt = 0.0;
  Eigen::VectorXd t;  // length M, t_i = i * dt
  Eigen::MatrixXd U;  // M x d_u
  Eigen::MatrixXd Y;  // M x d_y

  int length() const { return static_cast<int>(t.size()); }
};

// Throws ShapeError when lengths disagree or t deviates from i * dt.
void check_trajectory(const Trajectory& traj);

}  // namespace bsf
