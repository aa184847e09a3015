#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bsf/plant.hpp"
#include "bsf/trajectory.hpp"

namespace bsf {

enum class SafeSetKind { Box, Distance };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct SafeSet {
  SafeSetKind kind = SafeSetKind::Box;
  std::vector<Interval> box;  // closed intervals, one per output dimension
  double delta = 0.2;         // strict threshold on |Y1 - Y2|

  static SafeSet make_box(std::vector<Interval> intervals);
  static SafeSet make_distance(double delta);
};

// Throws ShapeError on a dimension mismatch.
bool safe_contains(const SafeSet& set, const Eigen::VectorXd& y);

enum class PolicyKind { DeadbandProportional, PeriodicTracking };

struct PolicyParams {
  PolicyKind kind = PolicyKind::DeadbandProportional;
  double k_p = 4.0;
  double noise_sigma = 0.05;
  // AR(1) coefficient of the noise; 0 gives white noise. The stationary
  // standard deviation stays noise_sigma for any value in [0, 1).
  double noise_corr = 0.0;
  Interval clip{-1.0, 1.0};
  // DeadbandProportional
  Vec2 setpoint{0.2, 0.83};
  double deadband = 0.02;
  // PeriodicTracking: r(t) = center + Rot(orientation) * (a cos th, b sin th),
  // th = 2 pi t rho / period.
  Vec2 center{0.5, 0.5};
  Vec2 amp{0.3, 0.3};
  double orientation = 0.0;
  double period = 0.4;
  double rho = 1.0;
};

void validate_policy(const PolicyParams& p);

// The noise stream consumed by a policy. Both channels are drawn on every
// call so that different controllers sharing a seed see identical noise.
class PolicyNoise {
 public:
  explicit PolicyNoise(std::uint64_t seed) : engine_(seed) {}
  Vec2 draw(double sigma, double corr = 0.0);

 private:
  std::mt19937_64 engine_;
  Vec2 state_ = Vec2::Zero();
  bool started_ = false;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

Vec2 tracking_reference(const PolicyParams& p, double t);

Vec2 base_policy(const PolicyParams& p, const Vec2& y, double t, PolicyNoise& noise);

struct FilterDefaults {
  double alpha = 1.0;
  double C = 0.5;
  double beta = 50.0;
};

struct TaskSpec {
  std::string task_id = "task";
  PlantParams plant;
  int grid_size = 64;
  std::array<double, kChannels> initial{0.0, 0.0};  // constant initial field per channel
  SafeSet safe_set;
  PolicyParams policy;
  int M = 200;
  double dt = 0.002;
  std::uint64_t seed = 0;
  FilterDefaults filter;
};

void validate_task(const TaskSpec& spec, int min_horizon);

// Reads a TOML task description. Missing keys keep their defaults.
TaskSpec load_task_spec(const std::filesystem::path& path);
TaskSpec parse_task_spec(const std::string& toml_text, const std::string& source = "<string>");

struct StepContext {
  int step = 0;
  double t = 0.0;
  Vec2 y;       // latest measured output, z(x_b, t)
  Vec2 u_prev;  // control applied during the previous interval (zero at step 0)
};

using Controller = std::function<Vec2(const StepContext&)>;

// Simulates spec.M control steps from the task's initial condition.
Trajectory rollout(const TaskSpec& spec, const Controller& controller, std::uint64_t seed);

// Controller that plays the task's base policy with its own noise stream.
Controller make_base_controller(const PolicyParams& policy, std::uint64_t noise_seed);

// Seed of rollout `index` under a master seed.
std::uint64_t rollout_seed(std::uint64_t master, std::uint64_t index);

}  // namespace bsf
