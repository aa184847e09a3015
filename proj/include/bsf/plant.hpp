#pragma once

// One-dimensional boundary-actuated plants. Each plant carries two scalar
// fields on a uniform grid over [0, 1]; the left end is clamped to the control
// input (Dirichlet) and the right end is zero-flux. The boundary output is the
// pair of field values at the observation coordinate x_b.

#include <array>
#include <functional>

#include <Eigen/Dense>

namespace bsf {

inline constexpr int kChannels = 2;

using Vec2 = Eigen::Vector2d;

enum class PlantKind { TransportHeat, CoupledGather };

struct PlantParams {
  PlantKind kind = PlantKind::TransportHeat;
  std::array<double, kChannels> nu{1.0, 1.0};  // diffusivity per channel
  double kappa = 0.5;                          // CoupledGather only
  double x_b = 0.1;
  int substeps = 20;
};

struct PlantState {
  Eigen::MatrixXd fields;  // kChannels x N
  double sim_time = 0.0;

  int grid_size() const { return static_cast<int>(fields.cols()); }
  double dx() const { return 1.0 / (grid_size() - 1); }
};

// Initial field value for (channel, x).
using InitialField = std::function<double(int, double)>;

inline double zero_field(int, double) { return 0.0; }

// Largest nu * (dt / substeps) / dx^2 over the channels. The explicit scheme is
// stable when this is at most 0.5.
double stability_number(const PlantParams& params, int grid_size, double dt);

// Throws ConfigError when the grid, x_b or stability bound is violated.
void validate_plant(const PlantParams& params, int grid_size, double dt);

int output_index(const PlantParams& params, int grid_size);

PlantState plant_init(const PlantParams& params, int grid_size, const InitialField& z0,
                      double dt);

// Advances one control step of length dt with the boundary input held at u.
// Throws DivergenceError if any field value becomes non-finite.
void plant_step(PlantState& state, const PlantParams& params, const Vec2& u, double dt);

Vec2 plant_output(const PlantState& state, const PlantParams& params);

}  // namespace bsf
