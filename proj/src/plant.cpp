#include "bsf/plant.hpp"

#include <cmath>
#include <sstream>

#include "bsf/errors.hpp"

namespace bsf {

double stability_number(const PlantParams& params, int grid_size, double dt) {
  const double dx = 1.0 / (grid_size - 1);
  const double h = dt / params.substeps;
  double worst = 0.0;
  for (double nu : params.nu) worst = std::max(worst, nu * h / (dx * dx));
  return worst;
}

int output_index(const PlantParams& params, int grid_size) {
  return static_cast<int>(std::lround(params.x_b * (grid_size - 1)));
}

void validate_plant(const PlantParams& params, int grid_size, double dt) {
  if (grid_size < 16) throw ConfigError("plant grid needs at least 16 points");
  if (params.substeps < 1) throw ConfigError("plant substeps must be >= 1");
  if (!(dt > 0.0)) throw ConfigError("control step dt must be positive");
  for (double nu : params.nu) {
    if (!(nu >= 0.0)) throw ConfigError("diffusivity must be non-negative");
  }
  if (!(params.kappa >= 0.0)) throw ConfigError("coupling gain must be non-negative");
  if (!(params.x_b > 0.0 && params.x_b <= 1.0)) throw ConfigError("x_b must lie in (0, 1]");
  const int idx = output_index(params, grid_size);
  if (idx < 1 || idx > grid_size - 1) throw ConfigError("x_b does not map to an interior grid node");
  const double s = stability_number(params, grid_size, dt);
  if (s > 0.5) {
    std::ostringstream msg;
    msg << "explicit scheme unstable: nu*(dt/substeps)/dx^2 = " << s << " > 0.5";
    throw ConfigError(msg.str());
  }
}

PlantState plant_init(const PlantParams& params, int grid_size, const InitialField& z0,
                      double dt) {
  validate_plant(params, grid_size, dt);
  PlantState state;
  state.fields.resize(kChannels, grid_size);
  const double dx = 1.0 / (grid_size - 1);
  for (int c = 0; c < kChannels; ++c) {
    for (int k = 0; k < grid_size; ++k) state.fields(c, k) = z0(c, k * dx);
  }
  return state;
}

void plant_step(PlantState& state, const PlantParams& params, const Vec2& u, double dt) {
  const int n = state.grid_size();
  const double h = dt / params.substeps;
  const double dx = state.dx();
  std::array<double, kChannels> lambda{};
  for (int c = 0; c < kChannels; ++c) lambda[c] = params.nu[c] * h / (dx * dx);
  const bool coupled = params.kind == PlantKind::CoupledGather;
  const double coupling = h * params.kappa;

  Eigen::MatrixXd& z = state.fields;
  Eigen::MatrixXd next(kChannels, n);
  for (int s = 0; s < params.substeps; ++s) {
    z(0, 0) = u(0);
    z(1, 0) = u(1);
    for (int c = 0; c < kChannels; ++c) {
      const int other = 1 - c;
      for (int k = 1; k < n - 1; ++k) {
        double v = z(c, k) + lambda[c] * (z(c, k + 1) - 2.0 * z(c, k) + z(c, k - 1));
        if (coupled) v += coupling * (z(other, k) - z(c, k));
        next(c, k) = v;
      }
      next(c, 0) = u(c);
      next(c, n - 1) = next(c, n - 2);
    }
    z.swap(next);
  }
  state.sim_time += dt;

  if (!z.allFinite()) {
    std::ostringstream msg;
    msg << "plant produced non-finite field values at t = " << state.sim_time;
    throw DivergenceError(msg.str());
  }
}

Vec2 plant_output(const PlantState& state, const PlantParams& params) {
  const int idx = output_index(params, state.grid_size());
  return state.fields.col(idx);
}

}  // namespace bsf
