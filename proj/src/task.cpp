#include "bsf/task.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include <toml.hpp>

#include "bsf/errors.hpp"

namespace bsf {

void check_trajectory(const Trajectory& traj) {
  const auto m = traj.t.size();
  if (traj.U.rows() != m || traj.Y.rows() != m) {
    throw ShapeError("trajectory '" + traj.task_id + "': U, Y and t lengths differ");
  }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::abs(traj.t(i) - static_cast<double>(i) * traj.dt) > 1e-12) {
      std::ostringstream msg;
      msg << "trajectory '" << traj.task_id << "': t[" << i << "] = " << traj.t(i)
          << " is not i*dt";
      throw ShapeError(msg.str());
    }
  }
}

SafeSet SafeSet::make_box(std::vector<Interval> intervals) {
  SafeSet s;
  s.kind = SafeSetKind::Box;
  s.box = std::move(intervals);
  for (const auto& iv : s.box) {
    if (!(iv.lo < iv.hi)) throw ConfigError("safe box interval needs lo < hi");
  }
  return s;
}

SafeSet SafeSet::make_distance(double delta) {
  if (!(delta > 0.0)) throw ConfigError("distance threshold must be positive");
  SafeSet s;
  s.kind = SafeSetKind::Distance;
  s.delta = delta;
  return s;
}

bool safe_contains(const SafeSet& set, const Eigen::VectorXd& y) {
  if (set.kind == SafeSetKind::Box) {
    if (static_cast<std::size_t>(y.size()) != set.box.size()) {
      throw ShapeError("output dimension does not match the safe box");
    }
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      if (!(y(j) >= set.box[j].lo && y(j) <= set.box[j].hi)) return false;
    }
    return true;
  }
  if (y.size() != 2) throw ShapeError("distance safe set expects a 2-dimensional output");
  return std::abs(y(0) - y(1)) < set.delta;
}

void validate_policy(const PolicyParams& p) {
  if (!(p.clip.lo < p.clip.hi)) throw ConfigError("policy clip range is empty");
  if (!(p.noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
  if (!(p.noise_corr >= 0.0 && p.noise_corr < 1.0)) throw ConfigError("noise_corr must lie in [0, 1)");
  if (!(p.period > 0.0)) throw ConfigError("policy period must be positive");
  if (!(p.deadband >= 0.0)) throw ConfigError("deadband must be non-negative");
}

Vec2 PolicyNoise::draw(double sigma, double corr) {
  const double a = normal_(engine_);
  const double b = normal_(engine_);
  const Vec2 white(sigma * a, sigma * b);
  if (corr == 0.0) return white;
  // Start from the stationary law so the first draw already has std sigma.
  state_ = started_ ? Vec2(corr * state_ + std::sqrt(1.0 - corr * corr) * white) : white;
  started_ = true;
  return state_;
}

Vec2 tracking_reference(const PolicyParams& p, double t) {
  const double th = 2.0 * std::numbers::pi * t * p.rho / p.period;
  const Vec2 local(p.amp(0) * std::cos(th), p.amp(1) * std::sin(th));
  const double c = std::cos(p.orientation);
  const double s = std::sin(p.orientation);
  return p.center + Vec2(c * local(0) - s * local(1), s * local(0) + c * local(1));
}

Vec2 base_policy(const PolicyParams& p, const Vec2& y, double t, PolicyNoise& noise) {
  const Vec2 eta = noise.draw(p.noise_sigma, p.noise_corr);
  auto clip = [&](double v) { return std::clamp(v, p.clip.lo, p.clip.hi); };
  Vec2 u;
  if (p.kind == PolicyKind::DeadbandProportional) {
    for (int j = 0; j < 2; ++j) {
      const double err = p.setpoint(j) - y(j);
      u(j) = std::abs(err) > p.deadband ? clip(p.k_p * err + eta(j)) : 0.0;
    }
  } else {
    const Vec2 err = tracking_reference(p, t) - y;
    for (int j = 0; j < 2; ++j) u(j) = clip(p.k_p * err(j) + eta(j));
  }
  return u;
}

void validate_task(const TaskSpec& spec, int min_horizon) {
  if (!(spec.dt > 0.0)) throw ConfigError("task dt must be positive");
  if (spec.M < min_horizon) {
    throw ConfigError("task horizon M = " + std::to_string(spec.M) +
                      " is shorter than the operator's minimum prefix " +
                      std::to_string(min_horizon));
  }
  validate_plant(spec.plant, spec.grid_size, spec.dt);
  validate_policy(spec.policy);
}

namespace {

double require_number(const toml::node_view<const toml::node>& node, const std::string& key,
                      const std::string& source) {
  if (auto v = node.value<double>()) return *v;
  throw ConfigError(source + ": key '" + key + "' must be a number");
}

template <class Fn>
void with_number(const toml::table& tbl, const char* section, const char* key,
                 const std::string& source, Fn&& fn) {
  auto node = tbl[section][key];
  if (!node) return;
  fn(require_number(node, std::string(section) + "." + key, source));
}

Vec2 read_pair(const toml::table& tbl, const char* section, const char* key,
               const std::string& source, Vec2 fallback) {
  auto node = tbl[section][key];
  if (!node) return fallback;
  const auto* arr = node.as_array();
  const std::string name = std::string(section) + "." + key;
  if (!arr || arr->size() != 2) throw ConfigError(source + ": key '" + name + "' must be a 2-array");
  Vec2 out;
  for (int j = 0; j < 2; ++j) {
    auto v = (*arr)[j].value<double>();
    if (!v) throw ConfigError(source + ": key '" + name + "' must hold numbers");
    out(j) = *v;
  }
  return out;
}

std::string read_string(const toml::table& tbl, const char* section, const char* key,
                        const std::string& fallback) {
  if (auto v = tbl[section][key].value<std::string>()) return *v;
  return fallback;
}

}  // namespace

TaskSpec parse_task_spec(const std::string& toml_text, const std::string& source) {
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text, source);
  } catch (const toml::parse_error& err) {
    std::ostringstream msg;
    msg << source << ":" << err.source().begin.line << ": " << err.description();
    throw ParseError(msg.str());
  }

  TaskSpec spec;
  spec.task_id = read_string(tbl, "task", "id", spec.task_id);
  with_number(tbl, "task", "M", source, [&](double v) { spec.M = static_cast<int>(v); });
  with_number(tbl, "task", "dt", source, [&](double v) { spec.dt = v; });
  with_number(tbl, "task", "seed", source, [&](double v) { spec.seed = static_cast<std::uint64_t>(v); });

  const std::string kind = read_string(tbl, "plant", "kind", "TransportHeat");
  if (kind == "TransportHeat") {
    spec.plant.kind = PlantKind::TransportHeat;
  } else if (kind == "CoupledGather") {
    spec.plant.kind = PlantKind::CoupledGather;
  } else {
    throw ConfigError(source + ": unknown plant.kind '" + kind + "'");
  }
  const Vec2 nu = read_pair(tbl, "plant", "nu", source, Vec2(spec.plant.nu[0], spec.plant.nu[1]));
  spec.plant.nu = {nu(0), nu(1)};
  with_number(tbl, "plant", "kappa", source, [&](double v) { spec.plant.kappa = v; });
  with_number(tbl, "plant", "x_b", source, [&](double v) { spec.plant.x_b = v; });
  with_number(tbl, "plant", "substeps", source, [&](double v) { spec.plant.substeps = static_cast<int>(v); });
  with_number(tbl, "plant", "grid", source, [&](double v) { spec.grid_size = static_cast<int>(v); });
  const Vec2 z0 = read_pair(tbl, "plant", "initial", source, Vec2(spec.initial[0], spec.initial[1]));
  spec.initial = {z0(0), z0(1)};

  const std::string set_kind = read_string(tbl, "safe_set", "kind", "Box");
  if (set_kind == "Box") {
    const Vec2 x = read_pair(tbl, "safe_set", "x", source, Vec2(0.05, 0.25));
    const Vec2 y = read_pair(tbl, "safe_set", "y", source, Vec2(0.65, 0.95));
    spec.safe_set = SafeSet::make_box({{x(0), x(1)}, {y(0), y(1)}});
  } else if (set_kind == "Distance") {
    double delta = 0.2;
    with_number(tbl, "safe_set", "delta", source, [&](double v) { delta = v; });
    spec.safe_set = SafeSet::make_distance(delta);
  } else {
    throw ConfigError(source + ": unknown safe_set.kind '" + set_kind + "'");
  }

  PolicyParams& p = spec.policy;
  const std::string pkind = read_string(tbl, "policy", "kind", "DeadbandProportional");
  if (pkind == "DeadbandProportional") {
    p.kind = PolicyKind::DeadbandProportional;
  } else if (pkind == "PeriodicTracking") {
    p.kind = PolicyKind::PeriodicTracking;
  } else {
    throw ConfigError(source + ": unknown policy.kind '" + pkind + "'");
  }
  with_number(tbl, "policy", "k_p", source, [&](double v) { p.k_p = v; });
  with_number(tbl, "policy", "noise_sigma", source, [&](double v) { p.noise_sigma = v; });
  with_number(tbl, "policy", "noise_corr", source, [&](double v) { p.noise_corr = v; });
  const Vec2 clip = read_pair(tbl, "policy", "clip", source, Vec2(p.clip.lo, p.clip.hi));
  p.clip = {clip(0), clip(1)};
  p.setpoint = read_pair(tbl, "policy", "setpoint", source, p.setpoint);
  with_number(tbl, "policy", "deadband", source, [&](double v) { p.deadband = v; });
  p.center = read_pair(tbl, "policy", "center", source, p.center);
  p.amp = read_pair(tbl, "policy", "amp", source, p.amp);
  with_number(tbl, "policy", "orientation", source, [&](double v) { p.orientation = v; });
  with_number(tbl, "policy", "period", source, [&](double v) { p.period = v; });
  with_number(tbl, "policy", "rho", source, [&](double v) { p.rho = v; });

  with_number(tbl, "filter", "alpha", source, [&](double v) { spec.filter.alpha = v; });
  with_number(tbl, "filter", "C", source, [&](double v) { spec.filter.C = v; });
  with_number(tbl, "filter", "beta", source, [&](double v) { spec.filter.beta = v; });

  validate_task(spec, 1);
  return spec;
}

TaskSpec load_task_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_task_spec(buf.str(), path.string());
}

std::uint64_t rollout_seed(std::uint64_t master, std::uint64_t index) {
  // splitmix64 over (master, index)
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Controller make_base_controller(const PolicyParams& policy, std::uint64_t noise_seed) {
  auto noise = std::make_shared<PolicyNoise>(noise_seed);
  return [policy, noise](const StepContext& ctx) {
    return base_policy(policy, ctx.y, ctx.t, *noise);
  };
}

Trajectory rollout(const TaskSpec& spec, const Controller& controller, std::uint64_t seed) {
  const auto init = spec.initial;
  PlantState state = plant_init(
      spec.plant, spec.grid_size, [&](int c, double) { return init[c]; }, spec.dt);

  Trajectory traj;
  traj.task_id = spec.task_id;
  traj.seed = seed;
  traj.dt = spec.dt;
  traj.t.resize(spec.M);
  traj.U.resize(spec.M, 2);
  traj.Y.resize(spec.M, 2);

  StepContext ctx;
  ctx.u_prev.setZero();
  for (int i = 0; i < spec.M; ++i) {
    ctx.step = i;
    ctx.t = i * spec.dt;
    ctx.y = plant_output(state, spec.plant);
    const Vec2 u = controller(ctx);
    if (!u.allFinite()) throw DivergenceError("controller returned a non-finite control");
    plant_step(state, spec.plant, u, spec.dt);
    traj.t(i) = ctx.t;
    traj.U.row(i) = u.transpose();
    traj.Y.row(i) = plant_output(state, spec.plant).transpose();
    ctx.u_prev = u;
  }
  return traj;
}

}  // namespace bsf
