#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "bsf/errors.hpp"
#include "bsf/task.hpp"
#include "testing.hpp"

using namespace bsf;

namespace {

Eigen::VectorXd v2(double a, double b) { return Vec2(a, b); }

TaskSpec quiet_transport() {
  TaskSpec spec;
  spec.task_id = "quiet";
  spec.safe_set = SafeSet::make_box({{0.05, 0.25}, {0.65, 0.95}});
  spec.policy.noise_sigma = 0.0;
  return spec;
}

}  // namespace

TEST_CASE("safe_contains examples") {
  const SafeSet box = SafeSet::make_box({{0.05, 0.25}, {0.65, 0.95}});
  CHECK(safe_contains(box, v2(0.10, 0.70)));
  CHECK_FALSE(safe_contains(box, v2(0.30, 0.70)));
  CHECK(safe_contains(box, v2(0.05, 0.95)));  // closed
  const SafeSet dist = SafeSet::make_distance(0.2);
  CHECK(safe_contains(dist, v2(0.5, 0.5)));
  CHECK_FALSE(safe_contains(dist, v2(0.5, 0.75)));
  CHECK_FALSE(safe_contains(dist, v2(0.0, 0.2)));  // strict
  CHECK(safe_contains(dist, v2(0.5, 0.69)));
  CHECK_THROWS_AS(safe_contains(box, Eigen::VectorXd::Zero(3)), ShapeError);
  CHECK_THROWS_AS(safe_contains(dist, Eigen::VectorXd::Zero(1)), ShapeError);
}

TEST_CASE("safe set construction rejects empty intervals") {
  CHECK_THROWS_AS(SafeSet::make_box({{0.3, 0.3}}), ConfigError);
  CHECK_THROWS_AS(SafeSet::make_distance(0.0), ConfigError);
}

TEST_CASE("box membership is monotone under shrinking") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int n = 0; n < 2000; ++n) {
    const double lo0 = U(rng) * 0.4, hi0 = 0.6 + U(rng) * 0.4;
    const double lo1 = U(rng) * 0.4, hi1 = 0.6 + U(rng) * 0.4;
    const SafeSet big = SafeSet::make_box({{lo0, hi0}, {lo1, hi1}});
    const SafeSet small = SafeSet::make_box({{lo0 + 0.1 * U(rng), hi0 - 0.1 * U(rng)},
                                             {lo1 + 0.1 * U(rng), hi1 - 0.1 * U(rng)}});
    const Eigen::VectorXd y = v2(U(rng), U(rng));
    if (safe_contains(small, y)) REQUIRE(safe_contains(big, y));
  }
}

TEST_CASE("base_policy examples") {
  PolicyNoise noise(1);
  PolicyParams p;
  p.noise_sigma = 0.0;
  CHECK(base_policy(p, p.setpoint, 0.0, noise) == Vec2::Zero());

  p.k_p = 1.0;
  p.setpoint = Vec2(2.0, 0.5);
  CHECK(base_policy(p, Vec2(0.0, 0.5), 0.0, noise) == Vec2(1.0, 0.0));

  PolicyParams q;
  q.kind = PolicyKind::PeriodicTracking;
  q.noise_sigma = 0.0;
  CHECK(base_policy(q, tracking_reference(q, 0.0), 0.0, noise) == Vec2::Zero());
  CHECK(tracking_reference(q, 0.0).isApprox(Vec2(0.8, 0.5), 1e-15));
  CHECK(tracking_reference(q, 0.1).isApprox(Vec2(0.5, 0.8), 1e-12));
}

TEST_CASE("deadband is applied per channel") {
  PolicyNoise noise(1);
  PolicyParams p;
  p.noise_sigma = 0.0;
  p.k_p = 2.0;
  p.setpoint = Vec2(0.5, 0.5);
  p.deadband = 0.1;
  const Vec2 u = base_policy(p, Vec2(0.45, 0.2), 0.0, noise);
  CHECK(u(0) == 0.0);
  CHECK(u(1) == doctest::Approx(0.6).epsilon(1e-14));
}

TEST_CASE("base_policy output stays inside the clip range") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-5.0, 5.0);
  for (int kind = 0; kind < 2; ++kind) {
    PolicyParams p;
    p.kind = kind == 0 ? PolicyKind::DeadbandProportional : PolicyKind::PeriodicTracking;
    p.noise_sigma = 2.0;
    p.k_p = 10.0;
    p.clip = {-0.7, 0.4};
    PolicyNoise noise(5);
    for (int n = 0; n < 5000; ++n) {
      const Vec2 u = base_policy(p, Vec2(U(rng), U(rng)), 0.001 * n, noise);
      REQUIRE(u.minCoeff() >= -0.7);
      REQUIRE(u.maxCoeff() <= 0.4);
    }
  }
}

TEST_CASE("correlated noise keeps its stationary spread") {
  PolicyNoise noise(9);
  const double corr = 0.9;
  double sum = 0.0, sq = 0.0, lag = 0.0, prev = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double e = noise.draw(0.5, corr)(0);
    sum += e;
    sq += e * e;
    if (i > 0) lag += e * prev;
    prev = e;
  }
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::sqrt(var) == doctest::Approx(0.5).epsilon(0.03));
  CHECK(lag / (n - 1) / var == doctest::Approx(corr).epsilon(0.02));
}

TEST_CASE("policy validation") {
  PolicyParams p;
  p.clip = {1.0, -1.0};
  CHECK_THROWS_AS(validate_policy(p), ConfigError);
  p = PolicyParams{};
  p.noise_sigma = -1.0;
  CHECK_THROWS_AS(validate_policy(p), ConfigError);
  p = PolicyParams{};
  p.period = 0.0;
  CHECK_THROWS_AS(validate_policy(p), ConfigError);
  p = PolicyParams{};
  p.noise_corr = 1.0;
  CHECK_THROWS_AS(validate_policy(p), ConfigError);
}

TEST_CASE("rollout with zero control from rest stays at zero") {
  const TaskSpec spec = quiet_transport();
  const Trajectory tr = rollout(spec, [](const StepContext&) { return Vec2::Zero(); }, 0);
  CHECK(tr.length() == spec.M);
  CHECK(tr.Y.cwiseAbs().maxCoeff() == 0.0);
  CHECK(tr.U.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rollout records exact times and a causal output") {
  TaskSpec spec = quiet_transport();
  spec.M = 37;
  std::vector<StepContext> seen;
  const Trajectory tr = rollout(
      spec,
      [&](const StepContext& ctx) {
        seen.push_back(ctx);
        return Vec2(0.5, -0.5);
      },
      3);
  REQUIRE(tr.length() == 37);
  for (int i = 0; i < 37; ++i) {
    CHECK(tr.t(i) == i * spec.dt);
    CHECK(seen[i].step == i);
    CHECK(seen[i].t == tr.t(i));
    if (i > 0) {
      // The controller at step i sees the output recorded at the end of interval i-1.
      CHECK(seen[i].y == Vec2(tr.Y.row(i - 1).transpose()));
      CHECK(seen[i].u_prev == Vec2(tr.U.row(i - 1).transpose()));
    }
  }
  CHECK(seen[0].y == Vec2::Zero());
  CHECK_NOTHROW(check_trajectory(tr));
}

TEST_CASE("noise-free proportional control settles at the closed-loop fixed point") {
  // Under a constant boundary input the field relaxes to that input, so the
  // loop settles where u = k_p (s - y) = y, i.e. y = k_p s / (1 + k_p).
  TaskSpec spec = quiet_transport();
  spec.M = 3000;
  const Vec2 s = spec.policy.setpoint;
  const double kp = spec.policy.k_p;
  const Trajectory tr = rollout(spec, make_base_controller(spec.policy, 0), 0);
  const Vec2 y_end = tr.Y.row(spec.M - 1).transpose();
  CHECK(std::abs(y_end(0) - kp * s(0) / (1 + kp)) <= 1e-3);
  CHECK(std::abs(y_end(1) - kp * s(1) / (1 + kp)) <= 1e-3);
}

TEST_CASE("rollouts are deterministic per seed") {
  TaskSpec spec = quiet_transport();
  spec.policy.noise_sigma = 0.1;
  const Trajectory a = rollout(spec, make_base_controller(spec.policy, 42), 42);
  const Trajectory b = rollout(spec, make_base_controller(spec.policy, 42), 42);
  const Trajectory c = rollout(spec, make_base_controller(spec.policy, 43), 43);
  CHECK(a.U == b.U);
  CHECK(a.Y == b.Y);
  CHECK(a.U != c.U);
}

TEST_CASE("rollout seeds are distinct and reproducible") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t k = 0; k < 1000; ++k) seen.insert(rollout_seed(7, k));
  CHECK(seen.size() == 1000);
  CHECK(rollout_seed(7, 3) == rollout_seed(7, 3));
  CHECK(rollout_seed(7, 3) != rollout_seed(8, 3));
}

TEST_CASE("shipped task configs parse") {
  const auto root = std::filesystem::path(BSF_SOURCE_DIR) / "configs";
  const TaskSpec t = load_task_spec(root / "transport.toml");
  CHECK(t.task_id == "transport");
  CHECK(t.plant.kind == PlantKind::TransportHeat);
  CHECK(t.safe_set.kind == SafeSetKind::Box);
  CHECK(t.safe_set.box[0].lo == 0.05);
  CHECK(t.safe_set.box[1].hi == 0.95);
  const TaskSpec g = load_task_spec(root / "gather.toml");
  CHECK(g.task_id == "gather");
  CHECK(g.plant.kind == PlantKind::CoupledGather);
  CHECK(g.safe_set.kind == SafeSetKind::Distance);
  CHECK(g.safe_set.delta == 0.2);
  CHECK(g.policy.kind == PolicyKind::PeriodicTracking);
}

TEST_CASE("task config errors") {
  CHECK_THROWS_AS(parse_task_spec("[task\nid = 1"), ParseError);
  try {
    parse_task_spec("[task]\nid = \"a\"\nM = [1,\n", "cfg.toml");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("cfg.toml:") == 0);
  }
  CHECK_THROWS_AS(parse_task_spec("[task]\ndt = \"x\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_task_spec("[task]\ndt = -1.0\n"), ConfigError);
  CHECK_THROWS_AS(parse_task_spec("[plant]\nkind = \"Wave\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_task_spec("[safe_set]\nkind = \"Distance\"\ndelta = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_task_spec("[policy]\nsetpoint = [1, 2, 3]\n"), ConfigError);
  CHECK_THROWS_AS(parse_task_spec("[plant]\nsubsteps = 1\n"), ConfigError);  // unstable
  CHECK_THROWS_AS(load_task_spec("/nonexistent/task.toml"), ConfigError);
}

TEST_CASE("horizon must cover the operator minimum") {
  TaskSpec spec = quiet_transport();
  spec.M = 30;
  CHECK_THROWS_AS(validate_task(spec, 40), ConfigError);
  CHECK_NOTHROW(validate_task(spec, 30));
}
