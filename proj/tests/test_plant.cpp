#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bsf/errors.hpp"
#include "bsf/plant.hpp"

using namespace bsf;

namespace {

PlantParams heat(double nu = 1.0) {
  PlantParams p;
  p.kind = PlantKind::TransportHeat;
  p.nu = {nu, nu};
  return p;
}

}  // namespace

TEST_CASE("zero initial field stays at the zero equilibrium") {
  const PlantParams p = heat();
  PlantState s = plant_init(p, 64, zero_field, 0.002);
  CHECK(s.fields.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.sim_time == 0.0);
  for (int i = 0; i < 50; ++i) plant_step(s, p, Vec2::Zero(), 0.002);
  CHECK(s.fields.cwiseAbs().maxCoeff() == 0.0);
  CHECK(plant_output(s, p) == Vec2::Zero());
}

TEST_CASE("initial field is sampled on the grid") {
  const PlantParams p = heat();
  const PlantState s =
      plant_init(p, 64, [](int, double x) { return std::sin(std::numbers::pi * x); }, 0.002);
  for (int k = 0; k < 64; ++k) {
    CHECK(s.fields(0, k) == std::sin(std::numbers::pi * (k * (1.0 / 63))));
    CHECK(s.fields(1, k) == std::sin(std::numbers::pi * (k * (1.0 / 63))));
  }
}

TEST_CASE("stability bound") {
  PlantParams p = heat(0.1);
  p.substeps = 4;
  // 0.1 * (0.01 / 4) * 63^2 = 0.99225: rejected.
  CHECK(stability_number(p, 64, 0.01) == doctest::Approx(0.1 * 0.0025 * 63.0 * 63.0).epsilon(1e-14));
  CHECK_THROWS_AS(plant_init(p, 64, zero_field, 0.01), ConfigError);
  p.substeps = 8;  // 0.496
  CHECK(stability_number(p, 64, 0.01) <= 0.5);
  CHECK_NOTHROW(plant_init(p, 64, zero_field, 0.01));
  // Shipped defaults: nu = 1, dt = 0.002, 20 substeps.
  CHECK(stability_number(heat(), 64, 0.002) == doctest::Approx(0.3969).epsilon(1e-12));
}

TEST_CASE("configuration errors") {
  PlantParams p = heat();
  CHECK_THROWS_AS(plant_init(p, 8, zero_field, 0.002), ConfigError);
  p.substeps = 0;
  CHECK_THROWS_AS(plant_init(p, 64, zero_field, 0.002), ConfigError);
  p = heat();
  p.x_b = 0.0;
  CHECK_THROWS_AS(plant_init(p, 64, zero_field, 0.002), ConfigError);
  p.x_b = 1.2;
  CHECK_THROWS_AS(plant_init(p, 64, zero_field, 0.002), ConfigError);
}

TEST_CASE("output reads the field at x_b") {
  PlantParams p = heat();
  p.x_b = 0.5;
  const PlantState s = plant_init(p, 65, [](int c, double x) { return c == 0 ? x : 0.0; }, 0.002);
  CHECK(output_index(p, 65) == 32);
  CHECK(plant_output(s, p)(0) == 0.5);
  CHECK(plant_output(s, p)(1) == 0.0);
}

TEST_CASE("constant input reaches the uniform steady state") {
  const PlantParams p = heat();
  PlantState s = plant_init(p, 64, zero_field, 0.002);
  for (int i = 0; i < 3000; ++i) plant_step(s, p, Vec2(1.0, 0.0), 0.002);
  CHECK((s.fields.row(0).array() - 1.0).abs().maxCoeff() <= 1e-3);
  CHECK(s.fields.row(1).cwiseAbs().maxCoeff() == 0.0);
  const Vec2 y = plant_output(s, p);
  CHECK(std::abs(y(0) - 1.0) <= 1e-3);
  CHECK(y(1) == 0.0);
  CHECK(s.sim_time == doctest::Approx(6.0));
}

TEST_CASE("maximum principle on random rollouts") {
  const PlantParams p = heat();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int violations = 0;
  for (int r = 0; r < 100; ++r) {
    const double a = U(rng), b = U(rng);
    PlantState s = plant_init(p, 64, [&](int c, double x) { return c == 0 ? a * x : b * (1 - x); }, 0.002);
    double lo[2], hi[2];
    for (int c = 0; c < 2; ++c) {
      lo[c] = s.fields.row(c).minCoeff();
      hi[c] = s.fields.row(c).maxCoeff();
    }
    for (int i = 0; i < 200; ++i) {
      const Vec2 u(U(rng), U(rng));
      for (int c = 0; c < 2; ++c) {
        lo[c] = std::min(lo[c], u(c));
        hi[c] = std::max(hi[c], u(c));
      }
      plant_step(s, p, u, 0.002);
      for (int c = 0; c < 2; ++c) {
        if (s.fields.row(c).minCoeff() < lo[c] || s.fields.row(c).maxCoeff() > hi[c]) ++violations;
      }
      REQUIRE(s.fields.allFinite());
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("coupled plant is exactly symmetric under a channel swap") {
  PlantParams p = heat();
  p.kind = PlantKind::CoupledGather;
  p.kappa = 0.5;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto z0 = [](int c, double x) { return c == 0 ? 0.3 * x : -0.2 + x * x; };
  auto z0s = [&](int c, double x) { return z0(1 - c, x); };
  PlantState a = plant_init(p, 64, z0, 0.002);
  PlantState b = plant_init(p, 64, z0s, 0.002);
  for (int i = 0; i < 200; ++i) {
    const Vec2 u(U(rng), U(rng));
    plant_step(a, p, u, 0.002);
    plant_step(b, p, Vec2(u(1), u(0)), 0.002);
    const Vec2 ya = plant_output(a, p), yb = plant_output(b, p);
    REQUIRE(ya(0) == yb(1));
    REQUIRE(ya(1) == yb(0));
  }
}

TEST_CASE("plant stepping is deterministic") {
  PlantParams p = heat();
  p.kind = PlantKind::CoupledGather;
  auto run = [&] {
    PlantState s = plant_init(p, 64, zero_field, 0.002);
    std::vector<double> out;
    for (int i = 0; i < 100; ++i) {
      plant_step(s, p, Vec2(std::sin(0.1 * i), 0.5), 0.002);
      out.push_back(plant_output(s, p)(0));
      out.push_back(plant_output(s, p)(1));
    }
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("bounded inputs keep fields finite over 200 steps") {
  PlantParams p = heat();
  p.kind = PlantKind::CoupledGather;
  PlantState s = plant_init(p, 64, zero_field, 0.002);
  for (int i = 0; i < 200; ++i) plant_step(s, p, Vec2(i % 2 ? 1.0 : -1.0, 1.0), 0.002);
  CHECK(s.fields.allFinite());
}

TEST_CASE("unstable configuration aborts with a divergence error") {
  // Bypasses validation to drive the explicit scheme past its bound.
  PlantParams p = heat();
  PlantState s = plant_init(p, 64, zero_field, 0.002);
  p.nu = {50.0, 50.0};
  CHECK_THROWS_AS(
      [&] {
        for (int i = 0; i < 2000; ++i) plant_step(s, p, Vec2(1.0, -1.0), 0.002);
      }(),
      DivergenceError);
}
