#include <doctest.h>

#include "bsf/errors.hpp"
#include "bsf/optim.hpp"

using namespace bsf;

namespace {

// Reference trajectories produced by torch.optim (float64) from params
// (1, -2) under the gradient sequence below.
const std::vector<std::vector<double>> kGrads{{0.5, -1.0}, {0.2, 3.0}, {-0.4, 0.0}};

template <class Opt>
void check_sequence(Opt& opt, const std::vector<std::vector<double>>& expect) {
  std::vector<double> p{1.0, -2.0};
  for (std::size_t t = 0; t < kGrads.size(); ++t) {
    opt.step(p, kGrads[t]);
    CHECK(p[0] == doctest::Approx(expect[t][0]).epsilon(1e-13));
    CHECK(p[1] == doctest::Approx(expect[t][1]).epsilon(1e-13));
  }
}

}  // namespace

TEST_CASE("AdamW matches the reference steps") {
  AdamWSettings s;
  s.lr = 0.1;
  s.weight_decay = 0.01;
  AdamW opt(2, s);
  check_sequence(opt, {{0.899000002, -1.898000001},
                       {0.8082434839009282, -1.945520984107744},
                       {0.7898073547223041, -1.981776480259877}});
  CHECK(opt.steps() == 3);
}

TEST_CASE("AdamW defaults") {
  const AdamWSettings s;
  CHECK(s.lr == 1e-3);
  CHECK(s.weight_decay == 1e-3);
  CHECK(s.beta1 == 0.9);
  CHECK(s.beta2 == 0.999);
}

TEST_CASE("NAdam with an L2 penalty matches the reference steps") {
  NAdamSettings s;
  NAdam opt(2, s);
  check_sequence(opt, {{0.9894354823925214, -1.9894354823044837},
                       {0.9842090343717205, -1.9987934104320961},
                       {0.9880071929965335, -1.998466868004834}});
}

TEST_CASE("NAdam with decoupled decay matches the reference steps") {
  NAdamSettings s;
  s.decoupled_weight_decay = true;
  NAdam opt(2, s);
  check_sequence(opt, {{0.9884354824277365, -1.9874354823220912},
                       {0.982978853878487, -1.9951627393625821},
                       {0.9880201804074155, -1.9936537092430877}});
}

TEST_CASE("optimizers reject mismatched sizes") {
  AdamW a(2, {});
  std::vector<double> p{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(a.step(p, {0.0, 0.0, 0.0}), ShapeError);
  NAdam n(2, {});
  std::vector<double> q{1.0, 2.0};
  CHECK_THROWS_AS(n.step(q, {0.0}), ShapeError);
}
