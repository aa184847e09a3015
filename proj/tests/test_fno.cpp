#include <doctest.h>

#include <complex>
#include <numbers>
#include <random>
#include <thread>

#include "bsf/errors.hpp"
#include "bsf/fno.hpp"
#include "bsf/fno_train.hpp"
#include "testing.hpp"

using namespace bsf;

namespace {

FnoConfig tiny() {
  FnoConfig cfg;
  cfg.channels = 4;
  cfg.layers = 2;
  cfg.modes = 3;
  cfg.min_len = 8;
  cfg.max_len = 16;
  return cfg;
}

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = N(rng);
  return m;
}

double inner(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return a.cwiseProduct(b).sum(); }

}  // namespace

TEST_CASE("zero parameters give a zero output") {
  FnoConfig cfg;
  FnoModel model(cfg);
  const Eigen::MatrixXd U = random_matrix(50, 2, 1);
  CHECK(fno_forward(model, U).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reference architecture maps 200x2 to 200x2") {
  FnoConfig cfg;
  CHECK(cfg.channels == 64);
  CHECK(cfg.layers == 4);
  CHECK(cfg.modes == 16);
  const FnoModel model = FnoModel::random(cfg, 3);
  const Eigen::MatrixXd Y = fno_forward(model, random_matrix(200, 2, 2));
  CHECK(Y.rows() == 200);
  CHECK(Y.cols() == 2);
  CHECK(Y.allFinite());
  CHECK_NOTHROW(fno_forward(model, random_matrix(30, 2, 2)));
  CHECK_THROWS_AS(fno_forward(model, random_matrix(29, 2, 2)), ShapeError);
  CHECK_THROWS_AS(fno_forward(model, random_matrix(40, 3, 2)), ShapeError);
}

TEST_CASE("single linear layer equals the explicit DFT convolution") {
  FnoConfig cfg;
  cfg.channels = 3;
  cfg.layers = 1;
  cfg.modes = 5;
  cfg.activation = Activation::Identity;
  cfg.linear_projection = true;
  cfg.min_len = 9;
  cfg.max_len = 23;
  FnoModel model = FnoModel::random(cfg, 8);
  double* p = model.params().data();
  model.local_w(p, 0).setZero();
  model.local_b(p, 0).setZero();

  const int n = 23;
  const Eigen::MatrixXd U = random_matrix(n, 2, 4);
  const Eigen::MatrixXd Y = fno_forward(model, U);

  // Oracle: lift, complex DFT per channel, per-mode complex channel mix, inverse real part.
  Eigen::MatrixXd in(n, 3);
  in.leftCols(2) = U;
  for (int m = 0; m < n; ++m) in(m, 2) = m / double(n - 1);
  Eigen::MatrixXd v = in * model.lift_w().transpose();
  v.rowwise() += model.lift_b().transpose();
  using cd = std::complex<double>;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, 3);
  for (int k = 0; k < cfg.modes; ++k) {
    std::vector<cd> X(3, 0.0);
    for (int c = 0; c < 3; ++c)
      for (int m = 0; m < n; ++m) X[c] += v(m, c) * std::polar(1.0, -2.0 * std::numbers::pi * k * m / n);
    for (int o = 0; o < 3; ++o) {
      cd Yk = 0.0;
      for (int c = 0; c < 3; ++c) Yk += cd(model.spec_re(0, k)(o, c), model.spec_im(0, k)(o, c)) * X[c];
      const double w = (k == 0 ? 1.0 : 2.0) / n;
      for (int m = 0; m < n; ++m) h(m, o) += w * (Yk * std::polar(1.0, 2.0 * std::numbers::pi * k * m / n)).real();
    }
  }
  Eigen::MatrixXd expect = h * model.proj2_w().transpose();
  expect.rowwise() += model.proj2_b().transpose();
  CHECK((Y - expect).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("identity spectral weights act as a low pass") {
  FnoConfig cfg;
  cfg.channels = 3;
  cfg.layers = 1;
  cfg.modes = 4;
  cfg.d_u = 3;
  cfg.d_y = 3;
  cfg.include_time_channel = false;
  cfg.activation = Activation::Identity;
  cfg.linear_projection = true;
  cfg.min_len = 8;
  cfg.max_len = 64;
  FnoModel model(cfg);
  double* p = model.params().data();
  model.lift_w(p).setIdentity();
  model.proj2_w(p).setIdentity();
  for (int k = 0; k < cfg.modes; ++k) model.spec_re(p, 0, k).setIdentity();
  const Eigen::MatrixXd U = random_matrix(64, 3, 5);
  const Eigen::MatrixXd once = fno_forward(model, U);
  CHECK((once - low_pass(U, 4)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((fno_forward(model, once) - once).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("reverse-mode gradient matches central differences") {
  for (auto [linear_head, pad] : {std::pair{false, 0}, std::pair{true, 0}, std::pair{false, 5}}) {
    FnoConfig cfg = tiny();
    cfg.linear_projection = linear_head;
    cfg.pad = pad;
    FnoModel model = FnoModel::random(cfg, 21);
    // Push spectral weights up so their gradients are not negligible.
    for (const auto& blk : model.blocks()) {
      if (blk.group == ParamGroup::Spectral) {
        for (std::size_t i = 0; i < blk.size(); ++i) model.params()[blk.offset + i] *= 16.0;
      }
    }
    const Eigen::MatrixXd U = random_matrix(16, 2, 6);
    const Eigen::MatrixXd dY = random_matrix(16, 2, 7);
    FnoTape tape;
    fno_forward(model, U, &tape);
    const std::vector<double> grad = fno_backward(model, tape, dY);

    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t i = 0; i < model.size(); ++i) {
      FnoModel plus = model, minus = model;
      plus.params()[i] += h;
      minus.params()[i] -= h;
      const double fd = (inner(dY, fno_forward(plus, U)) - inner(dY, fno_forward(minus, U))) / (2 * h);
      const double rel = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-4});
      worst = std::max(worst, rel);
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("zero cotangent and frozen groups") {
  const FnoModel model = FnoModel::random(tiny(), 2);
  const Eigen::MatrixXd U = random_matrix(12, 2, 1);
  FnoTape tape;
  fno_forward(model, U, &tape);
  for (double g : fno_backward(model, tape, Eigen::MatrixXd::Zero(12, 2))) REQUIRE(g == 0.0);

  const Eigen::MatrixXd dY = random_matrix(12, 2, 3);
  const auto full = fno_backward(model, tape, dY);
  FrozenGroups frozen;
  frozen.add(ParamGroup::Spectral).add(ParamGroup::Lifting);
  const auto part = fno_backward(model, tape, dY, frozen);
  for (const auto& blk : model.blocks()) {
    const bool off = frozen.contains(blk.group);
    for (std::size_t i = blk.offset; i < blk.offset + blk.size(); ++i) {
      if (off) {
        REQUIRE(part[i] == 0.0);
      } else {
        REQUIRE(part[i] == full[i]);
      }
    }
  }
  CHECK_THROWS_AS(fno_backward(model, tape, Eigen::MatrixXd::Zero(11, 2)), ShapeError);
}

TEST_CASE("output JVP matches extrapolated finite differences") {
  const FnoModel model = FnoModel::random(tiny(), 31);
  const Eigen::MatrixXd U = random_matrix(14, 2, 9);
  for (const Eigen::Vector2d& dir : {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.3, -0.7)}) {
    const Eigen::VectorXd jvp = fno_output_jvp(model, U, dir);
    const Eigen::VectorXd base = fno_forward(model, U).row(13).transpose();
    auto quotient = [&](double eps) {
      Eigen::MatrixXd Up = U;
      Up.row(13) += eps * dir.transpose();
      return Eigen::VectorXd((fno_forward(model, Up).row(13).transpose() - base) / eps);
    };
    const double e1 = 1e-4, e2 = 1e-5;
    const Eigen::VectorXd extrap = (e1 * quotient(e2) - e2 * quotient(e1)) / (e1 - e2);
    CHECK((jvp - extrap).norm() / extrap.norm() <= 1e-5);
  }
  CHECK(fno_output_jvp(model, U, Eigen::Vector2d::Zero()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("output JVP is linear in the direction") {
  const FnoModel model = FnoModel::random(tiny(), 4);
  const Eigen::MatrixXd U = random_matrix(16, 2, 10);
  const Eigen::Vector2d d1(0.4, 1.3), d2(-2.0, 0.25);
  const double a = 1.7, b = -0.6;
  const Eigen::VectorXd lhs = fno_output_jvp(model, U, a * d1 + b * d2);
  const Eigen::VectorXd rhs = a * fno_output_jvp(model, U, d1) + b * fno_output_jvp(model, U, d2);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("jacobian at an interior row matches finite differences") {
  for (int pad : {0, 7}) {
    FnoConfig cfg = tiny();
    cfg.pad = pad;
    const FnoModel model = FnoModel::random(cfg, 12);
    const Eigen::MatrixXd U = random_matrix(16, 2, 13);
    FnoTape tape;
    fno_forward(model, U, &tape);
    for (int row : {6, 15}) {
      const Eigen::MatrixXd J = fno_output_jacobian(model, tape, row);
      for (int j = 0; j < 2; ++j) {
        Eigen::MatrixXd Up = U, Um = U;
        Up(row, j) += 1e-6;
        Um(row, j) -= 1e-6;
        const Eigen::VectorXd fd =
            (fno_forward(model, Up).row(row) - fno_forward(model, Um).row(row)).transpose() / 2e-6;
        CHECK((J.col(j) - fd).norm() <= 1e-6 * std::max(1.0, fd.norm()));
      }
    }
    CHECK_THROWS_AS(fno_output_jacobian(model, tape, 16), ShapeError);
  }
}

TEST_CASE("internal padding keeps the output length and changes the kernel window") {
  FnoConfig cfg = tiny();
  const FnoModel plain = FnoModel::random(cfg, 3);
  cfg.pad = 6;
  FnoModel padded(cfg);
  padded.params() = plain.params();
  const Eigen::MatrixXd U = random_matrix(12, 2, 4);
  const Eigen::MatrixXd a = fno_forward(plain, U);
  const Eigen::MatrixXd b = fno_forward(padded, U);
  CHECK(b.rows() == 12);
  CHECK((a - b).cwiseAbs().maxCoeff() > 1e-6);
  cfg.pad = -1;
  CHECK_THROWS_AS(validate_fno_config(cfg), ConfigError);
}

TEST_CASE("forward pass is deterministic and reentrant") {
  const FnoModel model = FnoModel::random(FnoConfig{}, 5);
  const Eigen::MatrixXd U = random_matrix(120, 2, 6);
  const Eigen::MatrixXd ref = fno_forward(model, U);
  std::vector<Eigen::MatrixXd> outs(4);
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k) threads.emplace_back([&, k] { outs[k] = fno_forward(model, U); });
  for (auto& t : threads) t.join();
  for (const auto& o : outs) CHECK(o == ref);
}

TEST_CASE("batch loss equals the hand-expanded risk") {
  const FnoModel model = FnoModel::random(tiny(), 14);
  PrefixBatch batch;
  batch.prefix_len = 11;
  for (int b = 0; b < 3; ++b) {
    batch.inputs.push_back(random_matrix(11, 2, 40 + b));
    batch.targets.push_back(random_matrix(11, 2, 50 + b));
  }
  double expect = 0.0;
  for (int b = 0; b < 3; ++b) {
    const Eigen::MatrixXd pred = fno_forward(model, batch.inputs[b]);
    double seq = 0.0;
    for (int m = 0; m < 11; ++m) {
      double sq = 0.0;
      for (int j = 0; j < 2; ++j) sq += (batch.targets[b](m, j) - pred(m, j)) * (batch.targets[b](m, j) - pred(m, j));
      seq += sq;
    }
    expect += seq / 11.0;
  }
  expect /= 3.0;
  CHECK(std::abs(prefix_batch_loss(model, batch) - expect) <= 1e-12);

  // Its gradient agrees with a central difference along a random direction.
  std::vector<double> grad(model.size(), 0.0);
  prefix_batch_loss(model, batch, &grad);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<double> dir(model.size());
  double slope = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    dir[i] = N(rng);
    slope += dir[i] * grad[i];
  }
  FnoModel plus = model, minus = model;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    plus.params()[i] += 1e-6 * dir[i];
    minus.params()[i] -= 1e-6 * dir[i];
  }
  const double fd = (prefix_batch_loss(plus, batch) - prefix_batch_loss(minus, batch)) / 2e-6;
  CHECK(std::abs(fd - slope) <= 1e-5 * std::abs(slope));
}

TEST_CASE("training on a zero target drives the loss down") {
  std::vector<Trajectory> trajs;
  for (int k = 0; k < 12; ++k) {
    Trajectory tr;
    tr.dt = 0.01;
    tr.t = Eigen::VectorXd::LinSpaced(16, 0.0, 0.15);
    tr.U = random_matrix(16, 2, 100 + k);
    tr.Y = Eigen::MatrixXd::Zero(16, 2);
    trajs.push_back(tr);
  }
  NoTrainOptions opt;
  opt.epochs = 40;
  opt.batch_size = 4;
  opt.seed = 3;
  opt.adamw.lr = 1e-2;
  const std::vector<Trajectory> train(trajs.begin(), trajs.begin() + 8);
  const std::vector<Trajectory> test(trajs.begin() + 8, trajs.end());
  const NoTrainResult res = train_no(train, test, tiny(), opt);
  REQUIRE(res.log.size() == 40);
  const double first = res.log.front().train_loss;
  double last5 = 0.0;
  for (int e = 35; e < 40; ++e) last5 += res.log[e].train_loss / 5.0;
  CHECK(last5 < 0.05 * first);
  CHECK(res.log.front().lengths == std::vector<int>{8, 12, 16});

  // Same seed, same run.
  const NoTrainResult again = train_no(train, test, tiny(), opt);
  CHECK(again.model.params() == res.model.params());
}

TEST_CASE("model checkpoint round trip and errors") {
  const auto dir = testing::temp_dir("fno_ckpt");
  const FnoModel model = FnoModel::random(tiny(), 77);
  save_fno(model, dir / "m.ckpt");
  const FnoModel back = load_fno(dir / "m.ckpt");
  CHECK(back.config() == model.config());
  CHECK(back.params() == model.params());
  CHECK_NOTHROW(load_fno(dir / "m.ckpt", tiny()));

  FnoConfig other = tiny();
  other.channels = 5;
  CHECK_THROWS_AS(load_fno(dir / "m.ckpt", other), ParseError);
  other = tiny();
  other.pad = 4;
  CHECK_THROWS_AS(load_fno(dir / "m.ckpt", other), ParseError);
  save_fno(FnoModel::random(other, 78), dir / "p.ckpt");
  CHECK(load_fno(dir / "p.ckpt").config().pad == 4);

  std::filesystem::copy_file(dir / "m.ckpt", dir / "cut.ckpt");
  std::filesystem::resize_file(dir / "cut.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 24);
  CHECK_THROWS_AS(load_fno(dir / "cut.ckpt"), ParseError);
}
