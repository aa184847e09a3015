#include "bsf/fno.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "bsf/checkpoint.hpp"
#include "bsf/errors.hpp"

namespace bsf {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

Eigen::MatrixXd activate(const Eigen::MatrixXd& h, Activation act) {
  if (act == Activation::Identity) return h;
  return h.unaryExpr([](double x) { return gelu(x); });
}

// Activation and its derivative in one sweep (GELU shares the erf call).
void activate_with_slope(const Eigen::MatrixXd& h, Activation act, Eigen::MatrixXd& out,
                         Eigen::MatrixXd& slope) {
  if (act == Activation::Identity) {
    out = h;
    slope.setOnes(h.rows(), h.cols());
    return;
  }
  out.resize(h.rows(), h.cols());
  slope.resize(h.rows(), h.cols());
  const double* x = h.data();
  double* o = out.data();
  double* s = slope.data();
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double c = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
    o[i] = x[i] * c;
    s[i] = c + x[i] * kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
  }
}

// Per-mode complex channel mixing: Y_k = R_k X_k with rows as modes.
void mix_modes(const FnoModel& model, int layer, const Eigen::MatrixXd& xr,
               const Eigen::MatrixXd& xi, Eigen::MatrixXd& yr, Eigen::MatrixXd& yi) {
  const int modes = static_cast<int>(xr.rows());
  yr.resize(modes, xr.cols());
  yi.resize(modes, xr.cols());
  for (int k = 0; k < modes; ++k) {
    const auto re = model.spec_re(layer, k);
    const auto im = model.spec_im(layer, k);
    yr.row(k).noalias() = xr.row(k) * re.transpose();
    yr.row(k).noalias() -= xi.row(k) * im.transpose();
    yi.row(k).noalias() = xi.row(k) * re.transpose();
    yi.row(k).noalias() += xr.row(k) * im.transpose();
  }
}

Eigen::MatrixXd augment_input(const FnoConfig& cfg, const Eigen::MatrixXd& U) {
  const Eigen::Index m = U.rows();
  Eigen::MatrixXd a(m, cfg.input_dim());
  a.leftCols(cfg.d_u) = U;
  if (cfg.include_time_channel) {
    for (Eigen::Index i = 0; i < m; ++i) {
      a(i, cfg.d_u) = m > 1 ? static_cast<double>(i) / static_cast<double>(m - 1) : 0.0;
    }
  }
  return a;
}

// Tangent of the hidden state through all kernel layers, starting from the
// tangent of the lifted state.
// Pushes a tangent of the lifted state through the layers and returns it
// at `out_row` only. When `sparse_row` >= 0 the input tangent is non-zero in
// that row alone.
Eigen::RowVectorXd propagate_tangent(const FnoModel& model, const FnoTape& tape, Eigen::MatrixXd dv,
                                     int sparse_row, int out_row) {
  const FnoConfig& cfg = model.config();
  const SpectralBasis& basis = *tape.basis;
  Eigen::MatrixXd dxr, dxi, dyr, dyi, dh;
  for (int l = 0; l < cfg.layers; ++l) {
    const bool sparse = l == 0 && sparse_row >= 0;
    if (sparse) {
      // The DFT of a single non-zero row is an outer product.
      const auto row = dv.row(sparse_row);
      dxr.noalias() = basis.fwd_cos.col(sparse_row) * row;
      dxi.noalias() = -basis.fwd_sin.col(sparse_row) * row;
    } else {
      dxr.noalias() = basis.fwd_cos * dv;
      dxi.noalias() = -(basis.fwd_sin * dv);
    }
    mix_modes(model, l, dxr, dxi, dyr, dyi);
    if (l == cfg.layers - 1) {
      // Only the requested output row is needed from the last layer.
      Eigen::RowVectorXd h = basis.inv_cos.row(out_row) * dyr;
      h.noalias() -= basis.inv_sin.row(out_row) * dyi;
      if (!sparse || sparse_row == out_row) h.noalias() += dv.row(out_row) * model.local_w(l).transpose();
      return tape.slope[l].row(out_row).cwiseProduct(h);
    }
    if (sparse) {
      dh.setZero(dv.rows(), dv.cols());
      dh.row(sparse_row).noalias() = dv.row(sparse_row) * model.local_w(l).transpose();
    } else {
      dh.noalias() = dv * model.local_w(l).transpose();
    }
    dh.noalias() += basis.inv_cos * dyr;
    dh.noalias() -= basis.inv_sin * dyi;
    dv = tape.slope[l].cwiseProduct(dh);
  }
  return dv.row(out_row);
}

}  // namespace

void validate_fno_config(const FnoConfig& cfg) {
  if (cfg.channels < 1 || cfg.layers < 1 || cfg.modes < 1 || cfg.d_u < 1 || cfg.d_y < 1) {
    throw ConfigError("operator channels, layers, modes and dimensions must be >= 1");
  }
  if (cfg.pad < 0) throw ConfigError("operator padding must be non-negative");
  if (cfg.min_len < 2 || cfg.min_len > cfg.max_len) {
    throw ConfigError("operator prefix range must satisfy 2 <= min_len <= max_len");
  }
  if (cfg.min_len / 2 + 1 < cfg.modes) {
    throw ConfigError("minimum prefix length " + std::to_string(cfg.min_len) +
                      " has fewer than " + std::to_string(cfg.modes) + " Fourier modes");
  }
}

FnoModel::FnoModel(FnoConfig cfg) : cfg_(std::move(cfg)) {
  validate_fno_config(cfg_);
  const int c = cfg_.channels;
  lift_w_ = add_block("lift.weight", ParamGroup::Lifting, {c, cfg_.input_dim()});
  lift_b_ = add_block("lift.bias", ParamGroup::Lifting, {c});
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    spec_re_.push_back(add_block(p + ".spectral.re", ParamGroup::Spectral, {cfg_.modes, c, c}));
    spec_im_.push_back(add_block(p + ".spectral.im", ParamGroup::Spectral, {cfg_.modes, c, c}));
    local_w_.push_back(add_block(p + ".local.weight", ParamGroup::Local, {c, c}));
    local_b_.push_back(add_block(p + ".local.bias", ParamGroup::Local, {c}));
  }
  if (!cfg_.linear_projection) {
    proj1_w_ = add_block("proj1.weight", ParamGroup::Projection, {c, c});
    proj1_b_ = add_block("proj1.bias", ParamGroup::Projection, {c});
  }
  proj2_w_ = add_block("proj2.weight", ParamGroup::Projection, {cfg_.d_y, c});
  proj2_b_ = add_block("proj2.bias", ParamGroup::Projection, {cfg_.d_y});
  params_.assign(blocks_.back().offset + blocks_.back().size(), 0.0);
}

std::size_t FnoModel::add_block(std::string name, ParamGroup group, std::vector<int> shape) {
  ParamBlock b{std::move(name), group, 0, std::move(shape)};
  if (!blocks_.empty()) b.offset = blocks_.back().offset + blocks_.back().size();
  blocks_.push_back(std::move(b));
  return blocks_.size() - 1;
}

ConstRowMap FnoModel::mat(std::size_t b) const {
  const auto& blk = blocks_[b];
  return ConstRowMap(params_.data() + blk.offset, blk.shape[0], blk.shape[1]);
}
ConstVecMap FnoModel::vec(std::size_t b) const {
  const auto& blk = blocks_[b];
  return ConstVecMap(params_.data() + blk.offset, blk.shape[0]);
}
ConstRowMap FnoModel::mode_mat(std::size_t b, int k) const {
  const auto& blk = blocks_[b];
  const std::size_t stride = static_cast<std::size_t>(blk.shape[1]) * blk.shape[2];
  return ConstRowMap(params_.data() + blk.offset + k * stride, blk.shape[1], blk.shape[2]);
}
RowMap FnoModel::mat(double* base, std::size_t b) const {
  const auto& blk = blocks_[b];
  return RowMap(base + blk.offset, blk.shape[0], blk.shape[1]);
}
VecMap FnoModel::vec(double* base, std::size_t b) const {
  const auto& blk = blocks_[b];
  return VecMap(base + blk.offset, blk.shape[0]);
}
RowMap FnoModel::mode_mat(double* base, std::size_t b, int k) const {
  const auto& blk = blocks_[b];
  const std::size_t stride = static_cast<std::size_t>(blk.shape[1]) * blk.shape[2];
  return RowMap(base + blk.offset + k * stride, blk.shape[1], blk.shape[2]);
}

FnoModel FnoModel::random(const FnoConfig& cfg, std::uint64_t seed) {
  FnoModel model(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& blk : model.blocks_) {
    double lo = 0.0;
    double hi = 0.0;
    if (blk.group == ParamGroup::Spectral) {
      hi = 1.0 / (static_cast<double>(cfg.channels) * cfg.channels);
    } else {
      // Weight blocks are {out, in}; their bias shares the fan-in.
      const bool is_bias = blk.shape.size() == 1;
      const auto& w = is_bias ? model.blocks_[&blk - model.blocks_.data() - 1] : blk;
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.shape[1]));
      lo = -bound;
      hi = bound;
    }
    double* p = model.params_.data() + blk.offset;
    for (std::size_t i = 0; i < blk.size(); ++i) p[i] = lo + (hi - lo) * unit(rng);
  }
  return model;
}

Eigen::MatrixXd fno_forward(const FnoModel& model, const Eigen::MatrixXd& U, FnoTape* tape) {
  const FnoConfig& cfg = model.config();
  if (U.cols() != cfg.d_u) throw ShapeError("operator input has the wrong number of columns");
  const int len = static_cast<int>(U.rows());
  auto basis = spectral_basis(len + cfg.pad, cfg.modes);

  Eigen::MatrixXd input = augment_input(cfg, U);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(len + cfg.pad, cfg.channels);
  v.topRows(len).noalias() = input * model.lift_w().transpose();
  v.topRows(len).rowwise() += model.lift_b().transpose();

  if (tape) {
    tape->basis = basis;
    tape->v.assign(1, v);
    tape->xr.clear();
    tape->xi.clear();
    tape->h.clear();
    tape->slope.clear();
  }

  Eigen::MatrixXd xr, xi, yr, yi, h;
  for (int l = 0; l < cfg.layers; ++l) {
    xr.noalias() = basis->fwd_cos * v;
    xi.noalias() = -(basis->fwd_sin * v);
    mix_modes(model, l, xr, xi, yr, yi);
    h.noalias() = v * model.local_w(l).transpose();
    h.noalias() += basis->inv_cos * yr;
    h.noalias() -= basis->inv_sin * yi;
    h.rowwise() += model.local_b(l).transpose();
    if (tape) {
      Eigen::MatrixXd slope;
      activate_with_slope(h, cfg.activation, v, slope);
      tape->xr.push_back(xr);
      tape->xi.push_back(xi);
      tape->h.push_back(h);
      tape->slope.push_back(std::move(slope));
      tape->v.push_back(v);
    } else {
      v = activate(h, cfg.activation);
    }
  }

  if (cfg.pad > 0) v.conservativeResize(len, Eigen::NoChange);
  Eigen::MatrixXd out;
  if (cfg.linear_projection) {
    out = v * model.proj2_w().transpose();
  } else {
    Eigen::MatrixXd g = v * model.proj1_w().transpose();
    g.rowwise() += model.proj1_b().transpose();
    if (tape) {
      activate_with_slope(g, cfg.activation, tape->head_act, tape->head_slope);
      out = tape->head_act * model.proj2_w().transpose();
      tape->head = std::move(g);
    } else {
      out = activate(g, cfg.activation) * model.proj2_w().transpose();
    }
  }
  out.rowwise() += model.proj2_b().transpose();
  if (tape) {
    tape->input = std::move(input);
    tape->output = out;
  }
  return out;
}

void fno_backward_accumulate(const FnoModel& model, const FnoTape& tape, const Eigen::MatrixXd& dY,
                             std::vector<double>& grad, const FrozenGroups& frozen) {
  const FnoConfig& cfg = model.config();
  if (dY.rows() != tape.length() || dY.cols() != cfg.d_y) {
    throw ShapeError("cotangent shape does not match the recorded forward pass");
  }
  if (grad.size() != model.size()) throw ShapeError("gradient buffer has the wrong size");
  const SpectralBasis& basis = *tape.basis;
  double* g = grad.data();
  const bool need_proj = !frozen.contains(ParamGroup::Projection);
  const auto vl = tape.v.back().topRows(dY.rows());

  Eigen::MatrixXd dv;
  if (cfg.linear_projection) {
    if (need_proj) {
      model.proj2_w(g).noalias() += dY.transpose() * vl;
      model.proj2_b(g) += dY.colwise().sum().transpose();
    }
    dv.noalias() = dY * model.proj2_w();
  } else {
    const Eigen::MatrixXd& act = tape.head_act;
    if (need_proj) {
      model.proj2_w(g).noalias() += dY.transpose() * act;
      model.proj2_b(g) += dY.colwise().sum().transpose();
    }
    Eigen::MatrixXd dg = (dY * model.proj2_w()).cwiseProduct(tape.head_slope);
    if (need_proj) {
      model.proj1_w(g).noalias() += dg.transpose() * vl;
      model.proj1_b(g) += dg.colwise().sum().transpose();
    }
    dv.noalias() = dg * model.proj1_w();
  }
  if (cfg.pad > 0) dv.conservativeResizeLike(Eigen::MatrixXd::Zero(dY.rows() + cfg.pad, cfg.channels));

  const bool need_local = !frozen.contains(ParamGroup::Local);
  const bool need_spec = !frozen.contains(ParamGroup::Spectral);
  Eigen::MatrixXd dh, dyr, dyi, dxr, dxi;
  for (int l = cfg.layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& vin = tape.v[l];
    dh = dv.cwiseProduct(tape.slope[l]);
    if (need_local) {
      model.local_b(g, l) += dh.colwise().sum().transpose();
      model.local_w(g, l).noalias() += dh.transpose() * vin;
    }
    dv.noalias() = dh * model.local_w(l);

    dyr.noalias() = basis.inv_cos.transpose() * dh;
    dyi.noalias() = -(basis.inv_sin.transpose() * dh);
    const auto& xr = tape.xr[l];
    const auto& xi = tape.xi[l];
    dxr.resize(xr.rows(), xr.cols());
    dxi.resize(xi.rows(), xi.cols());
    for (int k = 0; k < cfg.modes; ++k) {
      const auto re = model.spec_re(l, k);
      const auto im = model.spec_im(l, k);
      if (need_spec) {
        auto gre = model.spec_re(g, l, k);
        auto gim = model.spec_im(g, l, k);
        gre.noalias() += dyr.row(k).transpose() * xr.row(k);
        gre.noalias() += dyi.row(k).transpose() * xi.row(k);
        gim.noalias() += dyi.row(k).transpose() * xr.row(k);
        gim.noalias() -= dyr.row(k).transpose() * xi.row(k);
      }
      dxr.row(k).noalias() = dyr.row(k) * re;
      dxr.row(k).noalias() += dyi.row(k) * im;
      dxi.row(k).noalias() = dyi.row(k) * re;
      dxi.row(k).noalias() -= dyr.row(k) * im;
    }
    dv.noalias() += basis.fwd_cos.transpose() * dxr;
    dv.noalias() -= basis.fwd_sin.transpose() * dxi;
  }

  if (!frozen.contains(ParamGroup::Lifting)) {
    const auto dl = dv.topRows(dY.rows());
    model.lift_w(g).noalias() += dl.transpose() * tape.input;
    model.lift_b(g) += dl.colwise().sum().transpose();
  }
}

std::vector<double> fno_backward(const FnoModel& model, const FnoTape& tape,
                                 const Eigen::MatrixXd& dY, const FrozenGroups& frozen) {
  std::vector<double> grad(model.size(), 0.0);
  fno_backward_accumulate(model, tape, dY, grad, frozen);
  return grad;
}

Eigen::MatrixXd fno_output_jacobian(const FnoModel& model, const FnoTape& tape, int row) {
  const FnoConfig& cfg = model.config();
  const int len = tape.length();
  if (row < 0 || row >= len) throw ShapeError("jacobian row outside the recorded sequence");
  Eigen::MatrixXd jac(cfg.d_y, cfg.d_u);
  for (int j = 0; j < cfg.d_u; ++j) {
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(len + cfg.pad, cfg.channels);
    dv.row(row) = model.lift_w().col(j).transpose();
    const Eigen::RowVectorXd dr = propagate_tangent(model, tape, std::move(dv), row, row);
    Eigen::RowVectorXd dy;
    if (cfg.linear_projection) {
      dy = dr * model.proj2_w().transpose();
    } else {
      Eigen::RowVectorXd dg = (dr * model.proj1_w().transpose()).cwiseProduct(tape.head_slope.row(row));
      dy = dg * model.proj2_w().transpose();
    }
    jac.col(j) = dy.transpose();
  }
  return jac;
}

Eigen::VectorXd fno_output_jvp(const FnoModel& model, const Eigen::MatrixXd& U,
                               const Eigen::VectorXd& direction) {
  if (direction.size() != model.config().d_u) throw ShapeError("direction has the wrong size");
  FnoTape tape;
  fno_forward(model, U, &tape);
  return fno_output_jacobian(model, tape, tape.length() - 1) * direction;
}

namespace {

const char* activation_name(Activation a) { return a == Activation::Gelu ? "gelu" : "identity"; }

nlohmann::json config_json(const FnoConfig& cfg) {
  return {{"channels", cfg.channels},
          {"layers", cfg.layers},
          {"modes", cfg.modes},
          {"d_u", cfg.d_u},
          {"d_y", cfg.d_y},
          {"include_time_channel", cfg.include_time_channel},
          {"linear_projection", cfg.linear_projection},
          {"activation", activation_name(cfg.activation)},
          {"min_len", cfg.min_len},
          {"max_len", cfg.max_len},
          {"pad", cfg.pad}};
}

FnoConfig config_from_json(const nlohmann::json& j) {
  FnoConfig cfg;
  cfg.channels = j.at("channels").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.modes = j.at("modes").get<int>();
  cfg.d_u = j.at("d_u").get<int>();
  cfg.d_y = j.at("d_y").get<int>();
  cfg.include_time_channel = j.at("include_time_channel").get<bool>();
  cfg.linear_projection = j.at("linear_projection").get<bool>();
  const auto act = j.at("activation").get<std::string>();
  if (act == "gelu") {
    cfg.activation = Activation::Gelu;
  } else if (act == "identity") {
    cfg.activation = Activation::Identity;
  } else {
    throw ParseError("unknown activation '" + act + "'");
  }
  cfg.min_len = j.at("min_len").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.pad = j.value("pad", 0);
  return cfg;
}

// Spectral blocks are stored as one complex tensor per layer; everything
// else is real.
std::vector<TensorInfo> tensor_table(const FnoModel& model) {
  std::vector<TensorInfo> table;
  for (const auto& blk : model.blocks()) {
    if (blk.group == ParamGroup::Spectral) {
      if (blk.name.ends_with(".im")) continue;
      table.push_back({blk.name.substr(0, blk.name.size() - 3), blk.shape, true});
    } else {
      table.push_back({blk.name, blk.shape, false});
    }
  }
  return table;
}

}  // namespace

void save_fno(const FnoModel& model, const std::filesystem::path& path) {
  std::vector<double> payload;
  payload.reserve(model.size());
  const auto& blocks = model.blocks();
  const auto& p = model.params();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.group == ParamGroup::Spectral) {
      if (blk.name.ends_with(".im")) continue;
      const auto& im = blocks[b + 1];
      for (std::size_t i = 0; i < blk.size(); ++i) {
        payload.push_back(p[blk.offset + i]);
        payload.push_back(p[im.offset + i]);
      }
    } else {
      payload.insert(payload.end(), p.begin() + blk.offset, p.begin() + blk.offset + blk.size());
    }
  }
  write_checkpoint(path, "fno", config_json(model.config()), tensor_table(model), payload);
}

FnoModel load_fno(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path, "fno");
  FnoConfig cfg;
  try {
    cfg = config_from_json(data.header.at("config"));
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(path.string() + ": bad operator config: " + err.what());
  }
  FnoModel model(cfg);
  const auto expected = tensor_table(model);
  if (expected.size() != data.tensors.size()) {
    throw ParseError(path.string() + ": tensor count does not match the operator config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != data.tensors[i].name || expected[i].shape != data.tensors[i].shape ||
        expected[i].complex != data.tensors[i].complex) {
      throw ParseError(path.string() + ": tensor '" + data.tensors[i].name +
                       "' does not match the operator config");
    }
  }
  auto& p = model.params();
  const auto& blocks = model.blocks();
  std::size_t pos = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& blk = blocks[b];
    if (blk.group == ParamGroup::Spectral) {
      if (blk.name.ends_with(".im")) continue;
      const auto& im = blocks[b + 1];
      for (std::size_t i = 0; i < blk.size(); ++i) {
        p[blk.offset + i] = data.payload[pos++];
        p[im.offset + i] = data.payload[pos++];
      }
    } else {
      for (std::size_t i = 0; i < blk.size(); ++i) p[blk.offset + i] = data.payload[pos++];
    }
  }
  for (double v : p) {
    if (!std::isfinite(v)) throw ParseError(path.string() + ": non-finite parameter");
  }
  return model;
}

FnoModel load_fno(const std::filesystem::path& path, const FnoConfig& expected) {
  FnoModel model = load_fno(path);
  FnoConfig got = model.config();
  got.min_len = expected.min_len;
  got.max_len = expected.max_len;
  if (!(got == expected)) {
    throw ParseError(path.string() + ": stored operator architecture differs from the requested one");
  }
  return model;
}

}  // namespace bsf
