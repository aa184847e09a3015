#include "bsf/bcbf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "bsf/checkpoint.hpp"
#include "bsf/errors.hpp"

namespace bsf {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using CMap = Map<const MatrixXd>;
using MMap = Map<MatrixXd>;

BarrierModel::BarrierModel(BarrierConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.d_y < 1) throw ConfigError("barrier output dimension must be positive");
  widths_.push_back(1 + cfg_.d_y);
  for (int h : cfg_.hidden) {
    if (h < 1) throw ConfigError("barrier hidden widths must be positive");
    widths_.push_back(h);
  }
  widths_.push_back(1);
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(n);
    n += static_cast<std::size_t>(widths_[l + 1]) * (widths_[l] + 1);
  }
  params_.assign(n, 0.0);
  shift_ = VectorXd::Zero(widths_.front());
  scale_ = VectorXd::Ones(widths_.front());
}

void BarrierModel::set_input_normalization(const VectorXd& shift, const VectorXd& scale) {
  if (shift.size() != widths_.front() || scale.size() != widths_.front()) {
    throw ShapeError("normalization size must match the barrier input width");
  }
  if (!((scale.array() > 0.0).all() && scale.allFinite() && shift.allFinite())) {
    throw ConfigError("normalization scales must be positive and finite");
  }
  shift_ = shift;
  scale_ = scale;
}

BarrierModel BarrierModel::random(const BarrierConfig& cfg, std::uint64_t seed) {
  BarrierModel m(cfg);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < m.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.widths_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t end = m.bias_offset(l) + m.widths_[l + 1];
    for (std::size_t i = m.weight_offset(l); i < end; ++i) m.params_[i] = dist(rng);
  }
  return m;
}

namespace {

CMap weight(const BarrierModel& m, const double* base, int l) {
  return CMap(base + m.weight_offset(l), m.widths()[l + 1], m.widths()[l]);
}

Map<const VectorXd> bias(const BarrierModel& m, const double* base, int l) {
  return Map<const VectorXd>(base + m.bias_offset(l), m.widths()[l + 1]);
}

// Activations and tangents per layer; index 0 is the input.
struct DualTape {
  std::vector<MatrixXd> a, da, s, dh;
};

void dual_forward(const BarrierModel& m, const MatrixXd& X, const MatrixXd* V, DualTape& tape) {
  const int L = m.num_layers();
  const double* p = m.params().data();
  tape.a.assign(L + 1, MatrixXd());
  tape.da.assign(L + 1, MatrixXd());
  tape.s.assign(L + 1, MatrixXd());
  tape.dh.assign(L + 1, MatrixXd());
  const VectorXd inv = m.input_scale().cwiseInverse();
  tape.a[0] = (X.colwise() - m.input_shift()).array().colwise() * inv.array();
  if (V) tape.da[0] = V->array().colwise() * inv.array();
  for (int l = 0; l < L; ++l) {
    MatrixXd h = weight(m, p, l) * tape.a[l];
    h.colwise() += bias(m, p, l);
    MatrixXd dh;
    if (V) dh = weight(m, p, l) * tape.da[l];
    if (l + 1 < L) {
      tape.a[l + 1] = h.array().tanh().matrix();
      tape.s[l + 1] = (1.0 - tape.a[l + 1].array().square()).matrix();
      if (V) {
        tape.da[l + 1] = tape.s[l + 1].cwiseProduct(dh);
        tape.dh[l + 1] = std::move(dh);
      }
    } else {
      tape.a[l + 1] = std::move(h);
      if (V) tape.da[l + 1] = std::move(dh);
    }
  }
}

// Reverse pass through the dual forward. g_val and g_dir are cotangents of
// the output value and of its directional derivative (1 x B each).
void dual_backward(const BarrierModel& m, const DualTape& tape, const RowVectorXd& g_val,
                   const RowVectorXd* g_dir, double* grad) {
  const int L = m.num_layers();
  const double* p = m.params().data();
  MatrixXd gh = g_val;
  MatrixXd gdh;
  if (g_dir) gdh = *g_dir;
  for (int l = L - 1; l >= 0; --l) {
    MMap gw(grad + m.weight_offset(l), m.widths()[l + 1], m.widths()[l]);
    Map<VectorXd> gb(grad + m.bias_offset(l), m.widths()[l + 1]);
    gw.noalias() += gh * tape.a[l].transpose();
    gb += gh.rowwise().sum();
    if (g_dir) gw.noalias() += gdh * tape.da[l].transpose();
    if (l == 0) break;
    const MatrixXd ga = weight(m, p, l).transpose() * gh;
    const auto& s = tape.s[l];
    if (g_dir) {
      const MatrixXd gda = weight(m, p, l).transpose() * gdh;
      // da = s * dh with s = 1 - a^2, so d(da)/dh = -2 a s dh.
      gh = s.cwiseProduct(ga) -
           2.0 * tape.a[l].cwiseProduct(s).cwiseProduct(tape.dh[l]).cwiseProduct(gda);
      gdh = s.cwiseProduct(gda);
    } else {
      gh = s.cwiseProduct(ga);
    }
  }
}

}  // namespace

BarrierBatch bcbf_eval_batch(const BarrierModel& model, const MatrixXd& X, const MatrixXd* V) {
  if (X.rows() != model.widths().front()) throw ShapeError("barrier input has the wrong row count");
  if (V && (V->rows() != X.rows() || V->cols() != X.cols())) {
    throw ShapeError("barrier tangent must match the input shape");
  }
  DualTape tape;
  dual_forward(model, X, V, tape);
  BarrierBatch out;
  out.value = tape.a.back().row(0);
  if (V) out.directional = tape.da.back().row(0);
  return out;
}

double bcbf_eval(const BarrierModel& model, double t, const VectorXd& y) {
  if (y.size() != model.config().d_y) throw ShapeError("barrier output dimension mismatch");
  VectorXd x(1 + y.size());
  x << t, y;
  return bcbf_eval_batch(model, x).value(0);
}

BarrierGradient bcbf_grad(const BarrierModel& model, double t, const VectorXd& y) {
  if (y.size() != model.config().d_y) throw ShapeError("barrier output dimension mismatch");
  const int L = model.num_layers();
  const double* p = model.params().data();
  VectorXd x(1 + y.size());
  x << t, y;
  DualTape tape;
  dual_forward(model, x, nullptr, tape);
  VectorXd g = VectorXd::Ones(1);
  for (int l = L - 1; l >= 0; --l) {
    g = weight(model, p, l).transpose() * g;
    if (l > 0) g = g.cwiseProduct(tape.s[l].col(0));
  }
  BarrierGradient out;
  out.value = tape.a.back()(0, 0);
  g = g.cwiseQuotient(model.input_scale());
  out.d_t = g(0);
  out.d_y = g.tail(y.size());
  return out;
}

BarrierSamples make_barrier_samples(const std::vector<Trajectory>& trajs, const SafeSet& safe_set) {
  std::size_t total = 0;
  int d_y = -1;
  for (const auto& tr : trajs) {
    if (tr.length() < 2) throw ConfigError("barrier samples need trajectories with at least 2 steps");
    if (d_y < 0) d_y = static_cast<int>(tr.Y.cols());
    if (tr.Y.cols() != d_y) throw ShapeError("trajectories disagree on the output dimension");
    total += static_cast<std::size_t>(tr.length());
  }
  BarrierSamples s;
  if (trajs.empty()) return s;
  s.X.resize(1 + d_y, static_cast<Eigen::Index>(total));
  s.V.resize(1 + d_y, static_cast<Eigen::Index>(total));
  s.X0.resize(1 + d_y, static_cast<Eigen::Index>(total));
  s.safe.resize(total);
  Eigen::Index c = 0;
  for (const auto& tr : trajs) {
    const int M = tr.length();
    const double dt = tr.dt;
    VectorXd x0(1 + d_y);
    x0 << tr.t(0) + dt, tr.Y.row(0).transpose();
    for (int i = 0; i < M; ++i, ++c) {
      VectorXd ydot;
      if (i == 0) {
        ydot = (tr.Y.row(1) - tr.Y.row(0)).transpose() / dt;
      } else if (i == M - 1) {
        ydot = (tr.Y.row(M - 1) - tr.Y.row(M - 2)).transpose() / dt;
      } else {
        ydot = (tr.Y.row(i + 1) - tr.Y.row(i - 1)).transpose() / (2.0 * dt);
      }
      s.X(0, c) = tr.t(i) + dt;
      s.X.col(c).tail(d_y) = tr.Y.row(i).transpose();
      s.V(0, c) = 1.0;
      s.V.col(c).tail(d_y) = ydot;
      s.X0.col(c) = x0;
      s.safe[c] = safe_contains(safe_set, tr.Y.row(i).transpose()) ? 1 : 0;
    }
  }
  return s;
}

BarrierLoss barrier_loss(const BarrierModel& model, const BarrierSamples& data,
                         const std::vector<std::size_t>& columns, const BarrierLossSettings& set,
                         std::vector<double>* grad) {
  const Eigen::Index B = static_cast<Eigen::Index>(columns.size());
  const Eigen::Index rows = data.X.rows();
  MatrixXd X(rows, B), V(rows, B), X0(rows, B);
  std::size_t n_safe = 0;
  for (Eigen::Index k = 0; k < B; ++k) {
    const auto c = static_cast<Eigen::Index>(columns[k]);
    X.col(k) = data.X.col(c);
    V.col(k) = data.V.col(c);
    X0.col(k) = data.X0.col(c);
    n_safe += data.safe[columns[k]] ? 1 : 0;
  }
  const std::size_t n_unsafe = columns.size() - n_safe;
  const double alpha = model.config().alpha;
  const double C = model.config().C;

  DualTape tape, tape0;
  dual_forward(model, X, &V, tape);
  dual_forward(model, X0, nullptr, tape0);
  const RowVectorXd phi = tape.a.back().row(0);
  const RowVectorXd phidot = tape.da.back().row(0);
  const RowVectorXd phi0 = tape0.a.back().row(0);

  const double ws = n_safe ? set.lambda_safe / n_safe : 0.0;
  const double wu = n_unsafe ? set.lambda_unsafe / n_unsafe : 0.0;
  const double wd = n_safe ? set.lambda_decrease / n_safe : 0.0;
  RowVectorXd g_val = RowVectorXd::Zero(B), g_dir = RowVectorXd::Zero(B), g_0 = RowVectorXd::Zero(B);
  BarrierLoss out;
  for (Eigen::Index k = 0; k < B; ++k) {
    if (data.safe[columns[k]]) {
      const double hs = phi(k) + set.margin;
      if (hs > 0.0) {
        out.safe_term += ws * hs;
        g_val(k) += ws;
      }
      const double r = phidot(k) + alpha * phi(k) + C * phi0(k);
      if (r > 0.0) {
        out.decrease_term += wd * r;
        g_val(k) += wd * alpha;
        g_dir(k) += wd;
        g_0(k) += wd * C;
      }
    } else {
      const double hu = set.margin - phi(k);
      if (hu > 0.0) {
        out.unsafe_term += wu * hu;
        g_val(k) -= wu;
      }
    }
  }
  out.total = out.safe_term + out.unsafe_term + out.decrease_term;
  if (grad) {
    if (grad->size() != model.size()) throw ShapeError("gradient buffer has the wrong size");
    dual_backward(model, tape, g_val, &g_dir, grad->data());
    dual_backward(model, tape0, g_0, nullptr, grad->data());
  }
  return out;
}

BarrierStats barrier_stats(const BarrierModel& model, const BarrierSamples& data) {
  BarrierStats st;
  if (data.size() == 0) return st;
  const double alpha = model.config().alpha;
  const double C = model.config().C;
  constexpr Eigen::Index kChunk = 2048;
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  std::size_t agree = 0, n_safe = 0, viol = 0;
  for (Eigen::Index c0 = 0; c0 < n; c0 += kChunk) {
    const Eigen::Index w = std::min(kChunk, n - c0);
    const MatrixXd X = data.X.middleCols(c0, w);
    const MatrixXd V = data.V.middleCols(c0, w);
    const BarrierBatch cur = bcbf_eval_batch(model, X, &V);
    const BarrierBatch init = bcbf_eval_batch(model, data.X0.middleCols(c0, w));
    for (Eigen::Index k = 0; k < w; ++k) {
      const bool safe = data.safe[c0 + k] != 0;
      if ((cur.value(k) <= 0.0) == safe) ++agree;
      if (safe) {
        ++n_safe;
        if (cur.directional(k) + alpha * cur.value(k) + C * init.value(k) > 0.0) ++viol;
      }
    }
  }
  st.sign_agreement = static_cast<double>(agree) / data.size();
  st.violation_rate = n_safe ? static_cast<double>(viol) / n_safe : 0.0;
  return st;
}

BarrierTrainResult train_bcbf(const BarrierSamples& train, const BarrierSamples& test,
                              const BarrierConfig& cfg, const BarrierTrainOptions& opt,
                              const std::function<void(const BarrierLogRow&)>& on_epoch) {
  if (train.size() == 0) throw ConfigError("barrier training needs at least one sample");
  if (opt.batch_size < 1) throw ConfigError("barrier batch size must be positive");
  BarrierTrainResult result{BarrierModel::random(cfg, opt.seed), {}};
  BarrierModel& model = result.model;
  {
    const VectorXd mean = train.X.rowwise().mean();
    const VectorXd var = (train.X.colwise() - mean).array().square().rowwise().mean();
    model.set_input_normalization(mean, var.cwiseSqrt().cwiseMax(1e-6));
  }
  NAdam optimizer(model.size(), opt.nadam);
  std::mt19937_64 rng(opt.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.size());
  std::vector<std::size_t> cols;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      cols.assign(order.begin() + start, order.begin() + end);
      std::fill(grad.begin(), grad.end(), 0.0);
      const BarrierLoss l = barrier_loss(model, train, cols, opt.loss, &grad);
      if (!std::isfinite(l.total)) throw DivergenceError("barrier loss became non-finite");
      optimizer.step(model.params(), grad);
      loss_sum += l.total;
      ++batches;
    }
    BarrierLogRow row;
    row.epoch = epoch;
    row.loss = loss_sum / batches;
    row.train = barrier_stats(model, train);
    row.test = barrier_stats(model, test);
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return result;
}

void write_barrier_log_csv(const std::vector<BarrierLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << "epoch,loss,train_sign_agreement,train_violation_rate,test_sign_agreement,test_violation_rate\n";
  out.precision(10);
  for (const auto& r : log) {
    out << r.epoch << "," << r.loss << "," << r.train.sign_agreement << "," << r.train.violation_rate
        << "," << r.test.sign_agreement << "," << r.test.violation_rate << "\n";
  }
}

namespace {

std::vector<TensorInfo> barrier_tensors(const BarrierModel& m) {
  std::vector<TensorInfo> t;
  t.push_back({"input.shift", {m.widths().front()}, false});
  t.push_back({"input.scale", {m.widths().front()}, false});
  for (int l = 0; l < m.num_layers(); ++l) {
    t.push_back({"layer" + std::to_string(l) + ".weight", {m.widths()[l + 1], m.widths()[l]}, false});
    t.push_back({"layer" + std::to_string(l) + ".bias", {m.widths()[l + 1]}, false});
  }
  return t;
}

}  // namespace

void save_bcbf(const BarrierModel& model, const std::filesystem::path& path) {
  const auto& c = model.config();
  nlohmann::json cfg = {{"hidden", c.hidden}, {"d_y", c.d_y}, {"alpha", c.alpha}, {"C", c.C},
                        {"activation", "tanh"}};
  // Weights are stored column-major (Eigen default), matching the in-memory layout.
  std::vector<double> payload(model.input_shift().data(), model.input_shift().data() + model.input_shift().size());
  payload.insert(payload.end(), model.input_scale().data(), model.input_scale().data() + model.input_scale().size());
  payload.insert(payload.end(), model.params().begin(), model.params().end());
  write_checkpoint(path, "bcbf", cfg, barrier_tensors(model), payload);
}

BarrierModel load_bcbf(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path, "bcbf");
  BarrierConfig cfg;
  try {
    const auto& j = data.header.at("config");
    cfg.hidden = j.at("hidden").get<std::vector<int>>();
    cfg.d_y = j.at("d_y").get<int>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.C = j.at("C").get<double>();
  } catch (const nlohmann::json::exception& err) {
    throw ParseError(path.string() + ": bad barrier config: " + err.what());
  }
  BarrierModel model(cfg);
  const auto expected = barrier_tensors(model);
  if (expected.size() != data.tensors.size()) {
    throw ParseError(path.string() + ": tensor count does not match the barrier config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != data.tensors[i].name || expected[i].shape != data.tensors[i].shape) {
      throw ParseError(path.string() + ": tensor '" + data.tensors[i].name +
                       "' does not match the barrier config");
    }
  }
  const std::size_t w = static_cast<std::size_t>(model.widths().front());
  if (data.payload.size() != model.size() + 2 * w) throw ParseError(path.string() + ": payload size mismatch");
  for (double v : data.payload) {
    if (!std::isfinite(v)) throw ParseError(path.string() + ": non-finite parameter");
  }
  const VectorXd shift = Map<const VectorXd>(data.payload.data(), static_cast<Eigen::Index>(w));
  const VectorXd scale = Map<const VectorXd>(data.payload.data() + w, static_cast<Eigen::Index>(w));
  try {
    model.set_input_normalization(shift, scale);
  } catch (const std::exception& err) {
    throw ParseError(path.string() + ": " + err.what());
  }
  model.params().assign(data.payload.begin() + 2 * w, data.payload.end());
  return model;
}

}  // namespace bsf
