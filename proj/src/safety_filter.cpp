#include "bsf/safety_filter.hpp"

#include <cmath>
#include <fstream>

#include "bsf/errors.hpp"

namespace bsf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

FilterConfig filter_config(const TaskSpec& spec) {
  FilterConfig cfg;
  cfg.alpha = spec.filter.alpha;
  cfg.C = spec.filter.C;
  cfg.beta = spec.filter.beta;
  cfg.control_range = spec.policy.clip;
  return cfg;
}

void validate_filter_config(const FilterConfig& cfg, const FnoConfig& operator_cfg) {
  if (!(cfg.beta > 0.0)) throw ConfigError("filter beta must be positive");
  if (!(cfg.alpha > 0.0)) throw ConfigError("filter alpha must be positive");
  if (!(cfg.C >= 0.0)) throw ConfigError("filter C must be non-negative");
  if (cfg.warmup < operator_cfg.min_len) {
    throw ConfigError("filter warmup " + std::to_string(cfg.warmup) +
                      " is shorter than the operator's minimum prefix " +
                      std::to_string(operator_cfg.min_len));
  }
}

Prediction predict_last(const Predictor& p, const MatrixXd& prefix) {
  if (!p.model) throw ConfigError("filter has no operator model");
  const int n = static_cast<int>(prefix.rows());
  FnoTape tape;
  Prediction out;
  if (p.mode == PredictorMode::Online) {
    fno_forward(*p.model, prefix, &tape);
  } else {
    if (n > p.horizon) throw ShapeError("prefix longer than the offline horizon");
    MatrixXd padded = MatrixXd::Zero(p.horizon, prefix.cols());
    padded.topRows(n) = prefix;
    fno_forward(*p.model, padded, &tape);
  }
  out.y_last = tape.output.row(n - 1).transpose();
  if (n >= 2) out.y_prev = tape.output.row(n - 2).transpose();
  out.G = fno_output_jacobian(*p.model, tape, n - 1);
  return out;
}

FilterState start_filter(const BarrierModel& bcbf, const Vec2& y0, double t0, double dt, int capacity) {
  if (!(dt > 0.0)) throw ConfigError("filter dt must be positive");
  FilterState s;
  s.dt = dt;
  s.history.resize(std::max(capacity, 1) + 1, kChannels);
  s.prev_output = y0;
  s.phi0 = bcbf_eval(bcbf, t0, y0);
  s.phi0_set = true;
  return s;
}

Vec2 nominal_rate(const Vec2& u, const Vec2& u_prev, double dt) { return (u - u_prev) / dt; }

Constraint assemble_constraint(const Predictor& pred, const BarrierModel& bcbf, const FilterConfig& cfg,
                               const FilterState& state, const Vec2& y, double t) {
  if (!state.phi0_set) throw ConfigError("filter state was not started");
  const int min_len =
      pred.model && pred.mode == PredictorMode::Online ? pred.model->config().min_len : 1;
  if (state.step + 1 < min_len) throw ShapeError("filter prefix shorter than the operator's minimum");
  MatrixXd prefix(state.step + 1, kChannels);
  prefix.topRows(state.step) = state.history.topRows(state.step);
  prefix.row(state.step) = state.prev_control.transpose();
  const Prediction p = predict_last(pred, prefix);

  if (cfg.drift == DriftAnchor::Model && p.y_prev.size() == 0) {
    throw ShapeError("model-anchored drift needs a prefix of at least two steps");
  }
  const VectorXd c = (p.y_last - (cfg.drift == DriftAnchor::Model ? p.y_prev : VectorXd(y))) / state.dt;
  const BarrierGradient g = bcbf_grad(bcbf, t, y);
  const double phi0 = cfg.clip_phi0 ? std::max(state.phi0, 0.0) : state.phi0;
  Constraint out;
  out.a = p.G.transpose() * g.d_y;
  out.b = g.d_y.dot(c) + g.d_t + cfg.alpha * g.value + cfg.C * phi0;
  out.phi = g.value;
  return out;
}

QpResult qp_project(const VectorXd& rate_nom, const VectorXd& a, double b, double eps_a) {
  if (a.size() != rate_nom.size()) throw ShapeError("constraint and rate dimensions differ");
  const double r = a.dot(rate_nom) + b;
  if (r <= 0.0) return {rate_nom, QpStatus::Inactive};
  const double n2 = a.squaredNorm();
  if (std::sqrt(n2) <= eps_a) return {rate_nom, QpStatus::Infeasible};
  return {rate_nom - (r / n2) * a, QpStatus::Projected};
}

bool beta_gate(const VectorXd& rate_safe, const VectorXd& rate_nom, double beta) {
  return (rate_safe - rate_nom).norm() <= beta;
}

const char* gate_name(GateDecision g) {
  switch (g) {
    case GateDecision::Warmup: return "warmup";
    case GateDecision::Inactive: return "inactive";
    case GateDecision::Projected: return "projected";
    case GateDecision::Rejected: return "rejected";
    case GateDecision::Infeasible: return "infeasible";
  }
  return "?";
}

namespace {

void append_history(FilterState& s, const Vec2& u) {
  if (s.step >= s.history.rows()) s.history.conservativeResize(2 * s.history.rows(), Eigen::NoChange);
  s.history.row(s.step) = u.transpose();
  s.prev_control = u;
  ++s.step;
}

}  // namespace

FilterOutput filter_step(const Predictor& pred, const BarrierModel& bcbf, const FilterConfig& cfg,
                         FilterState& state, const Vec2& y, const Vec2& u_nom, double t) {
  FilterOutput out;
  out.control = u_nom;
  out.diag.step = state.step;
  out.diag.t = t;
  if (state.step < cfg.warmup) {
    out.diag.phi = bcbf_eval(bcbf, t, y);
    out.diag.gate = GateDecision::Warmup;
  } else {
    const Constraint con = assemble_constraint(pred, bcbf, cfg, state, y, t);
    const VectorXd rate_nom = nominal_rate(u_nom, state.prev_control, state.dt);
    const QpResult qp = qp_project(rate_nom, con.a, con.b, cfg.eps_a);
    out.diag.phi = con.phi;
    out.diag.a = con.a;
    out.diag.b = con.b;
    out.diag.diff_norm = (qp.rate - rate_nom).norm();
    if (qp.status == QpStatus::Inactive) {
      out.diag.gate = GateDecision::Inactive;
    } else if (qp.status == QpStatus::Infeasible) {
      out.diag.gate = GateDecision::Infeasible;
      out.diag.infeasible = true;
    } else if (beta_gate(qp.rate, rate_nom, cfg.beta)) {
      out.diag.gate = GateDecision::Projected;
      out.control = state.prev_control + state.dt * qp.rate;
      if (cfg.clip_control) {
        out.control = out.control.cwiseMax(cfg.control_range.lo).cwiseMin(cfg.control_range.hi);
      }
    } else {
      out.diag.gate = GateDecision::Rejected;
    }
  }
  state.prev_output = y;
  append_history(state, out.control);
  return out;
}

void write_diagnostics_csv(const std::vector<StepDiagnostics>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << "step,t,phi,a0,a1,b,gate,diff_norm,infeasible\n";
  out.precision(12);
  for (const auto& r : rows) {
    out << r.step << "," << r.t << "," << r.phi << "," << r.a(0) << "," << r.a(1) << "," << r.b << ","
        << gate_name(r.gate) << "," << r.diff_norm << "," << (r.infeasible ? 1 : 0) << "\n";
  }
}

Controller make_filtered_controller(const TaskSpec& spec, const Predictor& pred, const BarrierModel& bcbf,
                                    const FilterConfig& cfg, std::uint64_t noise_seed,
                                    std::shared_ptr<std::vector<StepDiagnostics>> diag) {
  struct Shared {
    Controller nominal;
    FilterState state;
  };
  auto sh = std::make_shared<Shared>();
  sh->nominal = make_base_controller(spec.policy, noise_seed);
  const double dt = spec.dt;
  const int M = spec.M;
  return [sh, pred, &bcbf, cfg, dt, M, diag](const StepContext& ctx) {
    if (ctx.step == 0) sh->state = start_filter(bcbf, ctx.y, ctx.t, dt, M);
    const Vec2 u_nom = sh->nominal(ctx);
    FilterOutput o = filter_step(pred, bcbf, cfg, sh->state, ctx.y, u_nom, ctx.t);
    if (diag) diag->push_back(o.diag);
    return o.control;
  };
}

}  // namespace bsf
