#pragma once

/// @file mpc.hpp
/// @brief Receding-horizon coordinated ramp metering on a discovered model.
///
/// The plan u(k..k+N-1) is optimized by single shooting: the model is rolled
/// forward with explicit Euler steps, the cost and its gradient (by the
/// adjoint recursion through the polynomial Jacobians) are evaluated, and a
/// projected gradient step with Armijo backtracking keeps every rate inside
/// [u_min, u_max]. Occupancy bounds enter as a quadratic penalty.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "controller.hpp"
#include "metering.hpp"
#include "plant.hpp"
#include "sysid.hpp"

namespace rampnet {

enum class StepRule { backtracking, barzilai_borwein };

struct MpcSolverOptions {
  int max_iters = 200;
  StepRule step_rule = StepRule::barzilai_borwein;
  double state_penalty_weight = 1e3;  ///< per %^2 of occupancy-bound violation
  double tolerance = 1e-6;            ///< on the projected gradient, relative to 1 + J
  double armijo = 1e-4;
};

struct MpcConfig {
  int horizon = 4;
  Eigen::VectorXd q;  ///< diagonal of Q (n)
  Eigen::VectorXd p;  ///< diagonal of P (n)
  Eigen::VectorXd r;  ///< diagonal of R (m)
  double desired_occupancy_pct = 15.0;
  double x_min_pct = 0.0;
  double x_max_pct = 80.0;
  double u_min_vph = kMinRateVph;
  double u_max_vph = kMaxRateVph;
  double model_step = 1.0;  ///< Euler step h, in control steps
  MpcSolverOptions solver;

  /// Q = q I, P = p I, R = r I.
  static MpcConfig uniform(std::size_t n, std::size_t m, double q = 1.0, double p = 1.0, double r = 0.0) {
    MpcConfig c;
    c.q = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), q);
    c.p = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), p);
    c.r = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), r);
    return c;
  }

  void validate(std::size_t n, std::size_t m) const {
    if (horizon < 1) throw ContractViolation("MPC horizon must be >= 1");
    if (!(x_min_pct < x_max_pct)) throw ContractViolation("x_min must be below x_max");
    if (!(u_min_vph < u_max_vph)) throw ContractViolation("u_min must be below u_max");
    if (q.size() != static_cast<Eigen::Index>(n) || p.size() != static_cast<Eigen::Index>(n) ||
        r.size() != static_cast<Eigen::Index>(m))
      throw ContractViolation("MPC weight dimensions do not match the model");
    if ((q.array() < 0).any() || (p.array() < 0).any() || (r.array() < 0).any())
      throw ContractViolation("MPC weights must be non-negative");
  }
};

struct MpcSolution {
  Eigen::MatrixXd u_plan;            ///< N x m
  Eigen::MatrixXd predicted_states;  ///< (N+1) x n, row 0 is the measured state
  double objective = 0.0;            ///< tracking cost J_k
  double penalized_objective = 0.0;  ///< J_k plus the occupancy-bound penalty
  int iterations = 0;
  bool converged = false;
};

/// Raised when a model rollout leaves the finite range.
class NonFiniteState : public std::runtime_error {
 public:
  NonFiniteState(int step) : std::runtime_error("model rollout produced a non-finite state at step " + std::to_string(step)), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Iterated Euler prediction; row 0 is x0, row l+1 = row l + h f(row l, u_plan row l).
inline Eigen::MatrixXd rollout(const ModelEvaluator& eval, const Eigen::VectorXd& x0, const Eigen::MatrixXd& u_plan,
                               double h = 1.0) {
  if (x0.size() != static_cast<Eigen::Index>(eval.state_dim()) || u_plan.cols() != static_cast<Eigen::Index>(eval.input_dim()))
    throw std::invalid_argument("rollout dimensions do not match the model");
  Eigen::MatrixXd states(u_plan.rows() + 1, x0.size());
  states.row(0) = x0.transpose();
  for (Eigen::Index l = 0; l < u_plan.rows(); ++l) {
    const Eigen::VectorXd x = states.row(l).transpose();
    states.row(l + 1) = (x + h * eval.f(x, u_plan.row(l).transpose())).transpose();
    if (!states.row(l + 1).allFinite()) throw NonFiniteState(static_cast<int>(l + 1));
  }
  return states;
}

inline Eigen::MatrixXd rollout(const SparseModel& model, const Eigen::VectorXd& x0, const Eigen::MatrixXd& u_plan, double h = 1.0) {
  return rollout(ModelEvaluator(model), x0, u_plan, h);
}

/// J_k = sum_{l<N} (dx_l' Q dx_l + du_l' R du_l) + dx_N' P dx_N with
/// dx = x - o_hat and du_l = u_l - u_{l-1} (u_{-1} = u_prev).
inline double objective(const Eigen::MatrixXd& states, const Eigen::MatrixXd& u_plan, const Eigen::VectorXd& u_prev,
                        const MpcConfig& cfg) {
  const Eigen::Index N = u_plan.rows();
  double J = 0.0;
  for (Eigen::Index l = 0; l < N; ++l) {
    const Eigen::ArrayXd dx = states.row(l).transpose().array() - cfg.desired_occupancy_pct;
    const Eigen::ArrayXd du = (u_plan.row(l).transpose() - (l == 0 ? u_prev : Eigen::VectorXd(u_plan.row(l - 1).transpose()))).array();
    J += (cfg.q.array() * dx.square()).sum() + (cfg.r.array() * du.square()).sum();
  }
  const Eigen::ArrayXd dxN = states.row(N).transpose().array() - cfg.desired_occupancy_pct;
  return J + (cfg.p.array() * dxN.square()).sum();
}

/// Quadratic penalty on predicted occupancies outside [x_min, x_max], steps 1..N.
inline double state_penalty(const Eigen::MatrixXd& states, const MpcConfig& cfg) {
  double s = 0.0;
  for (Eigen::Index l = 1; l < states.rows(); ++l)
    for (Eigen::Index i = 0; i < states.cols(); ++i) {
      const double x = states(l, i);
      const double v = std::max(0.0, x - cfg.x_max_pct) + std::max(0.0, cfg.x_min_pct - x);
      s += v * v;
    }
  return cfg.solver.state_penalty_weight * s;
}

struct CostGradient {
  double objective = 0.0;
  double penalized = 0.0;
  Eigen::MatrixXd gradient;  ///< d(penalized)/d(u_plan), N x m
  Eigen::MatrixXd states;
};

/// Penalized cost and its exact gradient with respect to the plan.
inline CostGradient cost_and_gradient(const ModelEvaluator& eval, const Eigen::VectorXd& x0, const Eigen::MatrixXd& u_plan,
                                      const Eigen::VectorXd& u_prev, const MpcConfig& cfg) {
  const Eigen::Index N = u_plan.rows();
  const Eigen::Index n = x0.size();
  const double h = cfg.model_step;
  const double w = cfg.solver.state_penalty_weight;

  CostGradient out;
  out.states.resize(N + 1, n);
  out.states.row(0) = x0.transpose();
  std::vector<ModelLinearization> lin(static_cast<std::size_t>(N));
  for (Eigen::Index l = 0; l < N; ++l) {
    const Eigen::VectorXd x = out.states.row(l).transpose();
    lin[static_cast<std::size_t>(l)] = eval.linearize(x, u_plan.row(l).transpose());
    out.states.row(l + 1) = (x + h * lin[static_cast<std::size_t>(l)].f).transpose();
    if (!out.states.row(l + 1).allFinite()) throw NonFiniteState(static_cast<int>(l + 1));
  }
  out.objective = objective(out.states, u_plan, u_prev, cfg);
  out.penalized = out.objective + state_penalty(out.states, cfg);

  auto penalty_grad = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i)
      g[i] = 2.0 * w * (std::max(0.0, x[i] - cfg.x_max_pct) - std::max(0.0, cfg.x_min_pct - x[i]));
    return g;
  };
  auto dx = [&](Eigen::Index l) { return Eigen::VectorXd(out.states.row(l).transpose().array() - cfg.desired_occupancy_pct); };

  out.gradient.resize(N, u_plan.cols());
  Eigen::VectorXd adj = 2.0 * cfg.p.cwiseProduct(dx(N)) + penalty_grad(out.states.row(N).transpose());
  for (Eigen::Index l = N - 1; l >= 0; --l) {
    const auto& L = lin[static_cast<std::size_t>(l)];
    Eigen::VectorXd g = h * L.B.transpose() * adj;
    const Eigen::VectorXd before = l == 0 ? u_prev : Eigen::VectorXd(u_plan.row(l - 1).transpose());
    g += 2.0 * cfg.r.cwiseProduct(u_plan.row(l).transpose() - before);
    if (l + 1 < N) g -= 2.0 * cfg.r.cwiseProduct(u_plan.row(l + 1).transpose() - u_plan.row(l).transpose());
    out.gradient.row(l) = g.transpose();
    if (l == 0) break;
    const Eigen::VectorXd x = out.states.row(l).transpose();
    adj = 2.0 * cfg.q.cwiseProduct(dx(l)) + penalty_grad(x) + adj + h * L.A.transpose() * adj;
  }
  return out;
}

namespace detail {

inline Eigen::MatrixXd project(Eigen::MatrixXd u, const MpcConfig& cfg) {
  return u.cwiseMax(cfg.u_min_vph).cwiseMin(cfg.u_max_vph);
}

/// Warm start: drop the first row, repeat the last.
inline Eigen::MatrixXd shifted(const Eigen::MatrixXd& plan, Eigen::Index N) {
  Eigen::MatrixXd out(N, plan.cols());
  for (Eigen::Index l = 0; l < N; ++l) out.row(l) = plan.row(std::min<Eigen::Index>(l + 1, plan.rows() - 1));
  return out;
}

}  // namespace detail

/// Minimizes the penalized J_k over the plan. Never throws for lack of
/// convergence: the best iterate is returned with converged = false.
/// Throws NonFiniteState only if the initial plan already diverges.
inline MpcSolution solve(const ModelEvaluator& eval, const Eigen::VectorXd& x0, const Eigen::VectorXd& u_prev, const MpcConfig& cfg,
                         const std::optional<Eigen::MatrixXd>& initial_plan = std::nullopt) {
  const auto n = static_cast<std::size_t>(x0.size());
  const auto m = static_cast<std::size_t>(u_prev.size());
  if (n != eval.state_dim() || m != eval.input_dim()) throw std::invalid_argument("MPC dimensions do not match the model");
  if (!x0.allFinite()) throw ContractViolation("measured state is not finite");
  cfg.validate(n, m);
  const Eigen::Index N = cfg.horizon;
  const double span = cfg.u_max_vph - cfg.u_min_vph;
  const auto& opt = cfg.solver;

  Eigen::MatrixXd u(N, static_cast<Eigen::Index>(m));
  if (initial_plan && initial_plan->rows() == N && initial_plan->cols() == static_cast<Eigen::Index>(m))
    u = *initial_plan;
  else
    for (Eigen::Index l = 0; l < N; ++l) u.row(l) = u_prev.transpose();
  u = detail::project(u, cfg);

  CostGradient cur = cost_and_gradient(eval, x0, u, u_prev, cfg);
  MpcSolution best{u, cur.states, cur.objective, cur.penalized, 0, false};

  // Work in s = u / span so one unit of step moves a rate across its range.
  auto gs = [&](const CostGradient& c) { return Eigen::MatrixXd(c.gradient * span); };
  Eigen::MatrixXd g = gs(cur);
  double t = 0.25 / std::max(g.cwiseAbs().maxCoeff(), 1e-12);
  Eigen::MatrixXd prev_u, prev_g;

  int it = 0;
  for (; it < opt.max_iters; ++it) {
    const Eigen::MatrixXd pg = (detail::project(u - g * span, cfg) - u) / span;
    if (pg.cwiseAbs().maxCoeff() <= opt.tolerance * (1.0 + std::abs(cur.penalized))) {
      best.converged = true;
      break;
    }
    if (opt.step_rule == StepRule::barzilai_borwein && prev_u.size() > 0) {
      const Eigen::MatrixXd ds = (u - prev_u) / span;
      const Eigen::MatrixXd dg = g - prev_g;
      const double sy = (ds.array() * dg.array()).sum();
      if (sy > 1e-300) t = std::clamp((ds.array() * ds.array()).sum() / sy, 1e-12, 1e12);
    }
    bool accepted = false;
    CostGradient trial;
    Eigen::MatrixXd u_new;
    for (int bt = 0; bt < 60; ++bt) {
      u_new = detail::project(u - t * g * span, cfg);
      const double move2 = ((u_new - u) / span).squaredNorm();
      if (move2 == 0.0) break;
      try {
        trial = cost_and_gradient(eval, x0, u_new, u_prev, cfg);
        if (trial.penalized <= cur.penalized - opt.armijo / t * move2) {
          accepted = true;
          break;
        }
      } catch (const NonFiniteState&) {
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No descent direction left at working precision.
      best.converged = pg.cwiseAbs().maxCoeff() <= 1e-3 * (1.0 + std::abs(cur.penalized));
      break;
    }
    prev_u = u;
    prev_g = g;
    u = u_new;
    cur = std::move(trial);
    g = gs(cur);
    if (opt.step_rule == StepRule::backtracking) t *= 2.0;
    if (cur.penalized < best.penalized_objective) best = {u, cur.states, cur.objective, cur.penalized, 0, false};
  }
  best.iterations = it;
  return best;
}

inline MpcSolution solve(const SparseModel& model, const Eigen::VectorXd& x0, const Eigen::VectorXd& u_prev, const MpcConfig& cfg,
                         const std::optional<Eigen::MatrixXd>& initial_plan = std::nullopt) {
  return solve(ModelEvaluator(model), x0, u_prev, cfg, initial_plan);
}

// ---------------------------------------------------------------------------
// Receding horizon

struct MpcStepLog {
  int iterations = 0;
  double objective = 0.0;
  bool converged = false;
  bool fallback = false;
  double solve_ms = 0.0;
};

/// Solves once per control step, applies the first planned action and keeps
/// the plan as the next warm start.
class MpcController final : public RampController {
 public:
  MpcController(SparseModel model, MpcConfig cfg, std::string name = "sindyc-mpc")
      : model_(std::move(model)), eval_(model_), cfg_(std::move(cfg)), name_(std::move(name)) {
    cfg_.validate(model_.state_dim(), model_.input_dim());
    u_prev_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(model_.input_dim()), kInitialRateVph);
  }
  MpcController(const MpcController&) = delete;
  MpcController& operator=(const MpcController&) = delete;

  std::string name() const override { return name_; }

  std::vector<double> decide(std::span<const SensorReading> readings) override {
    Eigen::VectorXd x0(static_cast<Eigen::Index>(model_.state_dim()));
    for (Eigen::Index i = 0; i < x0.size(); ++i) x0[i] = readings[static_cast<std::size_t>(i)].occupancy_pct;
    apply(receding_step(x0));
    std::vector<double> rates(u_prev_.data(), u_prev_.data() + u_prev_.size());
    return rates;
  }

  /// One receding-horizon step on a measured state; returns the applied action.
  Eigen::VectorXd receding_step(const Eigen::VectorXd& x0) {
    MpcStepLog entry;
    const auto start = std::chrono::steady_clock::now();
    try {
      std::optional<Eigen::MatrixXd> warm;
      if (last_plan_) warm = detail::shifted(*last_plan_, cfg_.horizon);
      last_solution_ = solve(eval_, x0, u_prev_, cfg_, warm);
      entry.iterations = last_solution_->iterations;
      entry.objective = last_solution_->objective;
      entry.converged = last_solution_->converged;
      last_plan_ = last_solution_->u_plan;
      next_ = last_solution_->u_plan.row(0).transpose();
    } catch (const std::exception&) {
      entry.fallback = true;
      last_plan_.reset();
      last_solution_.reset();
      next_ = u_prev_;
    }
    entry.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log_.push_back(entry);
    return next_;
  }

  const std::vector<MpcStepLog>& log() const { return log_; }
  const std::optional<MpcSolution>& last_solution() const { return last_solution_; }
  const Eigen::VectorXd& previous_action() const { return u_prev_; }

  nlohmann::json diagnostics_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t k = 0; k < log_.size(); ++k)
      j.push_back({{"step", k},
                   {"iterations", log_[k].iterations},
                   {"objective", log_[k].objective},
                   {"converged", log_[k].converged},
                   {"fallback", log_[k].fallback},
                   {"solve_ms", log_[k].solve_ms}});
    return j;
  }

 private:
  void apply(const Eigen::VectorXd& u) { u_prev_ = u; }

  SparseModel model_;
  ModelEvaluator eval_;
  MpcConfig cfg_;
  std::string name_;
  Eigen::VectorXd u_prev_;
  Eigen::VectorXd next_;
  std::optional<Eigen::MatrixXd> last_plan_;
  std::optional<MpcSolution> last_solution_;
  std::vector<MpcStepLog> log_;
};

// ---------------------------------------------------------------------------
// Horizon sweep

struct SweepRow {
  int horizon = 0;
  double mean_flow_vph = 0.0;
  double mean_abs_deviation_pct = 0.0;
  double mean_solve_ms = 0.0;
  double max_solve_ms = 0.0;
};

inline std::vector<SweepRow> horizon_sweep(const SparseModel& model, const NetworkConfig& net, MpcConfig cfg,
                                           std::span<const int> horizons, std::span<const std::uint64_t> seeds) {
  std::vector<SweepRow> rows;
  for (int N : horizons) {
    cfg.horizon = N;
    SweepRow row;
    row.horizon = N;
    std::size_t solves = 0;
    for (auto seed : seeds) {
      MpcController ctrl(model, cfg);
      const auto rec = run_episode(net, ctrl, seed);
      row.mean_flow_vph += rec.flow.mean();
      row.mean_abs_deviation_pct += (rec.occupancy.array() - cfg.desired_occupancy_pct).abs().mean();
      for (const auto& e : ctrl.log()) {
        row.mean_solve_ms += e.solve_ms;
        row.max_solve_ms = std::max(row.max_solve_ms, e.solve_ms);
        ++solves;
      }
    }
    const auto s = static_cast<double>(std::max<std::size_t>(1, seeds.size()));
    row.mean_flow_vph /= s;
    row.mean_abs_deviation_pct /= s;
    row.mean_solve_ms /= static_cast<double>(std::max<std::size_t>(1, solves));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rampnet
