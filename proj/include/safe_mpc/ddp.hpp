#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "safe_mpc/barrier.hpp"
#include "safe_mpc/dynamics.hpp"
#include "safe_mpc/types.hpp"

namespace safe_mpc {

/// Embedded state and control sequences produced by a rollout.
template <class Model>
struct EmbeddedTrajectory {
  std::vector<EmbeddedState<Model>> states;        // T + 1
  std::vector<typename Model::Control> controls;   // T, clamped

  std::size_t horizon() const { return controls.size(); }
};

/// Quadratic tracking cost on the embedded state
///   sum_k e_k' Q e_k + (u_k - u_ref)' R (u_k - u_ref) + e_T' Phi e_T,
/// with e = [x - goal; beta]. The barrier weight q_beta lives on Q's last diagonal entry.
template <DynamicsModel Model>
struct QuadraticCost {
  static constexpr int n = Model::kStateDim;
  static constexpr int m = Model::kControlDim;
  static constexpr int nb = n + 1;

  Mat<nb, nb> Q = Mat<nb, nb>::Zero();
  Mat<m, m> R = Mat<m, m>::Identity();
  Mat<nb, nb> Phi = Mat<nb, nb>::Zero();
  Vec<n> goal = Vec<n>::Zero();
  Vec<m> control_ref = Vec<m>::Zero();

  static QuadraticCost from_diagonals(const Vec<n>& q, double q_beta, const Vec<m>& r,
                                      const Vec<n>& phi, const Vec<n>& goal,
                                      const Vec<m>& control_ref = Vec<m>::Zero()) {
    QuadraticCost c;
    c.Q.setZero();
    c.Q.template topLeftCorner<n, n>() = q.asDiagonal();
    c.Q(n, n) = q_beta;
    c.R = r.asDiagonal();
    c.Phi.setZero();
    c.Phi.template topLeftCorner<n, n>() = phi.asDiagonal();
    c.goal = goal;
    c.control_ref = control_ref;
    return c;
  }

  Vec<nb> error(const Vec<nb>& s) const {
    Vec<nb> e = s;
    e.template head<n>() -= goal;
    return e;
  }

  double stage(const Vec<nb>& s, const Vec<m>& u) const {
    const Vec<nb> e = error(s);
    const Vec<m> du = u - control_ref;
    return e.dot(Q * e) + du.dot(R * du);
  }

  double terminal(const Vec<nb>& s) const {
    const Vec<nb> e = error(s);
    return e.dot(Phi * e);
  }
};

template <DynamicsModel Model>
double trajectory_cost(const EmbeddedTrajectory<Model>& traj, const QuadraticCost<Model>& cost) {
  double total = 0.0;
  for (std::size_t k = 0; k < traj.controls.size(); ++k) {
    total += cost.stage(traj.states[k], traj.controls[k]);
  }
  return total + cost.terminal(traj.states.back());
}

/// Second-order expansion of the value function around the embedded state,
/// partitioned into plant and barrier blocks.
template <int n>
struct ValueExpansion {
  double V = 0.0;  // accumulated expected cost change
  Vec<n> Vx = Vec<n>::Zero();
  double Vb = 0.0;
  Mat<n, n> Vxx = Mat<n, n>::Zero();
  Vec<n> Vxb = Vec<n>::Zero();
  double Vbb = 0.0;
};

/// Jacobians of the embedded step. The plant block does not depend on beta.
template <int n, int m>
struct EmbeddedJacobians {
  Mat<n, n> Fx = Mat<n, n>::Zero();
  Mat<n, m> Fu = Mat<n, m>::Zero();
  RowVec<n> Fbx = RowVec<n>::Zero();
  RowVec<m> Fbu = RowVec<m>::Zero();
  double Fbb = 0.0;
};

/// Stage-cost derivatives in the same partition.
template <int n, int m>
struct StageDerivatives {
  Vec<n> Lx = Vec<n>::Zero();
  double Lb = 0.0;
  Vec<m> Lu = Vec<m>::Zero();
  Mat<n, n> Lxx = Mat<n, n>::Zero();
  double Lbb = 0.0;
  Vec<n> Lxb = Vec<n>::Zero();
  Mat<m, m> Luu = Mat<m, m>::Zero();
  Mat<n, m> Lxu = Mat<n, m>::Zero();
  Vec<m> Lbu = Vec<m>::Zero();
};

template <int n, int m>
struct QExpansion {
  Vec<n> Qx = Vec<n>::Zero();
  double Qb = 0.0;
  Vec<m> Qu = Vec<m>::Zero();
  Mat<n, n> Qxx = Mat<n, n>::Zero();
  double Qbb = 0.0;
  Vec<n> Qxb = Vec<n>::Zero();
  Mat<m, m> Quu = Mat<m, m>::Zero();
  Mat<n, m> Qxu = Mat<n, m>::Zero();
  Vec<m> Qbu = Vec<m>::Zero();  // d^2 Q / (d beta d u), stored as an m-vector
};

template <int n, int m>
struct LocalGains {
  Vec<m> feedforward = Vec<m>::Zero();
  Mat<m, n> state_gain = Mat<m, n>::Zero();
  Vec<m> barrier_gain = Vec<m>::Zero();
  double regularization = 0.0;
};

/// Time-varying affine policy around a reference embedded trajectory:
///   u_k = nominal_k + step * feedforward_k + K_x,k dx + K_BaS,k dbeta.
template <DynamicsModel Model>
struct FeedbackPolicy {
  static constexpr int n = Model::kStateDim;
  static constexpr int m = Model::kControlDim;

  std::vector<EmbeddedState<Model>> reference_states;
  std::vector<Vec<m>> nominal_controls;
  std::vector<Vec<m>> feedforward;
  std::vector<Mat<m, n>> state_gains;
  std::vector<Vec<m>> barrier_gains;

  std::size_t horizon() const { return nominal_controls.size(); }

  /// Policy that replays `controls` with all gains zero.
  static FeedbackPolicy open_loop(const EmbeddedTrajectory<Model>& ref) {
    FeedbackPolicy p;
    p.reference_states = ref.states;
    p.nominal_controls = ref.controls;
    const std::size_t T = ref.controls.size();
    p.feedforward.assign(T, Vec<m>::Zero());
    p.state_gains.assign(T, Mat<m, n>::Zero());
    p.barrier_gains.assign(T, Vec<m>::Zero());
    return p;
  }
};

/// Central-difference Jacobians of the embedded step, step 1e-6 * max(1, |v|).
template <DynamicsModel Model>
EmbeddedJacobians<Model::kStateDim, Model::kControlDim> embedded_jacobians(
    const SafetyEmbeddedModel<Model>& sys, const EmbeddedState<Model>& s,
    const typename Model::Control& u) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  constexpr int nb = n + 1;
  EmbeddedJacobians<n, m> J;
  auto step_size = [](double v) { return 1e-6 * std::max(1.0, std::abs(v)); };

  for (int j = 0; j < nb; ++j) {
    const double h = step_size(s[j]);
    EmbeddedState<Model> sp = s, sm = s;
    sp[j] += h;
    sm[j] -= h;
    const Vec<nb> col = (sys.step(sp, u) - sys.step(sm, u)) / (2.0 * h);
    if (j < n) {
      J.Fx.col(j) = col.template head<n>();
      J.Fbx[j] = col[n];
    } else {
      J.Fbb = col[n];
    }
  }
  for (int j = 0; j < m; ++j) {
    const double h = step_size(u[j]);
    typename Model::Control up = u, um = u;
    up[j] += h;
    um[j] -= h;
    const Vec<nb> col = (sys.step(s, up) - sys.step(s, um)) / (2.0 * h);
    J.Fu.col(j) = col.template head<n>();
    J.Fbu[j] = col[n];
  }
  return J;
}

template <DynamicsModel Model>
StageDerivatives<Model::kStateDim, Model::kControlDim> stage_derivatives(
    const QuadraticCost<Model>& cost, const EmbeddedState<Model>& s,
    const typename Model::Control& u) {
  constexpr int n = Model::kStateDim;
  StageDerivatives<n, Model::kControlDim> L;
  const auto g = (2.0 * (cost.Q * cost.error(s))).eval();
  const auto H = (2.0 * cost.Q).eval();
  L.Lx = g.template head<n>();
  L.Lb = g[n];
  L.Lxx = H.template topLeftCorner<n, n>();
  L.Lxb = H.template block<n, 1>(0, n);
  L.Lbb = H(n, n);
  L.Lu = 2.0 * (cost.R * (u - cost.control_ref));
  L.Luu = 2.0 * cost.R;
  return L;
}

/// Barrier-partitioned Q-function expansion around one stage, given the
/// value expansion of the next stage.
template <int n, int m>
QExpansion<n, m> q_expansion(const ValueExpansion<n>& V, const EmbeddedJacobians<n, m>& F,
                             const StageDerivatives<n, m>& L) {
  QExpansion<n, m> q;
  const Vec<n> Fbx = F.Fbx.transpose();
  const Vec<m> Fbu = F.Fbu.transpose();
  q.Qx = F.Fx.transpose() * V.Vx + Fbx * V.Vb + L.Lx;
  q.Qb = V.Vb * F.Fbb + L.Lb;
  q.Qu = F.Fu.transpose() * V.Vx + Fbu * V.Vb + L.Lu;

  // Cross terms appear once per ordering (x-beta and beta-x), which keeps Qxx and Quu symmetric.
  const Vec<n> cx = F.Fx.transpose() * V.Vxb;  // F_x' V_xb
  const Vec<m> cu = F.Fu.transpose() * V.Vxb;  // F_u' V_xb
  q.Qxx = F.Fx.transpose() * V.Vxx * F.Fx + cx * F.Fbx + Fbx * cx.transpose() +
          Fbx * V.Vbb * F.Fbx + L.Lxx;
  q.Qbb = F.Fbb * V.Vbb * F.Fbb + L.Lbb;
  q.Qxb = cx * F.Fbb + Fbx * V.Vbb * F.Fbb + L.Lxb;
  q.Quu = F.Fu.transpose() * V.Vxx * F.Fu + cu * F.Fbu + Fbu * cu.transpose() +
          Fbu * V.Vbb * F.Fbu + L.Luu;
  q.Qxu = F.Fx.transpose() * V.Vxx * F.Fu + cx * F.Fbu + Fbx * cu.transpose() +
          Fbx * V.Vbb * F.Fbu + L.Lxu;
  q.Qbu = F.Fbb * cu + F.Fbb * V.Vbb * Fbu + L.Lbu;
  return q;
}

inline constexpr double kRegularizationCap = 1e6;

/// Minimizer of the local Q-model: feedforward, state gain, and barrier gain,
/// computed with Q_uu + reg I. Regularization grows tenfold until the shifted
/// Q_uu admits a Cholesky factorization.
template <int n, int m>
LocalGains<n, m> optimal_variation(const QExpansion<n, m>& q, double reg) {
  double r = std::max(reg, 0.0);
  for (;;) {
    const Mat<m, m> Quu = q.Quu + r * Mat<m, m>::Identity();
    Eigen::LLT<Mat<m, m>> llt(Quu);
    if (llt.info() == Eigen::Success && Quu.allFinite()) {
      LocalGains<n, m> g;
      g.feedforward = -llt.solve(q.Qu);
      g.state_gain = -llt.solve(q.Qxu.transpose());
      g.barrier_gain = -llt.solve(q.Qbu);
      g.regularization = r;
      return g;
    }
    r = (r == 0.0) ? 1e-6 : r * 10.0;
    if (r > kRegularizationCap || !q.Quu.allFinite()) {
      throw SolverFailure("DDP: Q_uu regularization exceeded cap");
    }
  }
}

/// Value expansion after substituting the optimal variation.
template <int n, int m>
ValueExpansion<n> riccati_update(const QExpansion<n, m>& q, const LocalGains<n, m>& g) {
  ValueExpansion<n> V;
  // With k = -Quu^-1 Qu, K = -Quu^-1 Qux, K_b = -Quu^-1 Qub these equal
  // Qx - Qxu Quu^-1 Qu, Qb - Qbu' Quu^-1 Qu, Qxx - Qxu Quu^-1 Qux, ...
  V.V = 0.5 * q.Qu.dot(g.feedforward);
  V.Vx = q.Qx + g.state_gain.transpose() * q.Qu;
  V.Vb = q.Qb + g.barrier_gain.dot(q.Qu);
  V.Vxx = q.Qxx + q.Qxu * g.state_gain;
  V.Vxx = (0.5 * (V.Vxx + V.Vxx.transpose())).eval();
  V.Vxb = q.Qxb + q.Qxu * g.barrier_gain;
  V.Vbb = q.Qbb + q.Qbu.dot(g.barrier_gain);
  return V;
}

template <DynamicsModel Model>
ValueExpansion<Model::kStateDim> terminal_expansion(const QuadraticCost<Model>& cost,
                                                    const EmbeddedState<Model>& s) {
  constexpr int n = Model::kStateDim;
  ValueExpansion<n> V;
  const auto g = (2.0 * (cost.Phi * cost.error(s))).eval();
  const auto H = (2.0 * cost.Phi).eval();
  V.Vx = g.template head<n>();
  V.Vb = g[n];
  V.Vxx = H.template topLeftCorner<n, n>();
  V.Vxb = H.template block<n, 1>(0, n);
  V.Vbb = H(n, n);
  return V;
}

template <DynamicsModel Model>
struct BackwardResult {
  FeedbackPolicy<Model> policy;
  double expected_change = 0.0;
};

/// Backward Riccati sweep around a reference trajectory.
template <DynamicsModel Model>
BackwardResult<Model> backward_pass(const EmbeddedTrajectory<Model>& ref,
                                    const QuadraticCost<Model>& cost,
                                    const SafetyEmbeddedModel<Model>& sys,
                                    double initial_reg = 1e-6) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  const std::size_t T = ref.controls.size();
  BackwardResult<Model> out;
  auto& p = out.policy;
  p.reference_states = ref.states;
  p.nominal_controls = ref.controls;
  p.feedforward.resize(T);
  p.state_gains.resize(T);
  p.barrier_gains.resize(T);

  ValueExpansion<n> V = terminal_expansion(cost, ref.states.back());
  for (std::size_t i = T; i-- > 0;) {
    const auto F = embedded_jacobians(sys, ref.states[i], ref.controls[i]);
    const auto L = stage_derivatives(cost, ref.states[i], ref.controls[i]);
    const QExpansion<n, m> q = q_expansion(V, F, L);
    const LocalGains<n, m> g = optimal_variation(q, initial_reg);
    const double accumulated = V.V;
    V = riccati_update(q, g);
    V.V += accumulated;
    p.feedforward[i] = g.feedforward;
    p.state_gains[i] = g.state_gain;
    p.barrier_gains[i] = g.barrier_gain;
  }
  out.expected_change = V.V;
  return out;
}

/// Embedded rollout of an open-loop control sequence; stored controls are clamped.
template <DynamicsModel Model>
EmbeddedTrajectory<Model> embedded_rollout(const SafetyEmbeddedModel<Model>& sys,
                                           const EmbeddedState<Model>& s0,
                                           std::span<const typename Model::Control> controls) {
  EmbeddedTrajectory<Model> traj;
  traj.states.reserve(controls.size() + 1);
  traj.controls.reserve(controls.size());
  traj.states.push_back(s0);
  for (const auto& u : controls) {
    const auto uc = clamp_controls(u, sys.model().limits());
    traj.states.push_back(sys.step(traj.states.back(), uc));
    traj.controls.push_back(uc);
  }
  return traj;
}

template <DynamicsModel Model>
struct ForwardResult {
  EmbeddedTrajectory<Model> trajectory;
  double cost = 0.0;
  bool improved = false;
  double step = 0.0;
};

inline constexpr std::array<double, 7> kLineSearchSteps = {1.0,   0.5,    0.25,    0.125,
                                                           0.0625, 0.03125, 0.015625};

/// Closed-loop rollout of `policy` with a backtracking line search on the
/// feedforward step. Returns the first step size that lowers the cost below
/// `reference_cost`, or the reference itself with `improved == false`.
template <DynamicsModel Model>
ForwardResult<Model> forward_pass(const FeedbackPolicy<Model>& policy,
                                  const EmbeddedState<Model>& s0,
                                  const SafetyEmbeddedModel<Model>& sys,
                                  const QuadraticCost<Model>& cost, double reference_cost) {
  constexpr int n = Model::kStateDim;
  const std::size_t T = policy.horizon();
  for (double alpha : kLineSearchSteps) {
    ForwardResult<Model> r;
    auto& traj = r.trajectory;
    traj.states.reserve(T + 1);
    traj.controls.reserve(T);
    traj.states.push_back(s0);
    bool finite = true;
    for (std::size_t k = 0; k < T; ++k) {
      const auto& s = traj.states.back();
      const auto& ref = policy.reference_states[k];
      const Vec<n> dx = s.template head<n>() - ref.template head<n>();
      const double db = s[n] - ref[n];
      typename Model::Control u = policy.nominal_controls[k] + alpha * policy.feedforward[k] +
                                  policy.state_gains[k] * dx + policy.barrier_gains[k] * db;
      u = clamp_controls(u, sys.model().limits());
      if (!u.allFinite()) {
        finite = false;
        break;
      }
      EmbeddedState<Model> next;
      try {
        next = sys.step(s, u);
      } catch (const InvalidStateError&) {
        finite = false;
        break;
      } catch (const UnsafeEvaluationError&) {
        finite = false;
        break;
      }
      traj.controls.push_back(u);
      traj.states.push_back(next);
    }
    if (!finite) continue;
    r.cost = trajectory_cost(traj, cost);
    if (std::isfinite(r.cost) && r.cost < reference_cost) {
      r.improved = true;
      r.step = alpha;
      return r;
    }
  }
  ForwardResult<Model> none;
  none.trajectory.states = policy.reference_states;
  none.trajectory.controls = policy.nominal_controls;
  none.cost = reference_cost;
  return none;
}

struct DdpOptions {
  int max_iters = 20;
  double relative_tolerance = 1e-6;
  double initial_regularization = 1e-6;

  bool operator==(const DdpOptions&) const = default;
};

template <DynamicsModel Model>
struct DdpSolution {
  FeedbackPolicy<Model> policy;
  EmbeddedTrajectory<Model> trajectory;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;
};

/// Iterated backward/forward passes from an initial control sequence. The
/// returned policy is linearized around the returned trajectory.
template <DynamicsModel Model>
DdpSolution<Model> solve(const EmbeddedState<Model>& s0,
                         std::span<const typename Model::Control> initial_controls,
                         const QuadraticCost<Model>& cost, const SafetyEmbeddedModel<Model>& sys,
                         const DdpOptions& opts = {}) {
  if (opts.max_iters < 1) throw std::invalid_argument("DDP solve: max_iters must be >= 1");
  if (initial_controls.empty()) throw std::invalid_argument("DDP solve: empty control sequence");
  DdpSolution<Model> sol;
  sol.trajectory = embedded_rollout(sys, s0, initial_controls);
  sol.cost = trajectory_cost(sol.trajectory, cost);
  if (!std::isfinite(sol.cost)) throw SolverFailure("DDP: initial rollout has non-finite cost");
  sol.cost_history.push_back(sol.cost);

  for (int it = 0; it < opts.max_iters; ++it) {
    const auto back = backward_pass(sol.trajectory, cost, sys, opts.initial_regularization);
    auto fwd = forward_pass(back.policy, s0, sys, cost, sol.cost);
    ++sol.iterations;
    if (!fwd.improved) {
      sol.converged = true;
      sol.policy = back.policy;
      return sol;
    }
    const double rel = (sol.cost - fwd.cost) / std::max(std::abs(sol.cost), 1e-12);
    sol.trajectory = std::move(fwd.trajectory);
    sol.cost = fwd.cost;
    sol.cost_history.push_back(sol.cost);
    if (rel < opts.relative_tolerance) {
      sol.converged = true;
      break;
    }
  }
  sol.policy = backward_pass(sol.trajectory, cost, sys, opts.initial_regularization).policy;
  return sol;
}

template <DynamicsModel Model>
DdpSolution<Model> solve(const EmbeddedState<Model>& s0,
                         const std::vector<typename Model::Control>& initial_controls,
                         const QuadraticCost<Model>& cost, const SafetyEmbeddedModel<Model>& sys,
                         const DdpOptions& opts = {}) {
  return solve(s0, std::span<const typename Model::Control>(initial_controls), cost, sys, opts);
}

}  // namespace safe_mpc
