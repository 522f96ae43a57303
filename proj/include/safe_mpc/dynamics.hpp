#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include "safe_mpc/types.hpp"

namespace safe_mpc {

struct ModelParams {
  double dt = 0.01;
  double mass = 1.0;
  double gravity = 9.81;
  // First-order body-rate time constants (multirotor only).
  double kappa_p = 0.25;
  double kappa_q = 0.25;
  double kappa_r = 0.7;
  double vehicle_radius = 0.2;

  bool operator==(const ModelParams&) const = default;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("model.dt must be positive");
    if (!(mass > 0.0)) throw ConfigError("model.mass must be positive");
    if (!(kappa_p > 0.0 && kappa_q > 0.0 && kappa_r > 0.0)) {
      throw ConfigError("model time constants must be positive");
    }
    if (!(vehicle_radius >= 0.0)) throw ConfigError("model.vehicle_radius must be non-negative");
  }
};

template <int M>
struct ControlLimits {
  Vec<M> lower;
  Vec<M> upper;

  void validate() const {
    if (!(lower.array() <= upper.array()).all()) {
      throw ConfigError("control limits: lower must not exceed upper");
    }
  }
};

template <int M>
Vec<M> clamp_controls(const Vec<M>& u, const ControlLimits<M>& lim) {
  return u.cwiseMax(lim.lower).cwiseMin(lim.upper);
}

/// Explicit-Euler unicycle step. State (x, y, theta), control (v, omega).
/// The control is applied as given; callers clamp beforehand.
inline Vec<3> dubins_step(const Vec<3>& s, const Vec<2>& u, const ModelParams& p) {
  if (!s.allFinite() || !u.allFinite()) {
    throw InvalidStateError("dubins_step: non-finite state or control");
  }
  const double v = u[0];
  const double omega = u[1];
  Vec<3> next;
  next[0] = s[0] + p.dt * v * std::cos(s[2]);
  next[1] = s[1] + p.dt * v * std::sin(s[2]);
  next[2] = s[2] + p.dt * omega;
  return next;
}

// Multirotor state layout.
namespace quad {
inline constexpr int kX = 0, kY = 1, kZ = 2;
inline constexpr int kVx = 3, kVy = 4, kVz = 5;
inline constexpr int kQw = 6, kQx = 7, kQy = 8, kQz = 9;
inline constexpr int kP = 10, kQ = 11, kR = 12;
// Control layout: desired body rates then collective thrust.
inline constexpr int kPDes = 0, kQDes = 1, kRDes = 2, kThrust = 3;
}  // namespace quad

/// Explicit-Euler step of the rate-commanded multirotor. Thrust acts along the
/// body z axis, body rates follow their commands through a first-order lag, and
/// the quaternion is renormalized after the step.
inline Vec<13> multirotor_step(const Vec<13>& s, const Vec<4>& u, const ModelParams& p) {
  using namespace quad;
  if (!s.allFinite() || !u.allFinite()) {
    throw InvalidStateError("multirotor_step: non-finite state or control");
  }
  const double qw = s[kQw], qx = s[kQx], qy = s[kQy], qz = s[kQz];
  if (qw * qw + qx * qx + qy * qy + qz * qz == 0.0) {
    throw InvalidStateError("multirotor_step: zero-norm quaternion");
  }
  const double wp = s[kP], wq = s[kQ], wr = s[kR];
  const double thrust = u[kThrust];
  const double dt = p.dt;

  Vec<13> next;
  next[kX] = s[kX] + dt * s[kVx];
  next[kY] = s[kY] + dt * s[kVy];
  next[kZ] = s[kZ] + dt * s[kVz];

  // Third column of R(q) scaled by thrust / mass.
  const double a = thrust / p.mass;
  next[kVx] = s[kVx] + dt * (a * 2.0 * (qx * qz + qw * qy));
  next[kVy] = s[kVy] + dt * (a * 2.0 * (qy * qz - qw * qx));
  next[kVz] = s[kVz] + dt * (a * (1.0 - 2.0 * (qx * qx + qy * qy)) - p.gravity);

  next[kQw] = qw + dt * 0.5 * (-qx * wp - qy * wq - qz * wr);
  next[kQx] = qx + dt * 0.5 * (qw * wp - qz * wq + qy * wr);
  next[kQy] = qy + dt * 0.5 * (qz * wp + qw * wq - qx * wr);
  next[kQz] = qz + dt * 0.5 * (-qy * wp + qx * wq + qw * wr);
  const double norm = next.segment<4>(kQw).norm();
  if (!(norm > 0.0)) throw InvalidStateError("multirotor_step: quaternion collapsed");
  next.segment<4>(kQw) /= norm;

  next[kP] = wp + dt * (u[kPDes] - wp) / p.kappa_p;
  next[kQ] = wq + dt * (u[kQDes] - wq) / p.kappa_q;
  next[kR] = wr + dt * (u[kRDes] - wr) / p.kappa_r;
  return next;
}

/// Planar unicycle model with clamped inputs.
class DubinsModel {
 public:
  static constexpr int kStateDim = 3;
  static constexpr int kControlDim = 2;
  static constexpr int kPositionDim = 2;
  using State = Vec<kStateDim>;
  using Control = Vec<kControlDim>;
  using Position = Vec<kPositionDim>;

  static constexpr const char* kName = "dubins";

  static ControlLimits<2> default_limits() {
    return {Vec<2>(-0.1, -0.1), Vec<2>(10.0, 10.0)};
  }

  DubinsModel() : DubinsModel(ModelParams{}, default_limits()) {}
  DubinsModel(ModelParams params, ControlLimits<2> limits)
      : params_(params), limits_(std::move(limits)) {
    params_.validate();
    limits_.validate();
  }

  State step(const State& s, const Control& u) const {
    if (!u.allFinite()) throw InvalidStateError("dubins: non-finite control");
    return dubins_step(s, clamp_controls(u, limits_), params_);
  }

  static Position position(const State& s) { return s.head<2>(); }

  /// Hover-equivalent control: standing still.
  Control neutral_control() const { return Control::Zero(); }

  const ModelParams& params() const { return params_; }
  const ControlLimits<2>& limits() const { return limits_; }

 private:
  ModelParams params_;
  ControlLimits<2> limits_;
};

/// Rate-commanded multirotor with clamped inputs.
class MultirotorModel {
 public:
  static constexpr int kStateDim = 13;
  static constexpr int kControlDim = 4;
  static constexpr int kPositionDim = 3;
  using State = Vec<kStateDim>;
  using Control = Vec<kControlDim>;
  using Position = Vec<kPositionDim>;

  static constexpr const char* kName = "multirotor";

  static ControlLimits<4> default_limits() {
    return {Vec<4>(-10.0, -10.0, -10.0, 0.0), Vec<4>(10.0, 10.0, 10.0, 45.0)};
  }

  MultirotorModel() : MultirotorModel(ModelParams{}, default_limits()) {}
  MultirotorModel(ModelParams params, ControlLimits<4> limits)
      : params_(params), limits_(std::move(limits)) {
    params_.validate();
    limits_.validate();
  }

  State step(const State& s, const Control& u) const {
    if (!u.allFinite()) throw InvalidStateError("multirotor: non-finite control");
    return multirotor_step(s, clamp_controls(u, limits_), params_);
  }

  static Position position(const State& s) { return s.head<3>(); }

  /// Level hover at the given position.
  static State hover_state(const Position& p) {
    State s = State::Zero();
    s.head<3>() = p;
    s[quad::kQw] = 1.0;
    return s;
  }

  Control neutral_control() const {
    Control u = Control::Zero();
    u[quad::kThrust] = params_.mass * params_.gravity;
    return u;
  }

  const ModelParams& params() const { return params_; }
  const ControlLimits<4>& limits() const { return limits_; }

 private:
  ModelParams params_;
  ControlLimits<4> limits_;
};

template <class Model>
concept DynamicsModel = requires(const Model& m, const typename Model::State& s,
                                 const typename Model::Control& u) {
  { m.step(s, u) } -> std::same_as<typename Model::State>;
  { Model::position(s) } -> std::convertible_to<typename Model::Position>;
  { m.params() } -> std::convertible_to<const ModelParams&>;
  { m.neutral_control() } -> std::convertible_to<typename Model::Control>;
};

template <class Model>
struct Trajectory {
  std::vector<typename Model::State> states;      // T + 1
  std::vector<typename Model::Control> controls;  // T, as applied (clamped)

  std::size_t horizon() const { return controls.size(); }
};

/// Steps `model` through `controls` from `s0`, clamping each control.
template <DynamicsModel Model>
Trajectory<Model> rollout(const typename Model::State& s0,
                          std::span<const typename Model::Control> controls, const Model& model) {
  if (controls.empty()) throw std::invalid_argument("rollout: empty control sequence");
  Trajectory<Model> traj;
  traj.states.reserve(controls.size() + 1);
  traj.controls.reserve(controls.size());
  traj.states.push_back(s0);
  for (std::size_t k = 0; k < controls.size(); ++k) {
    try {
      traj.states.push_back(model.step(traj.states.back(), controls[k]));
    } catch (const InvalidStateError& e) {
      throw InvalidStateError(std::string(e.what()) + " (timestep " + std::to_string(k) + ")");
    }
    traj.controls.push_back(clamp_controls(controls[k], model.limits()));
  }
  return traj;
}

template <DynamicsModel Model>
Trajectory<Model> rollout(const typename Model::State& s0,
                          const std::vector<typename Model::Control>& controls,
                          const Model& model) {
  return rollout(s0, std::span<const typename Model::Control>(controls), model);
}

}  // namespace safe_mpc
