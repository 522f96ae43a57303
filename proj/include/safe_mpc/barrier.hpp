#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "safe_mpc/dynamics.hpp"
#include "safe_mpc/types.hpp"

namespace safe_mpc {

/// Ellipsoidal keep-out region with margin
///   h(p) = sum_i ((p_i - c_i) / s_i)^2 - r^2 - r_v^2.
/// Unit axis scales give a sphere (circle in 2-D).
template <int D>
struct SafetyConstraint {
  Vec<D> center = Vec<D>::Zero();
  double radius = 1.0;
  double vehicle_radius = 0.0;
  Vec<D> axis_scales = Vec<D>::Ones();

  void validate() const {
    if (!(radius > 0.0)) throw ConfigError("obstacle radius must be positive");
    if (!(vehicle_radius >= 0.0)) throw ConfigError("vehicle radius must be non-negative");
    if (!(axis_scales.array() > 0.0).all()) throw ConfigError("axis scales must be positive");
  }

  double margin(const Vec<D>& p) const {
    return ((p - center).array() / axis_scales.array()).square().sum() - radius * radius -
           vehicle_radius * vehicle_radius;
  }
};

template <int D>
struct ObstacleField {
  std::vector<SafetyConstraint<D>> constraints;
  // Optional arena box; leaving it ends an episode.
  std::optional<Vec<D>> lower;
  std::optional<Vec<D>> upper;

  bool inside_bounds(const Vec<D>& p) const {
    if (lower && !(p.array() >= lower->array()).all()) return false;
    if (upper && !(p.array() <= upper->array()).all()) return false;
    return true;
  }
};

enum class BarrierKind { kInverse, kRelaxedInverse };

struct BarrierConfig {
  BarrierKind kind = BarrierKind::kInverse;
  /// Pole of the barrier-state tracking error, |gamma| <= 1.
  double gamma = -0.5;
  /// Knot below which the relaxed barrier switches to its affine extension.
  double delta = 0.05;

  bool operator==(const BarrierConfig&) const = default;

  void validate() const {
    if (!(std::abs(gamma) <= 1.0)) throw ConfigError("barrier.gamma must satisfy |gamma| <= 1");
    if (!(delta > 0.0)) throw ConfigError("barrier.delta must be positive");
  }
};

/// Per-constraint safety margins at a position.
template <int D>
std::vector<double> eval_h(const ObstacleField<D>& field, const Vec<D>& p) {
  std::vector<double> h;
  h.reserve(field.constraints.size());
  for (const auto& c : field.constraints) h.push_back(c.margin(p));
  return h;
}

template <int D>
double min_margin(const ObstacleField<D>& field, const Vec<D>& p) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& c : field.constraints) m = std::min(m, c.margin(p));
  return m;
}

/// Barrier of a single margin. Inverse: 1/h, undefined for h <= 0. Relaxed:
/// 1/h for h >= delta, and the tangent line (2 delta - h) / delta^2 below it.
inline double barrier_value(const BarrierConfig& cfg, double h) {
  if (cfg.kind == BarrierKind::kRelaxedInverse && h < cfg.delta) {
    return (2.0 * cfg.delta - h) / (cfg.delta * cfg.delta);
  }
  if (!(h > 0.0)) throw UnsafeEvaluationError("inverse barrier evaluated outside the safe set");
  return 1.0 / h;
}

/// Aggregated barrier: sum of the per-constraint barriers.
inline double eval_barrier(const BarrierConfig& cfg, std::span<const double> h_values) {
  double beta = 0.0;
  for (double h : h_values) beta += barrier_value(cfg, h);
  return beta;
}

inline double eval_barrier(const BarrierConfig& cfg, const std::vector<double>& h_values) {
  return eval_barrier(cfg, std::span<const double>(h_values));
}

/// Aggregated barrier at a position, or nullopt when the inverse barrier is
/// undefined there (some margin <= 0). Never throws.
template <int D>
std::optional<double> try_barrier_at(const BarrierConfig& cfg, const ObstacleField<D>& field,
                                     const Vec<D>& p) {
  double beta = 0.0;
  for (const auto& c : field.constraints) {
    const double h = c.margin(p);
    if (cfg.kind == BarrierKind::kRelaxedInverse && h < cfg.delta) {
      beta += (2.0 * cfg.delta - h) / (cfg.delta * cfg.delta);
    } else if (h > 0.0) {
      beta += 1.0 / h;
    } else {
      return std::nullopt;
    }
  }
  return beta;
}

template <int D>
double barrier_at(const BarrierConfig& cfg, const ObstacleField<D>& field, const Vec<D>& p) {
  if (auto b = try_barrier_at(cfg, field, p)) return *b;
  throw UnsafeEvaluationError("inverse barrier evaluated outside the safe set");
}

/// Discrete barrier-state update
///   beta' = B(h(p_next)) - gamma * (beta - B(h(p))).
template <int D>
double dbas_step(const BarrierConfig& cfg, const ObstacleField<D>& field, const Vec<D>& p_next,
                 const Vec<D>& p, double beta) {
  return barrier_at(cfg, field, p_next) - cfg.gamma * (beta - barrier_at(cfg, field, p));
}

template <class Model>
using EmbeddedState = Vec<Model::kStateDim + 1>;

/// Plant model augmented with the aggregated barrier state, stored last.
template <DynamicsModel Model>
class SafetyEmbeddedModel {
 public:
  static constexpr int kPlantDim = Model::kStateDim;
  static constexpr int kStateDim = Model::kStateDim + 1;
  static constexpr int kControlDim = Model::kControlDim;
  static constexpr int kPositionDim = Model::kPositionDim;
  static constexpr int kBarrierIndex = Model::kStateDim;
  using PlantState = typename Model::State;
  using State = EmbeddedState<Model>;
  using Control = typename Model::Control;
  using Field = ObstacleField<Model::kPositionDim>;

  SafetyEmbeddedModel(Model model, Field field, BarrierConfig barrier)
      : model_(std::move(model)), field_(std::move(field)), barrier_(barrier) {
    barrier_.validate();
    for (const auto& c : field_.constraints) c.validate();
  }

  /// Embeds a plant state with beta = B(h(x)).
  State embed(const PlantState& x) const {
    State s;
    s.template head<kPlantDim>() = x;
    s[kBarrierIndex] = barrier_at(barrier_, field_, Model::position(x));
    return s;
  }

  static PlantState plant(const State& s) { return s.template head<kPlantDim>(); }
  static double beta(const State& s) { return s[kBarrierIndex]; }

  /// Plant step followed by the barrier-state step.
  State step(const State& s, const Control& u) const {
    const PlantState x = plant(s);
    const PlantState x_next = model_.step(x, u);
    State out;
    out.template head<kPlantDim>() = x_next;
    out[kBarrierIndex] = dbas_step(barrier_, field_, Model::position(x_next), Model::position(x),
                                   s[kBarrierIndex]);
    return out;
  }

  /// Copy of this model with the barrier kind replaced.
  SafetyEmbeddedModel with_barrier_kind(BarrierKind kind) const {
    BarrierConfig b = barrier_;
    b.kind = kind;
    return SafetyEmbeddedModel(model_, field_, b);
  }

  bool is_safe(const PlantState& x) const {
    return min_margin(field_, Model::position(x)) > 0.0;
  }

  const Model& model() const { return model_; }
  const Field& field() const { return field_; }
  const BarrierConfig& barrier() const { return barrier_; }

 private:
  Model model_;
  Field field_;
  BarrierConfig barrier_;
};

template <DynamicsModel Model>
SafetyEmbeddedModel(Model, ObstacleField<Model::kPositionDim>, BarrierConfig)
    -> SafetyEmbeddedModel<Model>;

template <DynamicsModel Model>
EmbeddedState<Model> embedded_step(const EmbeddedState<Model>& s, const typename Model::Control& u,
                                   const Model& model, const BarrierConfig& cfg,
                                   const ObstacleField<Model::kPositionDim>& field) {
  return SafetyEmbeddedModel<Model>(model, field, cfg).step(s, u);
}

struct SafetyCheck {
  bool safe = true;
  std::optional<std::size_t> first_violation;
};

/// Safe iff every state of the trajectory has all margins strictly positive.
template <DynamicsModel Model>
SafetyCheck is_safe_trajectory(const Trajectory<Model>& traj,
                               const ObstacleField<Model::kPositionDim>& field) {
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    if (!(min_margin(field, Model::position(traj.states[k])) > 0.0)) return {false, k};
  }
  return {};
}

/// Same check on a sequence of positions.
template <int D>
SafetyCheck is_safe_path(const std::vector<Vec<D>>& path, const ObstacleField<D>& field) {
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (!(min_margin(field, path[k]) > 0.0)) return {false, k};
  }
  return {};
}

}  // namespace safe_mpc
