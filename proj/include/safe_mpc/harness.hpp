#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "safe_mpc/barrier.hpp"
#include "safe_mpc/ddp.hpp"
#include "safe_mpc/dynamics.hpp"
#include "safe_mpc/executor.hpp"
#include "safe_mpc/mppi.hpp"
#include "safe_mpc/random.hpp"
#include "safe_mpc/sc_mppi.hpp"

namespace safe_mpc {

enum class ControllerKind { kDdp, kMppi, kScMppi };

inline const char* controller_name(ControllerKind k) {
  switch (k) {
    case ControllerKind::kDdp: return "ddp";
    case ControllerKind::kMppi: return "mppi";
    case ControllerKind::kScMppi: return "scmppi";
  }
  return "?";
}

inline ControllerKind parse_controller(const std::string& s) {
  if (s == "ddp") return ControllerKind::kDdp;
  if (s == "mppi") return ControllerKind::kMppi;
  if (s == "scmppi") return ControllerKind::kScMppi;
  throw ConfigError("unknown controller '" + s + "' (expected ddp, mppi or scmppi)");
}

/// Per-controller tunings. Goal vectors inside the cost blocks are replaced
/// by the episode goal.
template <DynamicsModel Model>
struct ControllerTunings {
  static constexpr int m = Model::kControlDim;
  PathCostParams<Model> mppi_cost;
  SamplerConfig<m> mppi;
  PathCostParams<Model> scmppi_cost;
  SafeSamplerConfig<Model> scmppi;
  QuadraticCost<Model> ddp_cost;
  DdpOptions ddp;
};

template <int D>
struct UniformBox {
  Vec<D> center = Vec<D>::Zero();
  Vec<D> half_width = Vec<D>::Zero();
};

template <DynamicsModel Model>
struct EpisodeConfig {
  static constexpr int D = Model::kPositionDim;
  ControllerKind controller = ControllerKind::kScMppi;
  Model model;
  ObstacleField<D> field;
  BarrierConfig barrier;
  /// Non-position components of the start and goal states; position
  /// components are drawn from the boxes below.
  typename Model::State initial_state = Model::State::Zero();
  typename Model::State goal_state = Model::State::Zero();
  UniformBox<D> start;
  UniformBox<D> goal;
  int problem_horizon = 1000;
  int planning_horizon = 50;
  double completion_radius = 0.5;
  double rmse_window = 0.5;  // seconds at the end of the episode
  ControllerTunings<Model> tuning;
  std::uint64_t seed = 0;

  void validate() const {
    if (problem_horizon < 1) throw ConfigError("episode.problem_horizon must be >= 1");
    if (planning_horizon < 1) throw ConfigError("episode.planning_horizon must be >= 1");
    if (planning_horizon > problem_horizon) {
      throw ConfigError("episode.planning_horizon must not exceed episode.problem_horizon");
    }
    if (!(completion_radius > 0.0)) throw ConfigError("episode.completion_radius must be positive");
    if (!(rmse_window >= 0.0)) throw ConfigError("episode.rmse_window must be non-negative");
    if (!(start.half_width.array() >= 0.0).all() || !(goal.half_width.array() >= 0.0).all()) {
      throw ConfigError("episode box half widths must be non-negative");
    }
    barrier.validate();
  }
};

enum class Termination { kHorizon, kCompleted, kCrashed, kLeftDomain, kControllerFailure };

inline const char* termination_name(Termination t) {
  switch (t) {
    case Termination::kHorizon: return "horizon";
    case Termination::kCompleted: return "completed";
    case Termination::kCrashed: return "crashed";
    case Termination::kLeftDomain: return "left_domain";
    case Termination::kControllerFailure: return "controller_failure";
  }
  return "?";
}

struct EpisodeStats {
  bool safety_violated = false;
  bool completed = false;
  double completion_time = std::numeric_limits<double>::quiet_NaN();
  double position_rmse = 0.0;
  double avg_velocity = 0.0;
  double max_velocity = 0.0;
  /// Mean over MPC steps of the batch safe fraction; NaN for MPC-DDP.
  double safe_sample_rate = std::numeric_limits<double>::quiet_NaN();
  double mean_compute_ms = 0.0;  // informational, not deterministic
  int steps = 0;
  Termination termination = Termination::kHorizon;
  std::string failure;
};

struct StepDiagnostics {
  int step = 0;
  double time = 0.0;
  double safe_rate = std::numeric_limits<double>::quiet_NaN();
  double min_cost = std::numeric_limits<double>::quiet_NaN();
  double mean_cost = std::numeric_limits<double>::quiet_NaN();
  double eta = std::numeric_limits<double>::quiet_NaN();
  int ddp_iterations = 0;
  bool corrected = false;
  bool fallback = false;
  bool degenerate = false;
  double mean_feedback = 0.0;
  double compute_ms = 0.0;
};

/// Sampled trajectories of one MPC step, for plotting.
template <int D>
struct SampleCloud {
  int step = 0;
  std::vector<std::vector<Vec<D>>> paths;
  std::vector<char> safe;
};

template <DynamicsModel Model>
struct EpisodeResult {
  EpisodeStats stats;
  Trajectory<Model> trajectory;      // executed plant trajectory
  std::vector<double> beta;          // barrier state along the trajectory
  std::vector<double> min_h;         // minimum margin along the trajectory
  std::vector<StepDiagnostics> diagnostics;
  std::vector<SampleCloud<Model::kPositionDim>> clouds;  // only when requested
  typename Model::State start;
  typename Model::State goal;
};

struct EpisodeOptions {
  /// Record up to this many sampled trajectories per MPC step (0 disables).
  int cloud_samples = 0;
  /// Record clouds only every this many MPC steps.
  int cloud_stride = 1;
};

/// Planar speed from consecutive positions; multirotors report their velocity states.
inline double plant_speed(const DubinsModel& model, const Vec<3>& x, const Vec<3>& prev) {
  return (x.head<2>() - prev.head<2>()).norm() / model.params().dt;
}

inline double plant_speed(const MultirotorModel&, const Vec<13>& x, const Vec<13>&) {
  return x.segment<3>(quad::kVx).norm();
}

namespace detail {

inline constexpr std::uint64_t kPlacementStream = 0xffffffffffffffffULL;

template <int D>
Vec<D> draw_in_box(const UniformBox<D>& box, CounterNormal& rng) {
  Vec<D> p;
  for (int i = 0; i < D; ++i) p[i] = box.center[i] + box.half_width[i] * (2.0 * rng.uniform() - 1.0);
  return p;
}

template <DynamicsModel Model>
ControllerTunings<Model> retarget(ControllerTunings<Model> t, const typename Model::State& goal,
                                  std::uint64_t seed) {
  t.mppi_cost.goal = goal;
  t.scmppi_cost.goal = goal;
  t.ddp_cost.goal = goal;
  t.scmppi.ddp_cost.goal = goal;
  t.mppi.seed = seed;
  t.scmppi.sampler.seed = seed;
  return t;
}

}  // namespace detail

/// Start and goal states of an episode, drawn from the configured boxes.
template <DynamicsModel Model>
std::pair<typename Model::State, typename Model::State> episode_endpoints(
    const EpisodeConfig<Model>& cfg) {
  constexpr int D = Model::kPositionDim;
  CounterNormal rng(cfg.seed, detail::kPlacementStream, 0, 0);
  typename Model::State s = cfg.initial_state, g = cfg.goal_state;
  s.template head<D>() = detail::draw_in_box(cfg.start, rng);
  g.template head<D>() = detail::draw_in_box(cfg.goal, rng);
  return {s, g};
}

/// One closed-loop receding-horizon episode. Each MPC step updates the plan,
/// applies its first control, and shifts it. The episode ends at the problem
/// horizon, on entering the completion radius, on collision, on leaving the
/// arena, or on a controller failure.
template <DynamicsModel Model>
EpisodeResult<Model> run_episode(const EpisodeConfig<Model>& cfg, Executor& exec,
                                 const EpisodeOptions& opts = {}) {
  constexpr int D = Model::kPositionDim;
  using State = typename Model::State;
  using Control = typename Model::Control;
  cfg.validate();

  EpisodeResult<Model> res;
  auto& st = res.stats;
  const auto [x_start, x_goal] = episode_endpoints(cfg);
  res.start = x_start;
  res.goal = x_goal;
  const auto tuning = detail::retarget(cfg.tuning, x_goal, cfg.seed);
  const double dt = cfg.model.params().dt;
  const Vec<D> goal_pos = Model::position(x_goal);

  const SafetyEmbeddedModel<Model> sys(cfg.model, cfg.field, cfg.barrier);
  const auto relaxed = sys.with_barrier_kind(BarrierKind::kRelaxedInverse);

  const int H = cfg.planning_horizon;
  std::vector<Control> U(H, cfg.model.neutral_control());

  auto sampler = tuning.mppi;
  sampler.horizon = H;
  auto safe_sampler = tuning.scmppi;
  safe_sampler.sampler.horizon = H;
  if (cfg.controller == ControllerKind::kMppi) sampler.validate();
  if (cfg.controller == ControllerKind::kScMppi) safe_sampler.validate();

  State x = x_start;
  res.trajectory.states.push_back(x);
  auto record_margin = [&](const State& s) {
    res.min_h.push_back(min_margin(cfg.field, Model::position(s)));
  };
  record_margin(x);
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  // NaN once the barrier is undefined.
  double beta = try_barrier_at(cfg.barrier, cfg.field, Model::position(x)).value_or(kNaN);
  res.beta.push_back(beta);

  auto inside_goal = [&](const State& s) {
    return (Model::position(s) - goal_pos).norm() <= cfg.completion_radius;
  };

  double safe_rate_sum = 0.0;
  int sampled_steps = 0;
  double compute_sum = 0.0;

  auto finish = [&](Termination t) { st.termination = t; };

  if (!(res.min_h.back() > 0.0)) {
    st.safety_violated = true;
    finish(Termination::kCrashed);
  } else if (inside_goal(x)) {
    st.completed = true;
    st.completion_time = 0.0;
    finish(Termination::kCompleted);
  } else {
    finish(Termination::kHorizon);
    for (int k = 0; k < cfg.problem_horizon; ++k) {
      StepDiagnostics diag;
      diag.step = k;
      diag.time = k * dt;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        switch (cfg.controller) {
          case ControllerKind::kDdp: {
            auto sol = solve(relaxed.embed(x), U, tuning.ddp_cost, relaxed, tuning.ddp);
            U = std::move(sol.trajectory.controls);
            diag.ddp_iterations = sol.iterations;
            diag.min_cost = diag.mean_cost = sol.cost;
            break;
          }
          case ControllerKind::kMppi: {
            auto r = mppi_step(x, std::move(U), sys, tuning.mppi_cost, sampler, exec,
                               static_cast<std::uint64_t>(k) * sampler.iterations);
            U = std::move(r.controls);
            diag.safe_rate = r.batch.safe_rate();
            diag.min_cost = r.batch.min_cost();
            diag.mean_cost = r.batch.mean_cost();
            diag.eta = r.batch.eta;
            diag.degenerate = r.degenerate;
            if (opts.cloud_samples > 0 && k % std::max(1, opts.cloud_stride) == 0) {
              SampleCloud<D> cloud;
              cloud.step = k;
              const SampledCostTerms<Model> terms(tuning.mppi_cost, sampler);
              const int n = std::min(opts.cloud_samples, sampler.samples);
              for (int i = 0; i < n; ++i) {
                std::vector<Vec<D>> path;
                const auto o = sample_rollout(sys, x, std::span<const Control>(r.sampled_around),
                                              r.batch.sample_noise(i), terms, ZeroFeedback<Model::kControlDim>{},
                                              &path);
                cloud.paths.push_back(std::move(path));
                cloud.safe.push_back(o.safe ? 1 : 0);
              }
              res.clouds.push_back(std::move(cloud));
            }
            break;
          }
          case ControllerKind::kScMppi: {
            auto r = sc_mppi_step(x, std::move(U), sys, tuning.scmppi_cost, safe_sampler, exec,
                                  static_cast<std::uint64_t>(k) * safe_sampler.sampler.iterations);
            U = std::move(r.controls);
            diag.safe_rate = r.batch.safe_rate();
            diag.min_cost = r.batch.min_cost();
            diag.mean_cost = r.batch.mean_cost();
            diag.eta = r.batch.eta;
            diag.degenerate = r.degenerate;
            diag.ddp_iterations = r.ddp_iterations;
            diag.corrected = r.corrected;
            diag.fallback = r.fallback;
            double fb = 0.0;
            for (double v : r.batch.mean_feedback) fb += v;
            diag.mean_feedback = fb / std::max<std::size_t>(1, r.batch.mean_feedback.size());
            if (opts.cloud_samples > 0 && k % std::max(1, opts.cloud_stride) == 0) {
              SampleCloud<D> cloud;
              cloud.step = k;
              const int n = std::min(opts.cloud_samples, safe_sampler.sampler.samples);
              for (int i = 0; i < n; ++i) {
                std::vector<Vec<D>> path;
                const auto o = scis_rollout(sys, x, std::span<const Control>(r.safe_controls),
                                            r.policy, r.batch.sample_noise(i), tuning.scmppi_cost,
                                            safe_sampler, &path);
                cloud.paths.push_back(std::move(path));
                cloud.safe.push_back(o.safe ? 1 : 0);
              }
              res.clouds.push_back(std::move(cloud));
            }
            break;
          }
        }
      } catch (const std::exception& e) {
        st.failure = e.what();
        finish(Termination::kControllerFailure);
        break;
      }
      diag.compute_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      compute_sum += diag.compute_ms;
      if (!std::isnan(diag.safe_rate)) {
        safe_rate_sum += diag.safe_rate;
        ++sampled_steps;
      }
      res.diagnostics.push_back(diag);

      const Control u = clamp_controls(U.front(), cfg.model.limits());
      State x_next;
      try {
        x_next = cfg.model.step(x, u);
      } catch (const InvalidStateError& e) {
        st.failure = e.what();
        finish(Termination::kControllerFailure);
        break;
      }
      res.trajectory.controls.push_back(u);
      res.trajectory.states.push_back(x_next);
      record_margin(x_next);
      const auto p_prev = Model::position(x), p_next = Model::position(x_next);
      if (!std::isnan(beta)) {
        if (auto b_next = try_barrier_at(cfg.barrier, cfg.field, p_next)) {
          const double b_here = barrier_at(cfg.barrier, cfg.field, p_prev);
          beta = *b_next - cfg.barrier.gamma * (beta - b_here);
        } else {
          beta = kNaN;
        }
      }
      res.beta.push_back(beta);
      x = x_next;
      shift_controls(U);
      st.steps = k + 1;

      if (!(res.min_h.back() > 0.0)) {
        st.safety_violated = true;
        finish(Termination::kCrashed);
        break;
      }
      if (inside_goal(x)) {
        st.completed = true;
        st.completion_time = (k + 1) * dt;
        finish(Termination::kCompleted);
        break;
      }
      if (!cfg.field.inside_bounds(p_next)) {
        finish(Termination::kLeftDomain);
        break;
      }
    }
  }

  // Metrics on the executed trajectory.
  const auto& xs = res.trajectory.states;
  const std::size_t window =
      std::min(xs.size(), static_cast<std::size_t>(std::llround(cfg.rmse_window / dt)) + 1);
  double se = 0.0;
  for (std::size_t i = xs.size() - window; i < xs.size(); ++i) {
    se += (Model::position(xs[i]) - goal_pos).squaredNorm();
  }
  st.position_rmse = std::sqrt(se / static_cast<double>(window));
  double vsum = 0.0, vmax = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double v = plant_speed(cfg.model, xs[i], xs[i - 1]);
    vsum += v;
    vmax = std::max(vmax, v);
  }
  st.avg_velocity = xs.size() > 1 ? vsum / static_cast<double>(xs.size() - 1) : 0.0;
  st.max_velocity = vmax;
  if (sampled_steps > 0) st.safe_sample_rate = safe_rate_sum / sampled_steps;
  if (!res.diagnostics.empty()) st.mean_compute_ms = compute_sum / res.diagnostics.size();
  return res;
}

/// Mean over MPC steps of the per-step safe fraction; steps without samples are skipped.
inline double safe_sample_rate(const std::vector<StepDiagnostics>& log) {
  double sum = 0.0;
  int n = 0;
  for (const auto& d : log) {
    if (std::isnan(d.safe_rate)) continue;
    sum += d.safe_rate;
    ++n;
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

struct MeanStd {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};

/// Mean and sample standard deviation (zero for a single value), summed in index order.
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.count = static_cast<int>(v.size());
  if (v.empty()) return r;
  double s = 0.0;
  for (double x : v) s += x;
  r.mean = s / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  return r;
}

struct TrialSummary {
  std::string controller;
  int episodes = 0;
  double safety_violation_pct = 0.0;
  double task_completion_pct = 0.0;
  MeanStd completion_time;   // completed episodes
  MeanStd position_rmse;     // episodes without a collision
  MeanStd avg_velocity;      // episodes without a collision
  MeanStd max_velocity;      // episodes without a collision
  MeanStd safe_sample_rate;  // sampling controllers only
  MeanStd compute_ms;        // informational
  int controller_failures = 0;
  std::vector<std::uint64_t> episode_seeds;
  std::vector<EpisodeStats> per_episode;
};

inline TrialSummary summarize(const std::vector<EpisodeStats>& eps, ControllerKind kind,
                              std::vector<std::uint64_t> seeds = {}) {
  TrialSummary s;
  s.controller = controller_name(kind);
  s.episodes = static_cast<int>(eps.size());
  std::vector<double> ct, rmse, vavg, vmax, ssr, cms;
  int violated = 0, completed = 0;
  for (const auto& e : eps) {
    if (e.safety_violated) ++violated;
    if (e.completed) {
      ++completed;
      ct.push_back(e.completion_time);
    }
    if (e.termination == Termination::kControllerFailure) ++s.controller_failures;
    if (!e.safety_violated) {
      rmse.push_back(e.position_rmse);
      vavg.push_back(e.avg_velocity);
      vmax.push_back(e.max_velocity);
    }
    if (!std::isnan(e.safe_sample_rate)) ssr.push_back(e.safe_sample_rate);
    cms.push_back(e.mean_compute_ms);
  }
  const double M = std::max<std::size_t>(1, eps.size());
  s.safety_violation_pct = 100.0 * violated / M;
  s.task_completion_pct = 100.0 * completed / M;
  s.completion_time = mean_std(ct);
  s.position_rmse = mean_std(rmse);
  s.avg_velocity = mean_std(vavg);
  s.max_velocity = mean_std(vmax);
  s.safe_sample_rate = mean_std(ssr);
  s.compute_ms = mean_std(cms);
  s.episode_seeds = std::move(seeds);
  s.per_episode = eps;
  return s;
}

/// Seed of episode `i` of a trial seeded with `seed`.
inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t i) { return hash_combine(seed, i); }

/// M independent episodes. With several workers the episodes run
/// concurrently (each single-threaded inside); otherwise each episode uses
/// the executor for its samples. Results are folded in episode order.
/// `on_episode`, when set, receives each finished episode; it may be called
/// concurrently for different episodes.
template <DynamicsModel Model>
TrialSummary run_trials(
    const EpisodeConfig<Model>& base, int episodes, std::uint64_t seed, Executor& exec,
    const std::function<void(std::size_t, const EpisodeResult<Model>&)>& on_episode = {}) {
  if (episodes < 1) throw ConfigError("trials.episodes must be >= 1");
  std::vector<EpisodeStats> stats(episodes);
  std::vector<std::uint64_t> seeds(episodes);
  for (int i = 0; i < episodes; ++i) seeds[i] = episode_seed(seed, i);
  auto one = [&](std::size_t i, Executor& inner) {
    EpisodeConfig<Model> cfg = base;
    cfg.seed = seeds[i];
    const auto r = run_episode(cfg, inner);
    if (on_episode) on_episode(i, r);
    stats[i] = r.stats;
  };
  if (exec.threads() > 1 && episodes > 1) {
    exec.parallel_for(episodes, [&](std::size_t i) {
      Executor inner(1);
      one(i, inner);
    });
  } else {
    for (int i = 0; i < episodes; ++i) one(i, exec);
  }
  return summarize(stats, base.controller, std::move(seeds));
}

}  // namespace safe_mpc
