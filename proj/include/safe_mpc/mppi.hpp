#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "safe_mpc/barrier.hpp"
#include "safe_mpc/dynamics.hpp"
#include "safe_mpc/executor.hpp"
#include "safe_mpc/random.hpp"
#include "safe_mpc/types.hpp"

namespace safe_mpc {

template <int M>
struct SamplerConfig {
  int samples = 512;
  int horizon = 50;
  double lambda = 1.0;  // inverse temperature
  double alpha = 0.0;   // control-cost smoothing, in [0, 1]
  Vec<M> noise_variance = Vec<M>::Ones();
  std::uint64_t seed = 0;
  int iterations = 1;

  void validate() const {
    if (samples < 1) throw ConfigError("sampler: samples must be >= 1");
    if (horizon < 1) throw ConfigError("sampler: horizon must be >= 1");
    if (!(lambda > 0.0)) throw ConfigError("sampler: lambda must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("sampler: alpha must lie in [0, 1]");
    if (!(noise_variance.array() >= 0.0).all()) {
      throw ConfigError("sampler: noise variance must be non-negative");
    }
    if (iterations < 1) throw ConfigError("sampler: iterations must be >= 1");
  }

  Vec<M> noise_std() const { return noise_variance.cwiseSqrt(); }

  /// Diagonal of Sigma^-1. Zero-variance channels carry no control penalty.
  Vec<M> inverse_variance() const {
    Vec<M> inv;
    for (int i = 0; i < M; ++i) inv[i] = noise_variance[i] > 0.0 ? 1.0 / noise_variance[i] : 0.0;
    return inv;
  }

  /// lambda (1 - alpha) / 2
  double control_cost_scale() const { return lambda * (1.0 - alpha) / 2.0; }
};

/// Weights of the sampled path cost. Tracking terms act on x - goal.
template <DynamicsModel Model>
struct PathCostParams {
  static constexpr int n = Model::kStateDim;
  static constexpr int m = Model::kControlDim;
  Mat<n, n> Q = Mat<n, n>::Zero();
  Mat<m, m> R = Mat<m, m>::Zero();
  Mat<n, n> Phi = Mat<n, n>::Zero();
  double q_beta = 0.0;
  Vec<n> goal = Vec<n>::Zero();
};

/// Per-batch constants of the sampled stage cost.
template <DynamicsModel Model>
struct SampledCostTerms {
  static constexpr int n = Model::kStateDim;
  static constexpr int m = Model::kControlDim;
  const PathCostParams<Model>* params;
  double scale;            // lambda (1 - alpha) / 2
  Mat<m, m> R_sigma_inv;   // R Sigma^-1
  Mat<m, m> Rfb_sigma_inv; // R_fb Sigma^-1

  SampledCostTerms(const PathCostParams<Model>& p, const SamplerConfig<m>& cfg,
                   const Mat<m, m>& R_fb = Mat<m, m>::Zero())
      : params(&p), scale(cfg.control_cost_scale()) {
    const Vec<m> inv = cfg.inverse_variance();
    R_sigma_inv = p.R * inv.asDiagonal();
    Rfb_sigma_inv = R_fb * inv.asDiagonal();
  }

  double stage(const EmbeddedState<Model>& s, const Vec<m>& u, const Vec<m>& eps,
               const Vec<m>& k_fb) const {
    const Vec<n> e = s.template head<n>() - params->goal;
    const double beta = s[n];
    const double state_cost = e.dot(params->Q * e) + params->q_beta * beta * beta;
    const double control_cost =
        k_fb.dot(Rfb_sigma_inv * k_fb) + (u + 2.0 * eps).dot(R_sigma_inv * u);
    return state_cost + scale * control_cost;
  }

  double terminal(const EmbeddedState<Model>& s) const {
    const Vec<n> e = s.template head<n>() - params->goal;
    return e.dot(params->Phi * e);
  }
};

template <int M>
struct SampleBatch {
  int samples = 0;
  int horizon = 0;
  std::vector<Vec<M>> noise;  // sample-major: noise[n * horizon + k]
  std::vector<double> costs;
  std::vector<char> safe;
  std::vector<double> weights;
  std::vector<int> safe_steps;
  std::vector<double> mean_feedback;  // mean |k_fb| per sample (zero for plain MPPI)
  double eta = 0.0;

  std::span<const Vec<M>> sample_noise(int n) const {
    return {noise.data() + static_cast<std::size_t>(n) * horizon,
            static_cast<std::size_t>(horizon)};
  }

  double safe_rate() const {
    if (safe.empty()) return 0.0;
    std::size_t c = 0;
    for (char s : safe) c += s ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(safe.size());
  }

  double min_cost() const { return *std::min_element(costs.begin(), costs.end()); }
  double mean_cost() const {
    double s = 0.0;
    for (double c : costs) s += c;
    return s / static_cast<double>(costs.size());
  }
};

/// N x T Gaussian perturbations with covariance diag(noise_variance). Each
/// (sample, timestep) block is keyed by (seed, iteration, sample, timestep).
template <int M>
std::vector<Vec<M>> sample_noise(const SamplerConfig<M>& cfg, std::uint64_t iteration) {
  const std::size_t N = cfg.samples, T = cfg.horizon;
  std::vector<Vec<M>> eps(N * T, Vec<M>::Zero());
  const Vec<M> sd = cfg.noise_std();
  if ((sd.array() == 0.0).all()) return eps;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < T; ++k) {
      CounterNormal rng(cfg.seed, iteration, n, k);
      auto& e = eps[n * T + k];
      for (int i = 0; i < M; ++i) e[i] = sd[i] * rng();
    }
  }
  return eps;
}

/// Fixed-order pairwise sum of f(0) + ... + f(n - 1).
template <class T, class F>
T pairwise_sum(std::size_t begin, std::size_t end, const F& f) {
  if (end - begin <= 8) {
    T acc = f(begin);
    for (std::size_t i = begin + 1; i < end; ++i) acc += f(i);
    return acc;
  }
  const std::size_t mid = begin + (end - begin) / 2;
  return T(pairwise_sum<T>(begin, mid, f) + pairwise_sum<T>(mid, end, f));
}

struct WeightResult {
  std::vector<double> weights;
  double eta = 0.0;
  double baseline = 0.0;
};

/// Min-baseline softmax: w_n = exp(-(S_n - min S) / lambda) / eta.
inline WeightResult compute_weights(std::span<const double> costs, double lambda) {
  if (costs.empty()) throw DegenerateBatchError("compute_weights: empty batch");
  WeightResult r;
  r.baseline = *std::min_element(costs.begin(), costs.end());
  if (!(r.baseline < kCostCap)) {
    throw DegenerateBatchError("compute_weights: every sample hit the cost cap");
  }
  r.weights.resize(costs.size());
  for (std::size_t i = 0; i < costs.size(); ++i) {
    r.weights[i] = std::exp(-(costs[i] - r.baseline) / lambda);
  }
  r.eta = pairwise_sum<double>(0, costs.size(), [&](std::size_t i) { return r.weights[i]; });
  for (double& w : r.weights) w /= r.eta;
  return r;
}

inline WeightResult compute_weights(const std::vector<double>& costs, double lambda) {
  return compute_weights(std::span<const double>(costs), lambda);
}

/// u*_k = sum_n w_n (u_k + eps^n_k), reduced in fixed sample order.
template <int M>
std::vector<Vec<M>> update_controls(std::span<const Vec<M>> U, std::span<const Vec<M>> noise,
                                    std::span<const double> weights) {
  const std::size_t T = U.size();
  const std::size_t N = weights.size();
  if (noise.size() != N * T) throw std::invalid_argument("update_controls: noise shape mismatch");
  std::vector<Vec<M>> out(T);
  for (std::size_t k = 0; k < T; ++k) {
    out[k] = pairwise_sum<Vec<M>>(
        0, N, [&](std::size_t n) -> Vec<M> { return weights[n] * (U[k] + noise[n * T + k]); });
  }
  return out;
}

template <int M>
std::vector<Vec<M>> update_controls(const std::vector<Vec<M>>& U,
                                    const std::vector<Vec<M>>& noise,
                                    const std::vector<double>& weights) {
  return update_controls(std::span<const Vec<M>>(U), std::span<const Vec<M>>(noise),
                         std::span<const double>(weights));
}

struct SampleOutcome {
  double cost = 0.0;
  bool safe = true;
  int safe_steps = 0;
  double feedback_norm_sum = 0.0;
  double min_h = std::numeric_limits<double>::infinity();  // over visited states
};

/// Aggregated barrier and minimum margin in one pass over the constraints.
template <int D>
struct BarrierProbe {
  double beta;
  double min_h;
};

template <int D>
BarrierProbe<D> probe_barrier(const BarrierConfig& cfg, const ObstacleField<D>& field,
                              const Vec<D>& p) {
  double beta = 0.0;
  double min_h = std::numeric_limits<double>::infinity();
  for (const auto& c : field.constraints) {
    const double h = c.margin(p);
    min_h = std::min(min_h, h);
    if (cfg.kind == BarrierKind::kRelaxedInverse && h < cfg.delta) {
      beta += (2.0 * cfg.delta - h) / (cfg.delta * cfg.delta);
    } else {
      beta += 1.0 / h;
    }
  }
  return {beta, min_h};
}

/// One forward sample on the barrier-embedded model. `feedback(k, beta)`
/// returns the additive control correction at step k; plain MPPI passes a
/// function returning zero. A sample that reaches h <= 0 stops and takes the
/// cost cap. When `positions` is non-null the visited positions are recorded.
template <DynamicsModel Model, class Feedback>
SampleOutcome sample_rollout(const SafetyEmbeddedModel<Model>& sys,
                             const typename Model::State& x0,
                             std::span<const typename Model::Control> U,
                             std::span<const typename Model::Control> eps,
                             const SampledCostTerms<Model>& terms, const Feedback& feedback,
                             std::vector<typename Model::Position>* positions = nullptr) {
  constexpr int n = Model::kStateDim;
  using Control = typename Model::Control;
  const auto& field = sys.field();
  const auto& bcfg = sys.barrier();
  SampleOutcome out;
  const std::size_t T = U.size();

  auto probe = probe_barrier(bcfg, field, Model::position(x0));
  if (positions) positions->push_back(Model::position(x0));
  out.min_h = probe.min_h;
  if (!(probe.min_h > 0.0)) {
    out.cost = kCostCap;
    out.safe = false;
    return out;
  }
  EmbeddedState<Model> s;
  s.template head<n>() = x0;
  s[n] = probe.beta;
  double b_here = probe.beta;

  double S = 0.0;
  for (std::size_t k = 0; k < T; ++k) {
    const Control k_fb = feedback(k, s[n]);
    out.feedback_norm_sum += k_fb.norm();
    S += terms.stage(s, U[k], eps[k], k_fb);
    const Control u = U[k] + eps[k] + k_fb;
    const typename Model::State x_next = sys.model().step(s.template head<n>(), u);
    const auto pos = Model::position(x_next);
    if (positions) positions->push_back(pos);
    probe = probe_barrier(bcfg, field, pos);
    out.min_h = std::min(out.min_h, probe.min_h);
    if (!(probe.min_h > 0.0)) {
      out.cost = kCostCap;
      out.safe = false;
      out.safe_steps = static_cast<int>(k);
      return out;
    }
    const double beta_next = probe.beta - bcfg.gamma * (s[n] - b_here);
    b_here = probe.beta;
    s.template head<n>() = x_next;
    s[n] = beta_next;
  }
  S += terms.terminal(s);
  out.cost = S;
  out.safe_steps = static_cast<int>(T);
  return out;
}

template <int M>
struct ZeroFeedback {
  Vec<M> operator()(std::size_t, double) const { return Vec<M>::Zero(); }
};

/// Sampled path cost of a recorded embedded trajectory (zero feedback).
/// Trajectories with any state at h <= 0 return the cost cap and `safe == false`.
template <DynamicsModel Model>
SampleOutcome path_cost(const std::vector<EmbeddedState<Model>>& states,
                        std::span<const typename Model::Control> U,
                        std::span<const typename Model::Control> eps,
                        const PathCostParams<Model>& params,
                        const SamplerConfig<Model::kControlDim>& cfg,
                        const ObstacleField<Model::kPositionDim>& field) {
  constexpr int n = Model::kStateDim;
  constexpr int m = Model::kControlDim;
  SampleOutcome out;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const typename Model::State x = states[k].template head<n>();
    if (!(min_margin(field, Model::position(x)) > 0.0)) {
      out.cost = kCostCap;
      out.safe = false;
      out.safe_steps = k == 0 ? 0 : static_cast<int>(k - 1);
      return out;
    }
  }
  const SampledCostTerms<Model> terms(params, cfg);
  double S = 0.0;
  for (std::size_t k = 0; k < U.size(); ++k) {
    S += terms.stage(states[k], U[k], eps[k], Vec<m>::Zero());
  }
  S += terms.terminal(states.back());
  out.cost = S;
  out.safe_steps = static_cast<int>(U.size());
  return out;
}

template <DynamicsModel Model>
struct MppiResult {
  std::vector<typename Model::Control> controls;
  std::vector<typename Model::Control> sampled_around;  // nominal of the last batch
  SampleBatch<Model::kControlDim> batch;  // last iteration
  bool degenerate = false;
};

/// Runs a batch of rollouts in parallel and fills costs and safety flags.
template <DynamicsModel Model, class Feedback>
void evaluate_batch(const SafetyEmbeddedModel<Model>& sys, const typename Model::State& x0,
                    std::span<const typename Model::Control> U,
                    const SampledCostTerms<Model>& terms, const Feedback& feedback,
                    SampleBatch<Model::kControlDim>& batch, Executor& exec) {
  const std::size_t N = batch.samples;
  batch.costs.assign(N, 0.0);
  batch.safe.assign(N, 0);
  batch.safe_steps.assign(N, 0);
  batch.mean_feedback.assign(N, 0.0);
  exec.parallel_for(N, [&](std::size_t i) {
    const auto r = sample_rollout(sys, x0, U, batch.sample_noise(static_cast<int>(i)), terms,
                                  feedback);
    batch.costs[i] = r.cost;
    batch.safe[i] = r.safe ? 1 : 0;
    batch.safe_steps[i] = r.safe_steps;
    const int steps = r.safe ? r.safe_steps : r.safe_steps + 1;
    batch.mean_feedback[i] = steps > 0 ? r.feedback_norm_sum / steps : 0.0;
  });
}

template <DynamicsModel Model>
void clamp_sequence(std::vector<typename Model::Control>& U, const Model& model) {
  for (auto& u : U) u = clamp_controls(u, model.limits());
}

/// P rounds of sample, cost, weight, and update on the barrier-embedded
/// model. Iteration i draws noise under key `iteration_base + i`. The updated
/// sequence is clamped to the control limits. On a degenerate batch the
/// current sequence is returned unchanged with `degenerate == true`.
template <DynamicsModel Model>
MppiResult<Model> mppi_step(const typename Model::State& x0,
                            std::vector<typename Model::Control> U,
                            const SafetyEmbeddedModel<Model>& sys,
                            const PathCostParams<Model>& params,
                            const SamplerConfig<Model::kControlDim>& cfg, Executor& exec,
                            std::uint64_t iteration_base = 0) {
  constexpr int m = Model::kControlDim;
  cfg.validate();
  if (static_cast<int>(U.size()) != cfg.horizon) {
    throw std::invalid_argument("mppi_step: control sequence length must equal the horizon");
  }
  const SampledCostTerms<Model> terms(params, cfg);
  MppiResult<Model> res;
  for (int it = 0; it < cfg.iterations; ++it) {
    auto& batch = res.batch;
    batch.samples = cfg.samples;
    batch.horizon = cfg.horizon;
    batch.noise = sample_noise(cfg, iteration_base + static_cast<std::uint64_t>(it));
    evaluate_batch(sys, x0, std::span<const Vec<m>>(U), terms, ZeroFeedback<m>{}, batch, exec);
    res.sampled_around = U;
    WeightResult w;
    try {
      w = compute_weights(batch.costs, cfg.lambda);
    } catch (const DegenerateBatchError&) {
      batch.weights.assign(batch.samples, 0.0);
      res.degenerate = true;
      break;
    }
    batch.weights = std::move(w.weights);
    batch.eta = w.eta;
    U = update_controls(std::span<const Vec<m>>(U), std::span<const Vec<m>>(batch.noise),
                        std::span<const double>(batch.weights));
    clamp_sequence(U, sys.model());
  }
  res.controls = std::move(U);
  return res;
}

/// Receding-horizon shift: drop the first control and repeat the last.
template <int M>
void shift_controls(std::vector<Vec<M>>& U) {
  if (U.size() < 2) return;
  std::rotate(U.begin(), U.begin() + 1, U.end());
  U.back() = U[U.size() - 2];
}

}  // namespace safe_mpc
