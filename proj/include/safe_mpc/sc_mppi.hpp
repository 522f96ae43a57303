#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "safe_mpc/barrier.hpp"
#include "safe_mpc/ddp.hpp"
#include "safe_mpc/mppi.hpp"

namespace safe_mpc {

/// Sampler settings for safety-controlled importance sampling.
template <DynamicsModel Model>
struct SafeSamplerConfig {
  static constexpr int m = Model::kControlDim;
  SamplerConfig<m> sampler;
  /// Scale on the barrier-state feedback applied to every sample.
  double nu = 1.0;
  Mat<m, m> R_fb = Mat<m, m>::Zero();
  /// Cost and iteration cap of the embedded DBaS-DDP safety controller.
  /// A cap of zero makes the safety controller the identity (zero gains).
  QuadraticCost<Model> ddp_cost;
  DdpOptions ddp;

  void validate() const {
    sampler.validate();
    if (!(nu >= 0.0)) throw ConfigError("scmppi.nu must be non-negative");
    Eigen::SelfAdjointEigenSolver<Mat<m, m>> es(0.5 * (R_fb + R_fb.transpose()));
    if (es.eigenvalues().minCoeff() < -1e-12) {
      throw ConfigError("scmppi.R_fb must be positive semidefinite");
    }
    if (ddp.max_iters < 0) throw ConfigError("scmppi.ddp.max_iters must be >= 0");
  }
};

template <DynamicsModel Model>
struct SafeFeedback {
  std::vector<typename Model::Control> safe_controls;  // U_S
  FeedbackPolicy<Model> policy;
  int ddp_iterations = 0;
  bool corrected = false;  // U_S differs from the input sequence
  bool fallback = false;   // DDP failed; U_S = U with zero gains
};

/// Runs DBaS-DDP (relaxed barrier) from the current state seeded with U and
/// returns the corrected sequence with its barrier gains. Solver failure
/// degrades to the input sequence with zero gains.
template <DynamicsModel Model>
SafeFeedback<Model> compute_safe_feedback(const SafetyEmbeddedModel<Model>& sys,
                                          const typename Model::State& x0,
                                          const std::vector<typename Model::Control>& U,
                                          const QuadraticCost<Model>& ddp_cost,
                                          const DdpOptions& opts) {
  SafeFeedback<Model> out;
  const auto relaxed = sys.with_barrier_kind(BarrierKind::kRelaxedInverse);
  const auto s0 = relaxed.embed(x0);
  auto identity = [&] {
    EmbeddedTrajectory<Model> ref;
    ref.states.assign(U.size() + 1, s0);
    ref.controls = U;
    out.policy = FeedbackPolicy<Model>::open_loop(ref);
    out.safe_controls = U;
  };
  if (opts.max_iters <= 0) {
    identity();
    return out;
  }
  try {
    auto sol = solve(s0, U, ddp_cost, relaxed, opts);
    out.safe_controls = sol.trajectory.controls;
    out.policy = std::move(sol.policy);
    out.ddp_iterations = sol.iterations;
    for (std::size_t k = 0; k < U.size(); ++k) {
      if (out.safe_controls[k] != U[k]) {
        out.corrected = true;
        break;
      }
    }
  } catch (const SolverFailure&) {
    identity();
    out.fallback = true;
  }
  return out;
}

/// Barrier-state feedback k_fb = nu * K_BaS,k * beta_k. The nominal used for
/// the feedback has its barrier component zeroed, so the raw barrier value
/// multiplies the gain.
template <DynamicsModel Model>
struct BarrierFeedback {
  const FeedbackPolicy<Model>* policy;
  double nu;

  typename Model::Control operator()(std::size_t k, double beta) const {
    return nu * policy->barrier_gains[k] * beta;
  }
};

/// Path-cost terms for safety-controlled sampling: no barrier penalty, plus
/// the feedback penalty k_fb' R_fb Sigma^-1 k_fb.
template <DynamicsModel Model>
PathCostParams<Model> without_barrier_penalty(PathCostParams<Model> p) {
  p.q_beta = 0.0;
  return p;
}

/// One safety-controlled sample.
template <DynamicsModel Model>
SampleOutcome scis_rollout(const SafetyEmbeddedModel<Model>& sys, const typename Model::State& x0,
                           std::span<const typename Model::Control> U_S,
                           const FeedbackPolicy<Model>& policy,
                           std::span<const typename Model::Control> eps,
                           const PathCostParams<Model>& params, const SafeSamplerConfig<Model>& cfg,
                           std::vector<typename Model::Position>* positions = nullptr) {
  if (policy.horizon() < U_S.size()) {
    throw std::invalid_argument("scis_rollout: policy horizon shorter than the sequence");
  }
  const auto p = without_barrier_penalty(params);
  const SampledCostTerms<Model> terms(p, cfg.sampler, cfg.R_fb);
  return sample_rollout(sys, x0, U_S, eps, terms, BarrierFeedback<Model>{&policy, cfg.nu},
                        positions);
}

template <DynamicsModel Model>
struct ScMppiResult {
  std::vector<typename Model::Control> controls;
  std::vector<typename Model::Control> safe_controls;  // U_S of the last iteration
  FeedbackPolicy<Model> policy;                        // of the last iteration
  SampleBatch<Model::kControlDim> batch;
  int ddp_iterations = 0;
  bool corrected = false;
  bool fallback = false;
  bool degenerate = false;
};

/// Safety-controlled MPPI: per iteration, correct U with the safety
/// controller, draw N barrier-feedback samples around U_S, and average
/// u_k + eps_k under the min-baseline softmax weights.
template <DynamicsModel Model>
ScMppiResult<Model> sc_mppi_step(const typename Model::State& x0,
                                 std::vector<typename Model::Control> U,
                                 const SafetyEmbeddedModel<Model>& sys,
                                 const PathCostParams<Model>& params,
                                 const SafeSamplerConfig<Model>& cfg, Executor& exec,
                                 std::uint64_t iteration_base = 0) {
  constexpr int m = Model::kControlDim;
  cfg.validate();
  const auto& scfg = cfg.sampler;
  if (static_cast<int>(U.size()) != scfg.horizon) {
    throw std::invalid_argument("sc_mppi_step: control sequence length must equal the horizon");
  }
  const auto p = without_barrier_penalty(params);
  const SampledCostTerms<Model> terms(p, scfg, cfg.R_fb);
  ScMppiResult<Model> res;
  for (int it = 0; it < scfg.iterations; ++it) {
    auto fb = compute_safe_feedback(sys, x0, U, cfg.ddp_cost, cfg.ddp);
    res.ddp_iterations += fb.ddp_iterations;
    res.corrected = res.corrected || fb.corrected;
    res.fallback = res.fallback || fb.fallback;
    auto& batch = res.batch;
    batch.samples = scfg.samples;
    batch.horizon = scfg.horizon;
    batch.noise = sample_noise(scfg, iteration_base + static_cast<std::uint64_t>(it));
    const std::span<const Vec<m>> U_S(fb.safe_controls);
    evaluate_batch(sys, x0, U_S, terms, BarrierFeedback<Model>{&fb.policy, cfg.nu}, batch, exec);
    res.safe_controls = fb.safe_controls;
    res.policy = std::move(fb.policy);
    WeightResult w;
    try {
      w = compute_weights(batch.costs, scfg.lambda);
    } catch (const DegenerateBatchError&) {
      batch.weights.assign(batch.samples, 0.0);
      res.degenerate = true;
      U = res.safe_controls;
      break;
    }
    batch.weights = std::move(w.weights);
    batch.eta = w.eta;
    U = update_controls(U_S, std::span<const Vec<m>>(batch.noise),
                        std::span<const double>(batch.weights));
    clamp_sequence(U, sys.model());
  }
  res.controls = std::move(U);
  return res;
}

}  // namespace safe_mpc
