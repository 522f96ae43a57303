#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "safe_mpc/config.hpp"
#include "safe_mpc/harness.hpp"

namespace safe_mpc {
namespace {

const char* kSmallDubins = R"({
  "name": "small",
  "model": {"kind": "dubins", "dt": 0.02, "vehicle_radius": 0.1,
            "control_lower": [-0.1, -3], "control_upper": [4, 3]},
  "obstacles": {"list": [{"center": [1.5, 1.0], "radius": 0.3}],
                "arena_lower": [-2, -2], "arena_upper": [6, 6]},
  "barrier": {"kind": "inverse", "gamma": -0.5, "delta": 0.05},
  "episode": {"controller": "mppi", "start_center": [0, 0], "goal_center": [3, 3],
              "goal_state": [0, 0, 0.785], "problem_horizon": 300, "planning_horizon": 30,
              "completion_radius": 0.3, "rmse_window": 0.2},
  "mppi": {"samples": 64, "lambda": 0.1, "noise_variance": [1, 1], "iterations": 1,
           "cost": {"Q": [1, 1, 0], "q_beta": 0.01, "R": [0.01, 0.01], "Phi": [10, 10, 0]}},
  "scmppi": {"samples": 64, "lambda": 0.1, "noise_inverse_variance": [1, 1], "nu": 1,
             "R_fb": [0.01, 0.01],
             "cost": {"Q": [1, 1, 0], "R": [0.01, 0.01], "Phi": [10, 10, 0]},
             "ddp": {"cost": {"Q": [0.1, 0.1, 0], "q_beta": 0.01, "R": [0.01, 0.01],
                              "Phi": [1, 1, 0]}, "max_iters": 3}},
  "ddp": {"cost": {"Q": [1, 1, 0], "q_beta": 0.01, "R": [0.05, 0.05], "Phi": [10, 10, 0]},
          "max_iters": 5},
  "trials": {"episodes": 3, "seed": 11}
})";

ExperimentConfig Small() { return parse_config(kSmallDubins); }

std::string ErrorOf(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string Replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  return s.replace(pos, from.size(), to);
}

TEST(Config, ParsesFields) {
  const auto c = Small();
  EXPECT_EQ(c.model, "dubins");
  EXPECT_DOUBLE_EQ(c.params.dt, 0.02);
  ASSERT_EQ(c.obstacles.size(), 1u);
  EXPECT_EQ(c.obstacles[0].center, (std::vector<double>{1.5, 1.0}));
  EXPECT_EQ(c.scmppi.noise_variance, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(c.episodes, 3);
  EXPECT_EQ(c.seed, 11u);
  const auto e = build_episode<DubinsModel>(c);
  EXPECT_EQ(e.controller, ControllerKind::kMppi);
  EXPECT_DOUBLE_EQ(e.field.constraints[0].vehicle_radius, 0.1);
  EXPECT_EQ(e.tuning.mppi.horizon, 30);
  EXPECT_DOUBLE_EQ(e.tuning.scmppi.ddp_cost.Q(3, 3), 0.01);
  EXPECT_EQ(e.model.limits().upper, Vec<2>(4, 3));
}

TEST(Config, InverseVarianceIsInverted) {
  const auto c = parse_config(Replace(kSmallDubins, "\"noise_inverse_variance\": [1, 1]",
                                      "\"noise_inverse_variance\": [300, 4]"));
  EXPECT_DOUBLE_EQ(c.scmppi.noise_variance[0], 1.0 / 300.0);
  EXPECT_DOUBLE_EQ(c.scmppi.noise_variance[1], 0.25);
}

TEST(Config, RejectsUnknownKeysWithPath) {
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"iterations\": 1", "\"iterations\": 1, \"temp\": 2"))
                .find("mppi.temp"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"radius\": 0.3", "\"radius\": 0.3, \"r\": 1"))
                .find("obstacles.list[0].r"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"name\": \"small\"", "\"nmae\": \"small\""))
                .find("nmae"),
            std::string::npos);
}

TEST(Config, DimensionErrorsNameKey) {
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"Q\": [1, 1, 0], \"q_beta\": 0.01, \"R\": [0.01, 0.01]",
                            "\"Q\": [1, 1], \"q_beta\": 0.01, \"R\": [0.01, 0.01]"))
                .find("mppi.cost.Q"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"goal_center\": [3, 3]", "\"goal_center\": [3, 3, 1]"))
                .find("episode.goal_center"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"center\": [1.5, 1.0]", "\"center\": [1.5]"))
                .find("obstacles.list[0].center"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"R_fb\": [0.01, 0.01]",
                            "\"R_fb\": [[0.01, 0], [0, 0.01], [0, 0]]"))
                .find("scmppi.R_fb"),
            std::string::npos);
}

TEST(Config, RejectsInvalidValues) {
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"gamma\": -0.5", "\"gamma\": 2")).find("gamma"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"kind\": \"dubins\"", "\"kind\": \"boat\""))
                .find("model.kind"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"controller\": \"mppi\"", "\"controller\": \"pid\""))
                .find("pid"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"R\": [0.05, 0.05]", "\"R\": [-1, 0.05]"))
                .find("ddp.cost.R"),
            std::string::npos);
  EXPECT_NE(ErrorOf(Replace(kSmallDubins, "\"samples\": 64, \"lambda\": 0.1, \"noise_variance\"",
                            "\"samples\": 0, \"lambda\": 0.1, \"noise_variance\""))
                .find("mppi"),
            std::string::npos);
  EXPECT_NE(ErrorOf("{\"model\": {\"kind\": \"dubins\"}, \"episode\": [1]}").find("episode"),
            std::string::npos);
  EXPECT_NE(ErrorOf("{not json").find("parse"), std::string::npos);
}

TEST(Config, RoundTrip) {
  const auto c = Small();
  const auto text = serialize_config_text(c);
  const auto back = parse_config(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize_config_text(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, RoundTripFullMatrices) {
  auto c = Small();
  c.R_fb.diagonal.clear();
  c.R_fb.full = {{0.02, 0.01}, {0.01, 0.02}};
  c.barrier.kind = BarrierKind::kRelaxedInverse;
  c.obstacles[0].axis_scales = {1.0, 2.0};
  validate_config(c);
  EXPECT_EQ(parse_config(serialize_config_text(c)), c);
}

TEST(Config, HashTracksContent) {
  auto c = Small();
  const auto h = config_hash(c);
  EXPECT_EQ(h.size(), 16u);
  c.mppi.lambda = 0.2;
  EXPECT_NE(config_hash(c), h);
}

TEST(Config, ModelMismatchRejected) {
  EXPECT_THROW(build_episode<MultirotorModel>(Small()), ConfigError);
}

TEST(Episode, EndpointsStayInBoxes) {
  auto e = build_episode<DubinsModel>(Small());
  e.start.half_width = Vec<2>(0.5, 0.25);
  for (std::uint64_t s = 0; s < 50; ++s) {
    e.seed = s;
    const auto [x0, g] = episode_endpoints(e);
    EXPECT_LE(std::abs(x0[0]), 0.5);
    EXPECT_LE(std::abs(x0[1]), 0.25);
    EXPECT_EQ(g.head<2>(), Vec<2>(3, 3));
    EXPECT_DOUBLE_EQ(g[2], 0.785);
  }
}

TEST(Episode, MppiReachesGoalSafely) {
  const auto e = build_episode<DubinsModel>(Small());
  Executor exec(1);
  const auto r = run_episode(e, exec);
  EXPECT_TRUE(r.stats.completed) << termination_name(r.stats.termination);
  EXPECT_FALSE(r.stats.safety_violated);
  EXPECT_EQ(r.stats.termination, Termination::kCompleted);
  EXPECT_NEAR(r.stats.completion_time, r.stats.steps * 0.02, 1e-12);
  EXPECT_LE((r.trajectory.states.back().head<2>() - Vec<2>(3, 3)).norm(), 0.3);
  EXPECT_EQ(r.trajectory.states.size(), r.trajectory.controls.size() + 1);
  EXPECT_EQ(r.beta.size(), r.trajectory.states.size());
  EXPECT_EQ(r.min_h.size(), r.trajectory.states.size());
  EXPECT_EQ(static_cast<int>(r.diagnostics.size()), r.stats.steps);
  EXPECT_TRUE(is_safe_trajectory(r.trajectory, e.field).safe);
  EXPECT_GE(r.stats.safe_sample_rate, 0.0);
  EXPECT_LE(r.stats.safe_sample_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.stats.safe_sample_rate, safe_sample_rate(r.diagnostics));
  for (const auto& u : r.trajectory.controls) {
    EXPECT_TRUE((u.array() <= Vec<2>(4, 3).array()).all());
    EXPECT_TRUE((u.array() >= Vec<2>(-0.1, -3).array()).all());
  }
}

TEST(Episode, TracksBarrierStateAlongTrajectory) {
  const auto e = build_episode<DubinsModel>(Small());
  Executor exec(1);
  const auto r = run_episode(e, exec);
  // beta_k - B(x_k) = (-gamma)^k (beta_0 - B(x_0)) = 0.
  for (std::size_t k = 0; k < r.beta.size(); ++k) {
    const double b = barrier_at(e.barrier, e.field, Vec<2>(r.trajectory.states[k].head<2>()));
    EXPECT_NEAR(r.beta[k], b, 1e-9 * std::max(1.0, b));
  }
}

TEST(Episode, MetricsMatchTrajectory) {
  auto e = build_episode<DubinsModel>(Small());
  e.problem_horizon = 40;
  Executor exec(1);
  const auto r = run_episode(e, exec);
  ASSERT_EQ(r.stats.termination, Termination::kHorizon);
  const auto& xs = r.trajectory.states;
  // Window of 0.2 s at dt 0.02 covers the last 11 states.
  double se = 0.0;
  for (std::size_t i = xs.size() - 11; i < xs.size(); ++i) {
    se += (xs[i].head<2>() - Vec<2>(3, 3)).squaredNorm();
  }
  EXPECT_NEAR(r.stats.position_rmse, std::sqrt(se / 11.0), 1e-12);
  double vmax = 0.0, vsum = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const double v = (xs[i].head<2>() - xs[i - 1].head<2>()).norm() / 0.02;
    vmax = std::max(vmax, v);
    vsum += v;
  }
  EXPECT_NEAR(r.stats.max_velocity, vmax, 1e-12);
  EXPECT_NEAR(r.stats.avg_velocity, vsum / (xs.size() - 1), 1e-12);
  EXPECT_FALSE(r.stats.completed);
  EXPECT_TRUE(std::isnan(r.stats.completion_time));
}

TEST(Episode, CollisionTerminates) {
  auto e = build_episode<DubinsModel>(Small());
  // Steering is impossible and the obstacle sits on the only reachable ray.
  e.model = DubinsModel(ModelParams{0.02, 1, 9.81, .25, .25, .7, 0.1},
                        ControlLimits<2>{Vec<2>(2, 0), Vec<2>(2, 0)});
  e.field.constraints[0].center = Vec<2>(1.0, 0.0);
  const auto r = run_episode(e, *std::make_unique<Executor>(1));
  EXPECT_TRUE(r.stats.safety_violated);
  EXPECT_EQ(r.stats.termination, Termination::kCrashed);
  EXPECT_FALSE(r.stats.completed);
  EXPECT_LE(r.min_h.back(), 0.0);
  EXPECT_GT(r.min_h[r.min_h.size() - 2], 0.0);
  EXPECT_FALSE(is_safe_trajectory(r.trajectory, e.field).safe);
}

TEST(Episode, LeavingArenaTerminates) {
  auto e = build_episode<DubinsModel>(Small());
  e.model = DubinsModel(ModelParams{0.02, 1, 9.81, .25, .25, .7, 0.1},
                        ControlLimits<2>{Vec<2>(3, 0), Vec<2>(3, 0)});
  e.field.constraints.clear();
  e.initial_state[2] = M_PI;
  Executor exec(1);
  const auto r = run_episode(e, exec);
  EXPECT_EQ(r.stats.termination, Termination::kLeftDomain);
  EXPECT_FALSE(r.stats.completed);
  EXPECT_FALSE(r.stats.safety_violated);
  EXPECT_LT(r.trajectory.states.back()[0], -2.0);
}

TEST(Episode, UnsafeStartCountsAsViolation) {
  auto e = build_episode<DubinsModel>(Small());
  e.start.center = Vec<2>(1.5, 1.0);
  Executor exec(1);
  const auto r = run_episode(e, exec);
  EXPECT_TRUE(r.stats.safety_violated);
  EXPECT_EQ(r.stats.steps, 0);
}

TEST(Episode, DdpAndScMppiRun) {
  auto e = build_episode<DubinsModel>(Small());
  e.problem_horizon = 20;
  e.planning_horizon = 20;
  Executor exec(1);
  e.controller = ControllerKind::kDdp;
  const auto d = run_episode(e, exec);
  EXPECT_EQ(d.stats.steps, 20);
  EXPECT_TRUE(std::isnan(d.stats.safe_sample_rate));
  EXPECT_GT(d.diagnostics.front().ddp_iterations, 0);
  e.controller = ControllerKind::kScMppi;
  const auto s = run_episode(e, exec);
  EXPECT_EQ(s.stats.steps, 20);
  EXPECT_FALSE(std::isnan(s.stats.safe_sample_rate));
}

TEST(Episode, CloudsRecordSafetyLabels) {
  auto e = build_episode<DubinsModel>(Small());
  e.problem_horizon = 6;
  e.planning_horizon = 6;
  Executor exec(1);
  for (auto kind : {ControllerKind::kMppi, ControllerKind::kScMppi}) {
    e.controller = kind;
    const auto r = run_episode(e, exec, EpisodeOptions{8, 2});
    ASSERT_EQ(r.clouds.size(), 3u);
    EXPECT_EQ(r.clouds[1].step, 2);
    for (const auto& c : r.clouds) {
      ASSERT_EQ(c.paths.size(), 8u);
      for (std::size_t i = 0; i < c.paths.size(); ++i) {
        EXPECT_EQ(c.safe[i] != 0, is_safe_path(c.paths[i], e.field).safe);
      }
    }
  }
}

TEST(Trials, SummaryStatistics) {
  std::vector<EpisodeStats> eps(4);
  eps[0].completed = true;
  eps[0].completion_time = 2.0;
  eps[0].position_rmse = 0.1;
  eps[0].avg_velocity = 1.0;
  eps[0].max_velocity = 2.0;
  eps[0].safe_sample_rate = 0.5;
  eps[1].completed = true;
  eps[1].completion_time = 4.0;
  eps[1].position_rmse = 0.3;
  eps[1].avg_velocity = 3.0;
  eps[1].max_velocity = 4.0;
  eps[1].safe_sample_rate = 1.0;
  eps[2].safety_violated = true;
  eps[2].position_rmse = 100.0;
  eps[2].avg_velocity = 100.0;
  eps[2].max_velocity = 100.0;
  eps[2].termination = Termination::kCrashed;
  eps[3].termination = Termination::kControllerFailure;
  eps[3].position_rmse = 0.2;
  eps[3].avg_velocity = 2.0;
  eps[3].max_velocity = 3.0;
  const auto s = summarize(eps, ControllerKind::kMppi);
  EXPECT_EQ(s.controller, "mppi");
  EXPECT_DOUBLE_EQ(s.safety_violation_pct, 25.0);
  EXPECT_DOUBLE_EQ(s.task_completion_pct, 50.0);
  EXPECT_DOUBLE_EQ(s.completion_time.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.completion_time.std, std::sqrt(2.0));
  EXPECT_EQ(s.position_rmse.count, 3);
  EXPECT_DOUBLE_EQ(s.position_rmse.mean, 0.2);
  EXPECT_DOUBLE_EQ(s.avg_velocity.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.max_velocity.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.safe_sample_rate.mean, 0.75);
  EXPECT_EQ(s.controller_failures, 1);
}

TEST(Trials, MeanStdSingleValue) {
  const auto m = mean_std({4.0});
  EXPECT_EQ(m.mean, 4.0);
  EXPECT_EQ(m.std, 0.0);
  EXPECT_TRUE(std::isnan(mean_std({}).mean));
}

TEST(Trials, IndependentOfThreadCount) {
  auto e = build_episode<DubinsModel>(Small());
  e.problem_horizon = 60;
  Executor one(1), three(3);
  const auto a = run_trials(e, 3, 5, one);
  const auto b = run_trials(e, 3, 5, three);
  EXPECT_EQ(a.episode_seeds, b.episode_seeds);
  ASSERT_EQ(a.per_episode.size(), b.per_episode.size());
  for (std::size_t i = 0; i < a.per_episode.size(); ++i) {
    EXPECT_EQ(a.per_episode[i].position_rmse, b.per_episode[i].position_rmse);
    EXPECT_EQ(a.per_episode[i].safe_sample_rate, b.per_episode[i].safe_sample_rate);
    EXPECT_EQ(a.per_episode[i].steps, b.per_episode[i].steps);
  }
  EXPECT_EQ(a.position_rmse.mean, b.position_rmse.mean);
}

}  // namespace
}  // namespace safe_mpc
