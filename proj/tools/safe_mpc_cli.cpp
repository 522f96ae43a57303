#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "safe_mpc/config.hpp"
#include "safe_mpc/harness.hpp"
#include "safe_mpc/io.hpp"
#include "safe_mpc/presets.hpp"

namespace fs = std::filesystem;
using namespace safe_mpc;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> episodes;
  std::optional<std::string> controller;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool episodes, bool controller) {
  cmd->add_option("--config", o.config, "Config file path or bundled preset name")->required();
  cmd->add_option("--seed", o.seed, "Trial seed (overrides trials.seed)");
  if (episodes) cmd->add_option("--episodes", o.episodes, "Episode count")->check(CLI::PositiveNumber);
  if (controller) {
    cmd->add_option("--controller", o.controller, "Controller")
        ->check(CLI::IsMember({"ddp", "mppi", "scmppi"}));
  }
  cmd->add_option("--out", o.out, "Output directory (overrides output.directory)");
  cmd->add_option("--threads", o.threads, "Worker threads (default: SAFE_MPC_THREADS or 1)")
      ->check(CLI::PositiveNumber);
}

struct Resolved {
  ExperimentConfig cfg;
  fs::path out;
  std::size_t threads = 1;
};

Resolved resolve(const CommonOptions& o) {
  Resolved r;
  r.cfg = load_config(o.config);
  if (o.seed) r.cfg.seed = *o.seed;
  if (o.episodes) r.cfg.episodes = *o.episodes;
  if (o.controller) r.cfg.controller = *o.controller;
  validate_config(r.cfg);
  r.out = o.out ? fs::path(*o.out) : fs::path(r.cfg.output_dir);
  r.threads = o.threads ? static_cast<std::size_t>(*o.threads) : threads_from_env(1);
  return r;
}

SummaryMetadata metadata(const ExperimentConfig& cfg) {
  return {cfg.seed, cfg.name, config_hash(cfg), cfg.rmse_window};
}

template <DynamicsModel Model>
void write_trajectory(const fs::path& path, const EpisodeResult<Model>& r, const Model& model) {
  auto out = open_output(path);
  write_trajectory_csv(out, r, model);
  close_output(out, path);
}

template <DynamicsModel Model>
void write_obstacles(const fs::path& path, const EpisodeConfig<Model>& e) {
  constexpr int D = Model::kPositionDim;
  static const char* axes[] = {"x", "y", "z"};
  auto out = open_output(path);
  out << "index";
  for (int i = 0; i < D; ++i) out << ",c" << axes[i];
  out << ",radius,vehicle_radius";
  for (int i = 0; i < D; ++i) out << ",s" << axes[i];
  out << '\n';
  for (std::size_t k = 0; k < e.field.constraints.size(); ++k) {
    const auto& c = e.field.constraints[k];
    out << k;
    for (int i = 0; i < D; ++i) out << ',' << format_number(c.center[i]);
    out << ',' << format_number(c.radius) << ',' << format_number(c.vehicle_radius);
    for (int i = 0; i < D; ++i) out << ',' << format_number(c.axis_scales[i]);
    out << '\n';
  }
  close_output(out, path);
}

void write_summary(const fs::path& dir, const TrialSummary& s, const ExperimentConfig& cfg) {
  write_json(dir / "summary.json", summary_json(s, metadata(cfg)));
  write_json(dir / "timing.json", timing_json(s));
}

template <DynamicsModel Model>
int cmd_run(const Resolved& r, const EpisodeConfig<Model>& base) {
  auto e = base;
  e.seed = episode_seed(r.cfg.seed, 0);
  Executor exec(r.threads);
  const auto res = run_episode(e, exec);
  write_trajectory(r.out / "trajectory.csv", res, e.model);
  {
    const auto path = r.out / "diagnostics.csv";
    auto out = open_output(path);
    write_diagnostics_csv(out, res.diagnostics);
    close_output(out, path);
  }
  const auto s = summarize({res.stats}, e.controller, {e.seed});
  write_summary(r.out, s, r.cfg);
  std::cout << "episode " << termination_name(res.stats.termination) << " after "
            << res.stats.steps << " steps";
  if (!res.stats.failure.empty()) std::cout << " (" << res.stats.failure << ")";
  std::cout << "\n" << comparison_table({s}) << "wrote " << r.out.string() << "\n";
  return 0;
}

template <DynamicsModel Model>
TrialSummary trial(const Resolved& r, EpisodeConfig<Model> e, Executor& exec,
                   const fs::path& dir, bool trajectories) {
  std::function<void(std::size_t, const EpisodeResult<Model>&)> sink;
  if (trajectories) {
    sink = [&](std::size_t i, const EpisodeResult<Model>& res) {
      char name[32];
      std::snprintf(name, sizeof name, "episode_%04zu.csv", i);
      write_trajectory(dir / "episodes" / name, res, e.model);
    };
  }
  const auto s = run_trials(e, r.cfg.episodes, r.cfg.seed, exec, sink);
  write_summary(dir, s, r.cfg);
  return s;
}

template <DynamicsModel Model>
int cmd_trials(const Resolved& r, const EpisodeConfig<Model>& e, bool trajectories) {
  Executor exec(r.threads);
  const auto s = trial(r, e, exec, r.out, trajectories);
  std::cout << r.cfg.episodes << " episodes, seed " << r.cfg.seed << "\n"
            << comparison_table({s}) << "wrote " << r.out.string() << "\n";
  return 0;
}

template <DynamicsModel Model>
int cmd_compare(const Resolved& r, EpisodeConfig<Model> e, bool with_ddp, bool trajectories) {
  Executor exec(r.threads);
  std::vector<TrialSummary> runs;
  std::vector<ControllerKind> kinds = {ControllerKind::kMppi, ControllerKind::kScMppi};
  if (with_ddp) kinds.insert(kinds.begin(), ControllerKind::kDdp);
  Json doc = Json::object();
  for (auto k : kinds) {
    e.controller = k;
    const fs::path dir = r.out / controller_name(k);
    runs.push_back(trial(r, e, exec, dir, trajectories));
    doc[controller_name(k)] = summary_json(runs.back(), metadata(r.cfg));
  }
  const auto table = comparison_table(runs);
  write_json(r.out / "comparison.json", doc);
  {
    const auto path = r.out / "comparison.txt";
    auto out = open_output(path);
    out << table;
    close_output(out, path);
  }
  std::cout << r.cfg.episodes << " matched-seed episodes per controller, seed " << r.cfg.seed
            << "\n"
            << table << "wrote " << r.out.string() << "\n";
  return 0;
}

template <DynamicsModel Model>
int cmd_plotdata(const Resolved& r, const EpisodeConfig<Model>& base, int samples, int stride) {
  auto e = base;
  e.seed = episode_seed(r.cfg.seed, 0);
  if (e.controller == ControllerKind::kDdp) {
    throw ConfigError("plotdata needs a sampling controller (mppi or scmppi)");
  }
  Executor exec(r.threads);
  const auto res = run_episode(e, exec, EpisodeOptions{samples, stride});
  {
    const auto path = r.out / "samples.csv";
    auto out = open_output(path);
    write_clouds_csv(out, res.clouds);
    close_output(out, path);
  }
  write_trajectory(r.out / "trajectory.csv", res, e.model);
  write_obstacles(r.out / "obstacles.csv", e);
  std::cout << res.clouds.size() << " sample clouds of up to " << samples
            << " trajectories; wrote " << r.out.string() << "\n";
  return 0;
}

template <class F>
int dispatch(const ExperimentConfig& cfg, F&& f) {
  if (cfg.model == MultirotorModel::kName) return f(build_episode<MultirotorModel>(cfg));
  return f(build_episode<DubinsModel>(cfg));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety-controlled sampling MPC experiments"};
  app.require_subcommand(1);

  CommonOptions run_o, trials_o, compare_o, plot_o;
  bool trials_traj = true, compare_traj = false, with_ddp = false;
  int samples = 64, stride = 10;
  std::string show;

  auto* run = app.add_subcommand("run", "Run one episode");
  add_common(run, run_o, false, true);
  auto* trials = app.add_subcommand("trials", "Run a statistical trial");
  add_common(trials, trials_o, true, true);
  trials->add_flag("!--no-trajectories", trials_traj, "Skip per-episode trajectory CSVs");
  auto* compare = app.add_subcommand("compare", "MPPI vs SC-MPPI on matched seeds");
  add_common(compare, compare_o, true, false);
  compare->add_flag("--with-ddp", with_ddp, "Also run MPC-DDP");
  compare->add_flag("--trajectories", compare_traj, "Write per-episode trajectory CSVs");
  auto* presets = app.add_subcommand("presets", "List bundled presets");
  presets->add_option("--show", show, "Print the canonical form of one preset");
  auto* plot = app.add_subcommand("plotdata", "Emit sampled trajectories with safety labels");
  add_common(plot, plot_o, false, true);
  plot->add_option("--samples", samples, "Sampled trajectories per MPC step (at most 64)")
      ->check(CLI::Range(1, 64));
  plot->add_option("--stride", stride, "Record every this many MPC steps")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*presets) {
      if (!show.empty()) {
        std::cout << serialize_config_text(load_preset(show));
        return 0;
      }
      for (auto name : preset_names()) {
        const auto cfg = load_preset(name);
        std::cout << name << "  " << cfg.description << "\n";
      }
      return 0;
    }
    if (*run) {
      const auto r = resolve(run_o);
      return dispatch(r.cfg, [&](const auto& e) { return cmd_run(r, e); });
    }
    if (*trials) {
      const auto r = resolve(trials_o);
      return dispatch(r.cfg, [&](const auto& e) { return cmd_trials(r, e, trials_traj); });
    }
    if (*compare) {
      const auto r = resolve(compare_o);
      return dispatch(r.cfg,
                      [&](const auto& e) { return cmd_compare(r, e, with_ddp, compare_traj); });
    }
    if (*plot) {
      const auto r = resolve(plot_o);
      return dispatch(r.cfg, [&](const auto& e) { return cmd_plotdata(r, e, samples, stride); });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
