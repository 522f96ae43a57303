#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "safe_mpc/config.hpp"
#include "safe_mpc/harness.hpp"

namespace safe_mpc {

/// Metric keys of the summary document.
namespace labels {
inline constexpr const char* kComputeTime = "Compute Time (ms)";
inline constexpr const char* kSafetyViolation = "Safety Violation %";
inline constexpr const char* kTaskCompletion = "Task Completion %";
inline constexpr const char* kCompletionTime = "Completion Time (s)";
inline constexpr const char* kPositionRmse = "Position RMSE (m)";
inline constexpr const char* kAvgVelocity = "Avg Velocity (m/s)";
inline constexpr const char* kMaxVelocity = "Max Velocity (m/s)";
inline constexpr const char* kSafeSampleRate = "Safe Sample Rate";
}  // namespace labels

inline std::vector<std::string> state_names(const DubinsModel&) { return {"x", "y", "theta"}; }
inline std::vector<std::string> control_names(const DubinsModel&) { return {"v", "omega"}; }
inline std::vector<std::string> state_names(const MultirotorModel&) {
  return {"x", "y", "z", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "p", "q", "r"};
}
inline std::vector<std::string> control_names(const MultirotorModel&) {
  return {"p_cmd", "q_cmd", "r_cmd", "thrust"};
}

/// Shortest decimal form that round-trips a double (17 significant digits).
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

inline void close_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

/// Header of the trajectory CSV for a model.
template <DynamicsModel Model>
std::string trajectory_header(const Model& model) {
  std::string h = "t";
  for (const auto& n : state_names(model)) h += "," + n;
  for (const auto& n : control_names(model)) h += "," + n;
  return h + ",beta,min_h";
}

/// One row per executed state: time, state, the control applied from it
/// (empty on the final row), barrier state and minimum margin.
template <DynamicsModel Model>
void write_trajectory_csv(std::ostream& os, const EpisodeResult<Model>& r, const Model& model) {
  os << trajectory_header(model) << '\n';
  const double dt = model.params().dt;
  const auto& xs = r.trajectory.states;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    os << format_number(k * dt);
    for (int i = 0; i < Model::kStateDim; ++i) os << ',' << format_number(xs[k][i]);
    for (int i = 0; i < Model::kControlDim; ++i) {
      os << ',';
      if (k < r.trajectory.controls.size()) os << format_number(r.trajectory.controls[k][i]);
    }
    os << ',' << (k < r.beta.size() ? format_number(r.beta[k]) : "");
    os << ',' << (k < r.min_h.size() ? format_number(r.min_h[k]) : "");
    os << '\n';
  }
}

/// Parsed trajectory CSV: header names and rows (empty cells as NaN).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty CSV");
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) throw IoError("CSV row has wrong number of cells");
    std::vector<double> row;
    for (const auto& c : cells) {
      row.push_back(c.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(c));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline void write_diagnostics_csv(std::ostream& os, const std::vector<StepDiagnostics>& log) {
  os << "step,time,safe_rate,min_cost,mean_cost,eta,ddp_iterations,corrected,fallback,"
        "degenerate,mean_feedback\n";
  for (const auto& d : log) {
    os << d.step << ',' << format_number(d.time) << ',' << format_number(d.safe_rate) << ','
       << format_number(d.min_cost) << ',' << format_number(d.mean_cost) << ','
       << format_number(d.eta) << ',' << d.ddp_iterations << ',' << int(d.corrected) << ','
       << int(d.fallback) << ',' << int(d.degenerate) << ',' << format_number(d.mean_feedback)
       << '\n';
  }
}

/// Sample clouds as long-format CSV: one row per (step, sample, point).
template <int D>
void write_clouds_csv(std::ostream& os, const std::vector<SampleCloud<D>>& clouds) {
  static const char* axes[] = {"x", "y", "z"};
  os << "step,sample,safe,k";
  for (int i = 0; i < D; ++i) os << ',' << axes[i];
  os << '\n';
  for (const auto& c : clouds) {
    for (std::size_t s = 0; s < c.paths.size(); ++s) {
      for (std::size_t k = 0; k < c.paths[s].size(); ++k) {
        os << c.step << ',' << s << ',' << int(c.safe[s]) << ',' << k;
        for (int i = 0; i < D; ++i) os << ',' << format_number(c.paths[s][k][i]);
        os << '\n';
      }
    }
  }
}

inline Json mean_std_json(const MeanStd& m) {
  Json j = Json::object();
  j["mean"] = m.mean;  // NaN serializes as null
  j["std"] = m.std;
  j["count"] = m.count;
  return j;
}

inline Json episode_json(const EpisodeStats& e, std::uint64_t seed) {
  Json j = Json::object();
  j["seed"] = seed;
  j["termination"] = termination_name(e.termination);
  j["safety_violated"] = e.safety_violated;
  j["completed"] = e.completed;
  j["completion_time"] = e.completion_time;
  j["position_rmse"] = e.position_rmse;
  j["avg_velocity"] = e.avg_velocity;
  j["max_velocity"] = e.max_velocity;
  j["safe_sample_rate"] = e.safe_sample_rate;
  j["steps"] = e.steps;
  if (!e.failure.empty()) j["failure"] = e.failure;
  return j;
}

struct SummaryMetadata {
  std::uint64_t seed = 0;
  std::string config_name;
  std::string config_hash;
  double rmse_window = 0.5;
};

/// Deterministic summary document. Wall-clock compute time is kept out of it
/// (see timing_json) so that equal seeds give byte-equal summaries.
inline Json summary_json(const TrialSummary& s, const SummaryMetadata& meta) {
  Json j = Json::object();
  j["controller"] = s.controller;
  j["episodes"] = s.episodes;
  Json m = Json::object();
  m[labels::kComputeTime] = nullptr;
  m[labels::kSafetyViolation] = s.safety_violation_pct;
  m[labels::kTaskCompletion] = s.task_completion_pct;
  m[labels::kCompletionTime] = mean_std_json(s.completion_time);
  m[labels::kPositionRmse] = mean_std_json(s.position_rmse);
  m[labels::kAvgVelocity] = mean_std_json(s.avg_velocity);
  m[labels::kMaxVelocity] = mean_std_json(s.max_velocity);
  m[labels::kSafeSampleRate] = mean_std_json(s.safe_sample_rate);
  j["metrics"] = m;
  j["controller_failures"] = s.controller_failures;

  Json md = Json::object();
  md["seed"] = meta.seed;
  md["config"] = meta.config_name;
  md["config_hash"] = meta.config_hash;
  md["rmse_window"] = "root mean square of the position error to the goal over the final " +
                      format_number(meta.rmse_window) + " s of each episode";
  md["rmse_window_s"] = meta.rmse_window;
  md["statistics"] =
      "mean and sample standard deviation; completion time over completed episodes; RMSE and "
      "velocities over episodes without a collision; safe sample rate over MPC steps";
  md["compute_time"] = "wall-clock, reported separately in timing.json";
  j["metadata"] = md;

  Json eps = Json::array();
  for (std::size_t i = 0; i < s.per_episode.size(); ++i) {
    eps.push_back(episode_json(s.per_episode[i], i < s.episode_seeds.size() ? s.episode_seeds[i] : 0));
  }
  j["per_episode"] = eps;
  return j;
}

inline Json timing_json(const TrialSummary& s) {
  Json j = Json::object();
  j["controller"] = s.controller;
  j[labels::kComputeTime] = mean_std_json(s.compute_ms);
  Json per = Json::array();
  for (const auto& e : s.per_episode) per.push_back(e.mean_compute_ms);
  j["per_episode_ms"] = per;
  return j;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  close_output(out, path);
}

inline std::string cell(const MeanStd& m) {
  if (m.count == 0 || std::isnan(m.mean)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << m.mean << " +/- " << m.std;
  return os.str();
}

inline std::string cell(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

/// Side-by-side metric table for several trial summaries.
inline std::string comparison_table(const std::vector<TrialSummary>& runs) {
  std::vector<std::pair<std::string, std::vector<std::string>>> rows = {
      {labels::kComputeTime, {}},     {labels::kSafetyViolation, {}}, {labels::kTaskCompletion, {}},
      {labels::kCompletionTime, {}},  {labels::kPositionRmse, {}},    {labels::kAvgVelocity, {}},
      {labels::kMaxVelocity, {}},     {labels::kSafeSampleRate, {}}};
  for (const auto& s : runs) {
    rows[0].second.push_back(cell(s.compute_ms));
    rows[1].second.push_back(cell(s.safety_violation_pct));
    rows[2].second.push_back(cell(s.task_completion_pct));
    rows[3].second.push_back(cell(s.completion_time));
    rows[4].second.push_back(cell(s.position_rmse));
    rows[5].second.push_back(cell(s.avg_velocity));
    rows[6].second.push_back(cell(s.max_velocity));
    rows[7].second.push_back(cell(s.safe_sample_rate));
  }
  std::ostringstream os;
  os << std::left << std::setw(24) << "Metric";
  for (const auto& s : runs) os << std::setw(24) << s.controller;
  os << '\n';
  for (const auto& [name, cells] : rows) {
    os << std::setw(24) << name;
    for (const auto& c : cells) os << std::setw(24) << c;
    os << '\n';
  }
  return os.str();
}

}  // namespace safe_mpc
