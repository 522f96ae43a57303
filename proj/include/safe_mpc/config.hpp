#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "safe_mpc/harness.hpp"

namespace safe_mpc {

using Json = nlohmann::ordered_json;

/// Weight matrix given either by its diagonal or in full (row lists).
struct WeightMatrix {
  std::vector<double> diagonal;
  std::vector<std::vector<double>> full;

  bool empty() const { return diagonal.empty() && full.empty(); }
  static WeightMatrix diag(std::vector<double> d) { return {std::move(d), {}}; }
  bool operator==(const WeightMatrix&) const = default;
};

struct CostSpec {
  WeightMatrix Q, R, Phi;
  double q_beta = 0.0;
  std::vector<double> control_ref;  // empty: the model's neutral control
  bool operator==(const CostSpec&) const = default;
};

struct SamplerSpec {
  int samples = 512;
  double lambda = 1.0;
  double alpha = 0.0;
  std::vector<double> noise_variance;
  int iterations = 1;
  CostSpec cost;
  bool operator==(const SamplerSpec&) const = default;
};

struct ObstacleSpec {
  std::vector<double> center;
  double radius = 1.0;
  std::vector<double> axis_scales;  // empty: sphere
  bool operator==(const ObstacleSpec&) const = default;
};

struct ExperimentConfig {
  std::string name;
  std::string description;

  std::string model = "dubins";  // dubins | multirotor
  ModelParams params;
  std::vector<double> control_lower, control_upper;  // empty: model defaults

  std::vector<ObstacleSpec> obstacles;
  std::vector<double> arena_lower, arena_upper;  // empty: unbounded
  BarrierConfig barrier;

  std::string controller = "scmppi";
  std::vector<double> initial_state, goal_state;  // empty: model rest state
  std::vector<double> start_center, start_half_width;
  std::vector<double> goal_center, goal_half_width;
  int problem_horizon = 1000;
  int planning_horizon = 50;
  double completion_radius = 0.5;
  double rmse_window = 0.5;

  SamplerSpec mppi;
  SamplerSpec scmppi;
  double nu = 1.0;
  WeightMatrix R_fb;
  CostSpec scmppi_ddp_cost;
  DdpOptions scmppi_ddp{20, 1e-6, 1e-6};
  CostSpec ddp_cost;
  DdpOptions ddp{20, 1e-6, 1e-6};

  int episodes = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

/// Object reader that records consumed keys and rejects the rest.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const Json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(j_.at(key), key_path(key));
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_number()) throw ConfigError(key_path(key) + ": expected a number");
    return v.get<double>();
  }

  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(key_path(key) + ": expected an integer");
    return v.get<int>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_number_unsigned()) {
      throw ConfigError(key_path(key) + ": expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_string()) throw ConfigError(key_path(key) + ": expected a string");
    return v.get<std::string>();
  }

  std::vector<double> vector(const std::string& key) {
    if (!has(key)) return {};
    return as_vector(raw(key), key_path(key));
  }

  WeightMatrix matrix(const std::string& key) {
    if (!has(key)) return {};
    const Json& v = raw(key);
    const std::string p = key_path(key);
    if (!v.is_array() || v.empty()) throw ConfigError(p + ": expected a non-empty array");
    WeightMatrix w;
    if (v.front().is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        w.full.push_back(as_vector(v[i], p + "[" + std::to_string(i) + "]"));
      }
    } else {
      w.diagonal = as_vector(v, p);
    }
    return w;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + key_path(it.key()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  static std::vector<double> as_vector(const Json& v, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(p + ": expected an array of numbers");
      out.push_back(x.get<double>());
    }
    return out;
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline CostSpec read_cost(Section s) {
  CostSpec c;
  c.Q = s.matrix("Q");
  c.q_beta = s.number("q_beta", 0.0);
  c.R = s.matrix("R");
  c.Phi = s.matrix("Phi");
  c.control_ref = s.vector("control_ref");
  s.finish();
  return c;
}

inline SamplerSpec read_sampler(Section& s) {
  SamplerSpec r;
  r.samples = s.integer("samples", r.samples);
  r.lambda = s.number("lambda", r.lambda);
  r.alpha = s.number("alpha", r.alpha);
  r.iterations = s.integer("iterations", r.iterations);
  if (s.has("noise_variance") && s.has("noise_inverse_variance")) {
    throw ConfigError(s.key_path("noise_variance") +
                      ": give either noise_variance or noise_inverse_variance");
  }
  if (s.has("noise_variance")) {
    r.noise_variance = s.vector("noise_variance");
  } else if (s.has("noise_inverse_variance")) {
    for (double x : s.vector("noise_inverse_variance")) {
      if (!(x > 0.0)) {
        throw ConfigError(s.key_path("noise_inverse_variance") + ": entries must be positive");
      }
      r.noise_variance.push_back(1.0 / x);
    }
  }
  if (s.has("cost")) r.cost = read_cost(s.child("cost"));
  return r;
}

inline DdpOptions read_ddp_options(Section& s, DdpOptions d) {
  d.max_iters = s.integer("max_iters", d.max_iters);
  d.relative_tolerance = s.number("relative_tolerance", d.relative_tolerance);
  d.initial_regularization = s.number("initial_regularization", d.initial_regularization);
  return d;
}

inline Json write_matrix(const WeightMatrix& w) {
  if (!w.full.empty()) return Json(w.full);
  return Json(w.diagonal);
}

inline Json write_cost(const CostSpec& c) {
  Json j = Json::object();
  if (!c.Q.empty()) j["Q"] = write_matrix(c.Q);
  j["q_beta"] = c.q_beta;
  if (!c.R.empty()) j["R"] = write_matrix(c.R);
  if (!c.Phi.empty()) j["Phi"] = write_matrix(c.Phi);
  if (!c.control_ref.empty()) j["control_ref"] = c.control_ref;
  return j;
}

inline Json write_sampler(const SamplerSpec& s) {
  Json j = Json::object();
  j["samples"] = s.samples;
  j["lambda"] = s.lambda;
  j["alpha"] = s.alpha;
  if (!s.noise_variance.empty()) j["noise_variance"] = s.noise_variance;
  j["iterations"] = s.iterations;
  j["cost"] = write_cost(s.cost);
  return j;
}

inline Json write_ddp_options(Json j, const DdpOptions& d) {
  j["max_iters"] = d.max_iters;
  j["relative_tolerance"] = d.relative_tolerance;
  j["initial_regularization"] = d.initial_regularization;
  return j;
}

}  // namespace detail

inline const char* barrier_kind_name(BarrierKind k) {
  return k == BarrierKind::kInverse ? "inverse" : "relaxed";
}

/// Canonical JSON form of a configuration.
inline Json serialize_config(const ExperimentConfig& c) {
  using namespace detail;
  Json j = Json::object();
  j["name"] = c.name;
  if (!c.description.empty()) j["description"] = c.description;

  Json model = Json::object();
  model["kind"] = c.model;
  model["dt"] = c.params.dt;
  model["mass"] = c.params.mass;
  model["gravity"] = c.params.gravity;
  model["kappa"] = std::vector<double>{c.params.kappa_p, c.params.kappa_q, c.params.kappa_r};
  model["vehicle_radius"] = c.params.vehicle_radius;
  if (!c.control_lower.empty()) model["control_lower"] = c.control_lower;
  if (!c.control_upper.empty()) model["control_upper"] = c.control_upper;
  j["model"] = model;

  Json obs = Json::object();
  Json list = Json::array();
  for (const auto& o : c.obstacles) {
    Json e = Json::object();
    e["center"] = o.center;
    e["radius"] = o.radius;
    if (!o.axis_scales.empty()) e["axis_scales"] = o.axis_scales;
    list.push_back(e);
  }
  obs["list"] = list;
  if (!c.arena_lower.empty()) obs["arena_lower"] = c.arena_lower;
  if (!c.arena_upper.empty()) obs["arena_upper"] = c.arena_upper;
  j["obstacles"] = obs;

  j["barrier"] = Json{{"kind", barrier_kind_name(c.barrier.kind)},
                      {"gamma", c.barrier.gamma},
                      {"delta", c.barrier.delta}};

  Json ep = Json::object();
  ep["controller"] = c.controller;
  if (!c.initial_state.empty()) ep["initial_state"] = c.initial_state;
  if (!c.goal_state.empty()) ep["goal_state"] = c.goal_state;
  ep["start_center"] = c.start_center;
  if (!c.start_half_width.empty()) ep["start_half_width"] = c.start_half_width;
  ep["goal_center"] = c.goal_center;
  if (!c.goal_half_width.empty()) ep["goal_half_width"] = c.goal_half_width;
  ep["problem_horizon"] = c.problem_horizon;
  ep["planning_horizon"] = c.planning_horizon;
  ep["completion_radius"] = c.completion_radius;
  ep["rmse_window"] = c.rmse_window;
  j["episode"] = ep;

  j["mppi"] = write_sampler(c.mppi);
  Json sc = write_sampler(c.scmppi);
  sc["nu"] = c.nu;
  if (!c.R_fb.empty()) sc["R_fb"] = write_matrix(c.R_fb);
  sc["ddp"] = write_ddp_options(Json{{"cost", write_cost(c.scmppi_ddp_cost)}}, c.scmppi_ddp);
  j["scmppi"] = sc;
  j["ddp"] = write_ddp_options(Json{{"cost", write_cost(c.ddp_cost)}}, c.ddp);

  j["trials"] = Json{{"episodes", c.episodes}, {"seed", c.seed}};
  j["output"] = Json{{"directory", c.output_dir}};
  return j;
}

inline std::string serialize_config_text(const ExperimentConfig& c) {
  return serialize_config(c).dump(2) + "\n";
}

/// 64-bit FNV-1a of the canonical serialization, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string text = serialize_config(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

ExperimentConfig config_from_json(const Json& j);
void validate_config(const ExperimentConfig& c);

/// Parses and validates a configuration document.
inline ExperimentConfig parse_config(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  auto cfg = config_from_json(j);
  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig config_from_json(const Json& root) {
  using namespace detail;
  ExperimentConfig c;
  Section s(root, "");
  c.name = s.string("name", "");
  c.description = s.string("description", "");

  if (!s.has("model")) throw ConfigError("missing key 'model'");
  {
    Section m = s.child("model");
    c.model = m.string("kind", c.model);
    c.params.dt = m.number("dt", c.params.dt);
    c.params.mass = m.number("mass", c.params.mass);
    c.params.gravity = m.number("gravity", c.params.gravity);
    if (m.has("kappa")) {
      const auto k = m.vector("kappa");
      if (k.size() != 3) throw ConfigError("model.kappa: expected 3 entries");
      c.params.kappa_p = k[0];
      c.params.kappa_q = k[1];
      c.params.kappa_r = k[2];
    }
    c.params.vehicle_radius = m.number("vehicle_radius", c.params.vehicle_radius);
    c.control_lower = m.vector("control_lower");
    c.control_upper = m.vector("control_upper");
    m.finish();
  }

  if (s.has("obstacles")) {
    Section o = s.child("obstacles");
    if (o.has("list")) {
      const Json& list = o.raw("list");
      if (!list.is_array()) throw ConfigError("obstacles.list: expected an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        Section e(list[i], "obstacles.list[" + std::to_string(i) + "]");
        ObstacleSpec spec;
        spec.center = e.vector("center");
        if (!e.has("radius")) throw ConfigError(e.key_path("radius") + ": missing");
        spec.radius = e.number("radius", 1.0);
        spec.axis_scales = e.vector("axis_scales");
        e.finish();
        c.obstacles.push_back(std::move(spec));
      }
    }
    c.arena_lower = o.vector("arena_lower");
    c.arena_upper = o.vector("arena_upper");
    o.finish();
  }

  if (s.has("barrier")) {
    Section b = s.child("barrier");
    const std::string kind = b.string("kind", "inverse");
    if (kind == "inverse") {
      c.barrier.kind = BarrierKind::kInverse;
    } else if (kind == "relaxed") {
      c.barrier.kind = BarrierKind::kRelaxedInverse;
    } else {
      throw ConfigError("barrier.kind: expected 'inverse' or 'relaxed'");
    }
    c.barrier.gamma = b.number("gamma", c.barrier.gamma);
    c.barrier.delta = b.number("delta", c.barrier.delta);
    b.finish();
  }

  if (!s.has("episode")) throw ConfigError("missing key 'episode'");
  {
    Section e = s.child("episode");
    c.controller = e.string("controller", c.controller);
    c.initial_state = e.vector("initial_state");
    c.goal_state = e.vector("goal_state");
    if (!e.has("start_center")) throw ConfigError("episode.start_center: missing");
    if (!e.has("goal_center")) throw ConfigError("episode.goal_center: missing");
    c.start_center = e.vector("start_center");
    c.start_half_width = e.vector("start_half_width");
    c.goal_center = e.vector("goal_center");
    c.goal_half_width = e.vector("goal_half_width");
    c.problem_horizon = e.integer("problem_horizon", c.problem_horizon);
    c.planning_horizon = e.integer("planning_horizon", c.planning_horizon);
    c.completion_radius = e.number("completion_radius", c.completion_radius);
    c.rmse_window = e.number("rmse_window", c.rmse_window);
    e.finish();
  }

  if (s.has("mppi")) {
    Section m = s.child("mppi");
    c.mppi = read_sampler(m);
    m.finish();
  }
  if (s.has("scmppi")) {
    Section m = s.child("scmppi");
    c.scmppi = read_sampler(m);
    c.nu = m.number("nu", c.nu);
    c.R_fb = m.matrix("R_fb");
    if (m.has("ddp")) {
      Section d = m.child("ddp");
      if (d.has("cost")) c.scmppi_ddp_cost = read_cost(d.child("cost"));
      c.scmppi_ddp = read_ddp_options(d, c.scmppi_ddp);
      d.finish();
    }
    m.finish();
  }
  if (s.has("ddp")) {
    Section d = s.child("ddp");
    if (d.has("cost")) c.ddp_cost = read_cost(d.child("cost"));
    c.ddp = read_ddp_options(d, c.ddp);
    d.finish();
  }
  if (s.has("trials")) {
    Section t = s.child("trials");
    c.episodes = t.integer("episodes", c.episodes);
    c.seed = t.unsigned_integer("seed", c.seed);
    t.finish();
  }
  if (s.has("output")) {
    Section o = s.child("output");
    c.output_dir = o.string("directory", c.output_dir);
    o.finish();
  }
  s.finish();
  return c;
}

namespace detail {

template <int N>
Vec<N> fixed_vector(const std::vector<double>& v, const std::string& key, const Vec<N>& fallback) {
  if (v.empty()) return fallback;
  if (static_cast<int>(v.size()) != N) {
    throw ConfigError(key + ": expected " + std::to_string(N) + " entries, got " +
                      std::to_string(v.size()));
  }
  return Eigen::Map<const Vec<N>>(v.data());
}

template <int N>
Mat<N, N> fixed_matrix(const WeightMatrix& w, const std::string& key, const Mat<N, N>& fallback) {
  if (w.empty()) return fallback;
  if (!w.diagonal.empty()) return fixed_vector<N>(w.diagonal, key, Vec<N>::Zero()).asDiagonal();
  if (static_cast<int>(w.full.size()) != N) {
    throw ConfigError(key + ": expected " + std::to_string(N) + " rows, got " +
                      std::to_string(w.full.size()));
  }
  Mat<N, N> M;
  for (int i = 0; i < N; ++i) {
    M.row(i) = fixed_vector<N>(w.full[i], key + "[" + std::to_string(i) + "]", Vec<N>::Zero())
                   .transpose();
  }
  return M;
}

template <int N>
void require_psd(const Mat<N, N>& M, const std::string& key) {
  if (!M.allFinite()) throw ConfigError(key + ": non-finite entries");
  if (!M.isApprox(M.transpose(), 1e-12) && !(M - M.transpose()).isZero(1e-12)) {
    throw ConfigError(key + ": must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat<N, N>> es(M);
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, M.norm())) {
    throw ConfigError(key + ": must be positive semidefinite");
  }
}

template <DynamicsModel Model>
typename Model::State rest_state() {
  if constexpr (std::is_same_v<Model, MultirotorModel>) {
    return MultirotorModel::hover_state(Vec<3>::Zero());
  } else {
    return Model::State::Zero();
  }
}

template <DynamicsModel Model>
QuadraticCost<Model> build_quadratic_cost(const CostSpec& c, const std::string& key,
                                          const Model& model) {
  constexpr int n = Model::kStateDim, m = Model::kControlDim;
  QuadraticCost<Model> q;
  const Mat<n, n> Q = fixed_matrix<n>(c.Q, key + ".Q", Mat<n, n>::Zero());
  const Mat<n, n> Phi = fixed_matrix<n>(c.Phi, key + ".Phi", Mat<n, n>::Zero());
  q.R = fixed_matrix<m>(c.R, key + ".R", Mat<m, m>::Identity());
  require_psd<n>(Q, key + ".Q");
  require_psd<n>(Phi, key + ".Phi");
  require_psd<m>(q.R, key + ".R");
  if (!(c.q_beta >= 0.0)) throw ConfigError(key + ".q_beta: must be non-negative");
  q.Q.setZero();
  q.Q.template topLeftCorner<n, n>() = Q;
  q.Q(n, n) = c.q_beta;
  q.Phi.setZero();
  q.Phi.template topLeftCorner<n, n>() = Phi;
  q.control_ref = fixed_vector<m>(c.control_ref, key + ".control_ref", model.neutral_control());
  return q;
}

template <DynamicsModel Model>
PathCostParams<Model> build_path_cost(const CostSpec& c, const std::string& key) {
  constexpr int n = Model::kStateDim, m = Model::kControlDim;
  PathCostParams<Model> p;
  p.Q = fixed_matrix<n>(c.Q, key + ".Q", Mat<n, n>::Zero());
  p.R = fixed_matrix<m>(c.R, key + ".R", Mat<m, m>::Zero());
  p.Phi = fixed_matrix<n>(c.Phi, key + ".Phi", Mat<n, n>::Zero());
  require_psd<n>(p.Q, key + ".Q");
  require_psd<m>(p.R, key + ".R");
  require_psd<n>(p.Phi, key + ".Phi");
  if (!(c.q_beta >= 0.0)) throw ConfigError(key + ".q_beta: must be non-negative");
  if (!c.control_ref.empty()) throw ConfigError(key + ".control_ref: not used by sampled costs");
  p.q_beta = c.q_beta;
  return p;
}

template <int M>
SamplerConfig<M> build_sampler(const SamplerSpec& s, const std::string& key, int horizon) {
  SamplerConfig<M> c;
  c.samples = s.samples;
  c.horizon = horizon;
  c.lambda = s.lambda;
  c.alpha = s.alpha;
  c.iterations = s.iterations;
  c.noise_variance = fixed_vector<M>(s.noise_variance, key + ".noise_variance", Vec<M>::Ones());
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
  return c;
}

}  // namespace detail

/// Typed episode configuration for `Model`. Throws ConfigError naming the
/// offending key on any dimension or invariant violation.
template <DynamicsModel Model>
EpisodeConfig<Model> build_episode(const ExperimentConfig& c) {
  using namespace detail;
  constexpr int n = Model::kStateDim, m = Model::kControlDim, D = Model::kPositionDim;
  if (c.model != Model::kName) {
    throw ConfigError("model.kind: config is for '" + c.model + "', not '" + Model::kName + "'");
  }
  EpisodeConfig<Model> e;
  try {
    c.params.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("model: ") + err.what());
  }
  ControlLimits<m> lim = Model::default_limits();
  lim.lower = fixed_vector<m>(c.control_lower, "model.control_lower", lim.lower);
  lim.upper = fixed_vector<m>(c.control_upper, "model.control_upper", lim.upper);
  if (!(lim.lower.array() <= lim.upper.array()).all()) {
    throw ConfigError("model.control_lower: must not exceed model.control_upper");
  }
  e.model = Model(c.params, lim);

  for (std::size_t i = 0; i < c.obstacles.size(); ++i) {
    const std::string key = "obstacles.list[" + std::to_string(i) + "]";
    const auto& o = c.obstacles[i];
    SafetyConstraint<D> sc;
    sc.center = fixed_vector<D>(o.center, key + ".center", Vec<D>::Zero());
    if (o.center.empty()) throw ConfigError(key + ".center: missing");
    sc.radius = o.radius;
    sc.vehicle_radius = c.params.vehicle_radius;
    sc.axis_scales = fixed_vector<D>(o.axis_scales, key + ".axis_scales", Vec<D>::Ones());
    try {
      sc.validate();
    } catch (const ConfigError& err) {
      throw ConfigError(key + ": " + err.what());
    }
    e.field.constraints.push_back(sc);
  }
  if (!c.arena_lower.empty()) {
    e.field.lower = fixed_vector<D>(c.arena_lower, "obstacles.arena_lower", Vec<D>::Zero());
  }
  if (!c.arena_upper.empty()) {
    e.field.upper = fixed_vector<D>(c.arena_upper, "obstacles.arena_upper", Vec<D>::Zero());
  }
  e.barrier = c.barrier;
  try {
    e.barrier.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("barrier: ") + err.what());
  }

  e.controller = parse_controller(c.controller);
  const auto rest = rest_state<Model>();
  e.initial_state = fixed_vector<n>(c.initial_state, "episode.initial_state", rest);
  e.goal_state = fixed_vector<n>(c.goal_state, "episode.goal_state", rest);
  e.start.center = fixed_vector<D>(c.start_center, "episode.start_center", Vec<D>::Zero());
  e.start.half_width =
      fixed_vector<D>(c.start_half_width, "episode.start_half_width", Vec<D>::Zero());
  e.goal.center = fixed_vector<D>(c.goal_center, "episode.goal_center", Vec<D>::Zero());
  e.goal.half_width = fixed_vector<D>(c.goal_half_width, "episode.goal_half_width", Vec<D>::Zero());
  e.problem_horizon = c.problem_horizon;
  e.planning_horizon = c.planning_horizon;
  e.completion_radius = c.completion_radius;
  e.rmse_window = c.rmse_window;

  auto& t = e.tuning;
  t.mppi_cost = build_path_cost<Model>(c.mppi.cost, "mppi.cost");
  t.mppi = build_sampler<m>(c.mppi, "mppi", c.planning_horizon);
  t.scmppi_cost = build_path_cost<Model>(c.scmppi.cost, "scmppi.cost");
  t.scmppi.sampler = build_sampler<m>(c.scmppi, "scmppi", c.planning_horizon);
  if (!(c.nu >= 0.0)) throw ConfigError("scmppi.nu: must be non-negative");
  t.scmppi.nu = c.nu;
  t.scmppi.R_fb = fixed_matrix<m>(c.R_fb, "scmppi.R_fb", Mat<m, m>::Zero());
  require_psd<m>(t.scmppi.R_fb, "scmppi.R_fb");
  t.scmppi.ddp_cost = build_quadratic_cost<Model>(c.scmppi_ddp_cost, "scmppi.ddp.cost", e.model);
  if (c.scmppi_ddp.max_iters < 0) throw ConfigError("scmppi.ddp.max_iters: must be >= 0");
  t.scmppi.ddp = c.scmppi_ddp;
  t.ddp_cost = build_quadratic_cost<Model>(c.ddp_cost, "ddp.cost", e.model);
  if (c.ddp.max_iters < 1) throw ConfigError("ddp.max_iters: must be >= 1");
  t.ddp = c.ddp;
  e.seed = c.seed;
  try {
    e.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("episode: ") + err.what());
  }
  return e;
}

inline void validate_config(const ExperimentConfig& c) {
  if (c.model == DubinsModel::kName) {
    build_episode<DubinsModel>(c);
  } else if (c.model == MultirotorModel::kName) {
    build_episode<MultirotorModel>(c);
  } else {
    throw ConfigError("model.kind: expected 'dubins' or 'multirotor', got '" + c.model + "'");
  }
  if (c.episodes < 1) throw ConfigError("trials.episodes: must be >= 1");
}

/// Calls `f(episode_config)` with the typed configuration of `c`.
template <class F>
decltype(auto) with_model(const ExperimentConfig& c, F&& f) {
  if (c.model == MultirotorModel::kName) return f(build_episode<MultirotorModel>(c));
  return f(build_episode<DubinsModel>(c));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace safe_mpc
