// SPDX-License-Identifier: Apache-2.0
#include "shapectl/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

using json = nlohmann::json;

// Reads fields out of one JSON object and remembers which keys were consumed,
// so anything left over can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  void num(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void integer(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void u64(const char* key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
        fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void boolean(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "true or false");
      out = v->get<bool>();
    }
  }
  void str(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void nums(const char* key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      std::vector<double> r;
      for (const auto& e : *v) {
        if (!e.is_number()) fail(key, "an array of numbers");
        r.push_back(e.get<double>());
      }
      out = std::move(r);
    }
  }
  void u64s(const char* key, std::vector<std::uint64_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of non-negative integers");
      std::vector<std::uint64_t> r;
      for (const auto& e : *v) {
        if (!e.is_number_unsigned()) fail(key, "an array of non-negative integers");
        r.push_back(e.get<std::uint64_t>());
      }
      out = std::move(r);
    }
  }
  void vec2(const char* key, Eigen::Vector2d& out) {
    std::vector<double> v{out.x(), out.y()};
    nums(key, v);
    if (v.size() != 2) fail(key, "a two-element array");
    out = {v[0], v[1]};
  }
  Section child(const char* key) {
    static const json empty = json::object();
    const json* v = find(key);
    return Section(v ? *v : empty, where() + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + where() + k + "'");
  }

 private:
  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError("config key '" + where() + key + "' must be " + expected);
  }
  std::string where() const { return path_.empty() ? "" : path_ + "."; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json geometry_json(const RobotGeometry& g) {
  return {{"n_segments", g.n_segments},          {"width", g.width},
          {"q_min", g.q_min},                    {"q_max", g.q_max},
          {"bound_min", g.bound_min.coeffs},     {"bound_max", g.bound_max.coeffs}};
}

json disturbance_json(const DisturbanceProfile& p) {
  return {{"coupling_gain", p.coupling_gain},
          {"coupling_stiffening", p.coupling_stiffening},
          {"friction_scale", p.friction_scale},
          {"hysteresis_decay", p.hysteresis_decay},
          {"neutral_width", p.neutral_width},
          {"noise_std", p.noise_std},
          {"seed", p.seed}};
}

json loss_json(const LossWeights& w) {
  return {{"w_x", w.w_x},           {"w_y", w.w_y},         {"w_theta", w.w_theta},
          {"lambda_local", w.lambda_local}, {"delta_xy", w.delta_xy}, {"delta_theta", w.delta_theta}};
}

json datagen_json(const DataSection& d) {
  const DataGenConfig& g = d.gen;
  return {{"n_samples", d.n_samples},
          {"frac_near_bound", g.frac_near_bound},
          {"frac_near_neutral", g.frac_near_neutral},
          {"episode_length", g.episode_length},
          {"command_std", g.command_std},
          {"dq_max", g.dq_max},
          {"anchor_pull", g.anchor_pull},
          {"sparse_fraction", g.sparse_fraction},
          {"length_min", g.length_min},
          {"length_max", g.length_max}};
}

json network_json(const NetworkDims& n) {
  return {{"expert_width", n.expert_width}, {"gru_width", n.gru_width}, {"head_width", n.head_width}};
}

json training_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"learning_rate_min", t.learning_rate_min},
          {"clip_norm", t.clip_norm},
          {"val_fraction", t.val_fraction},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"seed", t.seed}};
}

json to_json(const AppConfig& c) {
  const ControllerConfig& k = c.controller;
  const PlanConfig& p = c.planner;
  return {
      {"seed", c.seed},
      {"geometry", geometry_json(c.geometry)},
      {"disturbance", disturbance_json(c.disturbance)},
      {"loss", loss_json(c.loss)},
      {"controller",
       {{"lambda_dls", k.lambda_dls},
        {"perturb_eps", k.perturb_eps},
        {"gauss_sigma", k.gauss_sigma},
        {"w_floor", k.w_floor},
        {"step_gain", k.step_gain},
        {"dq_max", k.dq_max},
        {"dt_delay", k.dt_delay},
        {"control_dt", k.control_dt},
        {"central_differences", k.central_differences}}},
      {"planner",
       {{"k_rep", p.k_rep},
        {"k_rest", p.k_rest},
        {"q_nominal", p.q_nominal},
        {"tip_target", {p.tip_target.x(), p.tip_target.y()}},
        {"tip_tol", p.tip_tol},
        {"iters", p.iters},
        {"influence_factor", p.influence_factor}}},
      {"network", network_json(c.network)},
      {"data", datagen_json(c.data)},
      {"training", training_json(c.training)},
      {"bench",
       {{"seeds", c.bench.seeds},
        {"steps", c.bench.episode.steps},
        {"q_init", c.bench.episode.q_init},
        {"observation_delay", c.bench.episode.observation_delay},
        {"gating_steps_per_leg", c.bench.gating_steps_per_leg}}},
      {"avoid",
       {{"control_cycles_per_frame", c.avoid.session.control_cycles_per_frame},
        {"observation_delay", c.avoid.session.observation_delay},
        {"q_init", c.avoid.session.q_init},
        {"obstacle_radius", c.avoid.obstacle_radius},
        {"frame_dt", c.avoid.frame_dt},
        {"trace", c.avoid.trace}}},
      {"serve",
       {{"port", c.serve.port},
        {"tick_hz", c.serve.tick_hz},
        {"broadcast_hz", c.serve.broadcast_hz},
        {"record", c.serve.record}}},
      {"paths",
       {{"data_dir", c.paths.data_dir},
        {"checkpoint_dir", c.paths.checkpoint_dir},
        {"report_dir", c.paths.report_dir},
        {"checkpoint", c.paths.checkpoint}}},
  };
}

AppConfig from_json(const json& j) {
  AppConfig c;
  Section root(j, "");
  root.u64("seed", c.seed);
  {
    Section s = root.child("geometry");
    RobotGeometry& g = c.geometry;
    s.integer("n_segments", g.n_segments);
    if (g.n_segments >= 1 && static_cast<int>(g.width.size()) != g.n_segments)
      g.width.assign(g.n_segments, g.width.empty() ? 40.0 : g.width.front());
    s.nums("width", g.width);
    s.num("q_min", g.q_min);
    s.num("q_max", g.q_max);
    s.nums("bound_min", g.bound_min.coeffs);
    s.nums("bound_max", g.bound_max.coeffs);
    s.finish();
  }
  {
    Section s = root.child("disturbance");
    DisturbanceProfile& p = c.disturbance;
    s.num("coupling_gain", p.coupling_gain);
    s.num("coupling_stiffening", p.coupling_stiffening);
    s.num("friction_scale", p.friction_scale);
    s.num("hysteresis_decay", p.hysteresis_decay);
    s.num("neutral_width", p.neutral_width);
    s.num("noise_std", p.noise_std);
    s.u64("seed", p.seed);
    s.finish();
  }
  {
    Section s = root.child("loss");
    LossWeights& w = c.loss;
    s.num("w_x", w.w_x);
    s.num("w_y", w.w_y);
    s.num("w_theta", w.w_theta);
    s.num("lambda_local", w.lambda_local);
    s.num("delta_xy", w.delta_xy);
    s.num("delta_theta", w.delta_theta);
    s.finish();
  }
  {
    Section s = root.child("controller");
    ControllerConfig& k = c.controller;
    s.num("lambda_dls", k.lambda_dls);
    s.num("perturb_eps", k.perturb_eps);
    s.num("gauss_sigma", k.gauss_sigma);
    s.num("w_floor", k.w_floor);
    s.num("step_gain", k.step_gain);
    s.num("dq_max", k.dq_max);
    s.num("dt_delay", k.dt_delay);
    s.num("control_dt", k.control_dt);
    s.boolean("central_differences", k.central_differences);
    s.finish();
  }
  {
    Section s = root.child("planner");
    PlanConfig& p = c.planner;
    s.num("k_rep", p.k_rep);
    s.num("k_rest", p.k_rest);
    s.num("q_nominal", p.q_nominal);
    s.vec2("tip_target", p.tip_target);
    s.num("tip_tol", p.tip_tol);
    s.integer("iters", p.iters);
    s.num("influence_factor", p.influence_factor);
    s.finish();
  }
  {
    Section s = root.child("network");
    s.integer("expert_width", c.network.expert_width);
    s.integer("gru_width", c.network.gru_width);
    s.integer("head_width", c.network.head_width);
    s.finish();
  }
  {
    Section s = root.child("data");
    DataGenConfig& g = c.data.gen;
    s.integer("n_samples", c.data.n_samples);
    s.num("frac_near_bound", g.frac_near_bound);
    s.num("frac_near_neutral", g.frac_near_neutral);
    s.integer("episode_length", g.episode_length);
    s.num("command_std", g.command_std);
    s.num("dq_max", g.dq_max);
    s.num("anchor_pull", g.anchor_pull);
    s.num("sparse_fraction", g.sparse_fraction);
    s.num("length_min", g.length_min);
    s.num("length_max", g.length_max);
    s.finish();
  }
  {
    Section s = root.child("training");
    TrainConfig& t = c.training;
    s.integer("epochs", t.epochs);
    s.integer("batch_size", t.batch_size);
    s.num("learning_rate", t.learning_rate);
    s.num("learning_rate_min", t.learning_rate_min);
    s.num("clip_norm", t.clip_norm);
    s.num("val_fraction", t.val_fraction);
    s.num("adam_beta1", t.adam_beta1);
    s.num("adam_beta2", t.adam_beta2);
    s.num("adam_eps", t.adam_eps);
    s.u64("seed", t.seed);
    s.finish();
  }
  {
    Section s = root.child("bench");
    s.u64s("seeds", c.bench.seeds);
    s.integer("steps", c.bench.episode.steps);
    s.num("q_init", c.bench.episode.q_init);
    s.integer("observation_delay", c.bench.episode.observation_delay);
    s.integer("gating_steps_per_leg", c.bench.gating_steps_per_leg);
    s.finish();
  }
  {
    Section s = root.child("avoid");
    s.integer("control_cycles_per_frame", c.avoid.session.control_cycles_per_frame);
    s.integer("observation_delay", c.avoid.session.observation_delay);
    s.num("q_init", c.avoid.session.q_init);
    s.num("obstacle_radius", c.avoid.obstacle_radius);
    s.num("frame_dt", c.avoid.frame_dt);
    s.str("trace", c.avoid.trace);
    s.finish();
  }
  {
    Section s = root.child("serve");
    s.integer("port", c.serve.port);
    s.num("tick_hz", c.serve.tick_hz);
    s.num("broadcast_hz", c.serve.broadcast_hz);
    s.str("record", c.serve.record);
    s.finish();
  }
  {
    Section s = root.child("paths");
    s.str("data_dir", c.paths.data_dir);
    s.str("checkpoint_dir", c.paths.checkpoint_dir);
    s.str("report_dir", c.paths.report_dir);
    s.str("checkpoint", c.paths.checkpoint);
    s.finish();
  }
  root.finish();
  c.network.n_segments = c.geometry.n_segments;
  return c;
}

template <typename F>
void checked(const char* section, F&& f) {
  try {
    f();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace

void AppConfig::validate() const {
  checked("geometry", [&] { geometry.validate(); });
  checked("disturbance", [&] { disturbance.validate(); });
  checked("loss", [&] { loss.validate(); });
  checked("controller", [&] { controller.validate(); });
  checked("planner", [&] { planner.validate(); });
  checked("network", [&] { network.validate(); });
  checked("data", [&] { data.gen.validate(); });
  checked("training", [&] { training.validate(); });
  if (network.n_segments != geometry.n_segments)
    throw ConfigError("network: n_segments does not match geometry");
  if (data.n_samples < 1) throw ConfigError("data: n_samples must be positive");
  if (bench.seeds.empty()) throw ConfigError("bench: seeds must not be empty");
  if (bench.episode.steps < 4) throw ConfigError("bench: steps must be at least 4");
  if (bench.episode.observation_delay < 0 || avoid.session.observation_delay < 0)
    throw ConfigError("observation_delay must be non-negative");
  if (bench.gating_steps_per_leg < 1) throw ConfigError("bench: gating_steps_per_leg must be positive");
  if (avoid.session.control_cycles_per_frame < 1)
    throw ConfigError("avoid: control_cycles_per_frame must be positive");
  if (!(avoid.obstacle_radius > 0.0) || !(avoid.frame_dt > 0.0))
    throw ConfigError("avoid: obstacle_radius and frame_dt must be positive");
  if (serve.port < 0 || serve.port > 65535) throw ConfigError("serve: port out of range");
  if (!(serve.tick_hz > 0.0) || !(serve.broadcast_hz > 0.0) || serve.broadcast_hz > serve.tick_hz)
    throw ConfigError("serve: need 0 < broadcast_hz <= tick_hz");
}

AppConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  AppConfig c = from_json(j);
  c.validate();
  return c;
}

AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string config_to_json(const AppConfig& cfg, int indent) { return to_json(cfg).dump(indent); }

void save_config(const AppConfig& cfg, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << config_to_json(cfg) << '\n';
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t dataset_hash(const AppConfig& cfg) {
  const json j = {{"geometry", geometry_json(cfg.geometry)},
                  {"disturbance", disturbance_json(cfg.disturbance)},
                  {"data", datagen_json(cfg.data)},
                  {"seed", cfg.seed}};
  return fnv1a64(j.dump());
}

std::uint64_t checkpoint_hash(const AppConfig& cfg) {
  const json j = {{"dataset", hex16(dataset_hash(cfg))},
                  {"loss", loss_json(cfg.loss)},
                  {"network", network_json(cfg.network)},
                  {"training", training_json(cfg.training)},
                  {"seed", cfg.seed}};
  return fnv1a64(j.dump());
}

std::string artifact_path(const std::string& dir, const std::string& stem, std::uint64_t hash,
                          std::uint64_t seed, const std::string& ext) {
  return (std::filesystem::path(dir) /
          (stem + "-" + hex16(hash) + "-s" + std::to_string(seed) + ext))
      .string();
}

std::string default_dataset_path(const AppConfig& cfg) {
  return artifact_path(cfg.paths.data_dir, "dataset", dataset_hash(cfg), cfg.seed, ".bin");
}

std::string default_checkpoint_path(const AppConfig& cfg) {
  if (!cfg.paths.checkpoint.empty()) return cfg.paths.checkpoint;
  return artifact_path(cfg.paths.checkpoint_dir, "checkpoint", checkpoint_hash(cfg), cfg.seed,
                       ".json");
}

}  // namespace shapectl
