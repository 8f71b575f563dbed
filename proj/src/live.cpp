// SPDX-License-Identifier: Apache-2.0
#include "shapectl/live.hpp"

#include <cmath>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

using json = nlohmann::json;

double number_field(const json& payload, const char* key) {
  auto it = payload.find(key);
  if (it == payload.end()) throw ProtocolError(std::string("payload is missing '") + key + "'");
  if (!it->is_number()) throw ProtocolError(std::string("'") + key + "' must be a number");
  const double v = it->get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string("'") + key + "' must be finite");
  return v;
}

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const char* what) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : obj.items())
    if (!ok.count(k)) throw ProtocolError(std::string("unknown field '") + k + "' in " + what);
}

const char* action_name(SessionAction a) {
  switch (a) {
    case SessionAction::start: return "start";
    case SessionAction::pause: return "pause";
    case SessionAction::reset: return "reset";
  }
  return "?";
}

json vec2(double x, double y) { return json::array({x, y}); }

json obstacle_json(const std::optional<Obstacle>& o) {
  if (!o) return nullptr;
  return {{"x", o->center.x()}, {"y", o->center.y()}, {"radius", o->radius},
          {"influence", o->influence}};
}

bool broadcast_tick(long k, double tick_hz, double broadcast_hz) {
  if (k == 0) return true;
  const double r = broadcast_hz / tick_hz;
  return std::floor(static_cast<double>(k) * r) != std::floor(static_cast<double>(k - 1) * r);
}

}  // namespace

void LiveConfig::validate() const {
  geo.validate();
  profile.validate();
  plan.validate();
  controller.validate();
  if (initial_obstacle) initial_obstacle->validate();
  if (!(tick_hz > 0.0) || !(broadcast_hz > 0.0) || broadcast_hz > tick_hz)
    throw InvalidInput("live session needs 0 < broadcast_hz <= tick_hz");
}

ClientInput parse_client_message(const std::string& text, const PlanConfig& plan) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error&) {
    throw ProtocolError("message is not valid JSON");
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  only_keys(j, {"kind", "seq", "t", "payload"}, "envelope");
  auto kind_it = j.find("kind");
  if (kind_it == j.end() || !kind_it->is_string()) throw ProtocolError("message needs a string 'kind'");
  if (j.contains("seq") && !j["seq"].is_number_integer()) throw ProtocolError("'seq' must be an integer");
  ClientInput in;
  if (j.contains("t")) {
    if (!j["t"].is_number()) throw ProtocolError("'t' must be a number");
    in.client_t = j["t"].get<double>();
  }
  auto p_it = j.find("payload");
  if (p_it == j.end() || !p_it->is_object()) throw ProtocolError("message needs an object 'payload'");
  const json& p = *p_it;
  const std::string kind = kind_it->get<std::string>();
  if (kind == "obstacle_update") {
    in.kind = InputKind::obstacle_update;
    if (p.contains("present")) {
      only_keys(p, {"present"}, "obstacle_update");
      if (!p["present"].is_boolean() || p["present"].get<bool>())
        throw ProtocolError("'present' may only be false; send x, y, radius to place the obstacle");
      in.obstacle.reset();
    } else {
      only_keys(p, {"x", "y", "radius"}, "obstacle_update");
      const double r = number_field(p, "radius");
      if (!(r > 0.0)) throw ProtocolError("'radius' must be positive");
      in.obstacle = Obstacle{{number_field(p, "x"), number_field(p, "y")}, r, plan.influence_factor * r};
    }
  } else if (kind == "target_update") {
    in.kind = InputKind::target_update;
    only_keys(p, {"x", "y"}, "target_update");
    in.tip = {number_field(p, "x"), number_field(p, "y")};
  } else if (kind == "session_control") {
    in.kind = InputKind::session_control;
    only_keys(p, {"action"}, "session_control");
    if (!p.contains("action") || !p["action"].is_string())
      throw ProtocolError("session_control needs a string 'action'");
    const std::string a = p["action"].get<std::string>();
    if (a == "start") in.action = SessionAction::start;
    else if (a == "pause") in.action = SessionAction::pause;
    else if (a == "reset") in.action = SessionAction::reset;
    else throw ProtocolError("unknown session_control action '" + a + "'");
  } else {
    throw ProtocolError("unknown message kind '" + kind + "'");
  }
  return in;
}

std::string encode_client_message(const ClientInput& in, long seq) {
  json j{{"seq", seq}};
  if (in.client_t) j["t"] = *in.client_t;
  switch (in.kind) {
    case InputKind::obstacle_update:
      j["kind"] = "obstacle_update";
      if (in.obstacle)
        j["payload"] = {{"x", in.obstacle->center.x()}, {"y", in.obstacle->center.y()},
                        {"radius", in.obstacle->radius}};
      else
        j["payload"] = {{"present", false}};
      break;
    case InputKind::target_update:
      j["kind"] = "target_update";
      j["payload"] = {{"x", in.tip.x()}, {"y", in.tip.y()}};
      break;
    case InputKind::session_control:
      j["kind"] = "session_control";
      j["payload"] = {{"action", action_name(in.action)}};
      break;
  }
  return j.dump();
}

std::string make_envelope(const std::string& kind, long seq, double t_ms,
                          const std::string& payload_json) {
  return "{\"kind\":" + json(kind).dump() + ",\"payload\":" + payload_json +
             ",\"seq\":" + std::to_string(seq) + ",\"t\":" + json(t_ms).dump() + "}";
}

std::string fault_payload(const std::string& code, const std::string& message) {
  return json{{"code", code}, {"message", message}}.dump();
}

LiveSession::LiveSession(LiveConfig cfg, std::shared_ptr<const DisplacementModel> model)
    : cfg_(std::move(cfg)), model_(std::move(model)) {
  cfg_.validate();
  if (cfg_.kind != ControllerKind::phy && !model_)
    throw ConfigError("live session: neural controllers need a trained checkpoint");
  controller_ = std::make_unique<ShapeController>(
      cfg_.kind, cfg_.geo, cfg_.controller, cfg_.kind == ControllerKind::phy ? nullptr : model_);
  runner_ = std::make_unique<AvoidanceRunner>(*controller_, cfg_.plan, cfg_.profile, cfg_.geo,
                                              cfg_.avoid);
  obstacle_ = cfg_.initial_obstacle;
  running_ = cfg_.autostart;
}

void LiveSession::submit(ClientInput in) {
  std::lock_guard<std::mutex> lock(mailbox_mutex_);
  mailbox_.push_back(std::move(in));
}

LiveSession::Tick LiveSession::tick() {
  Tick out;
  out.index = tick_;
  out.t_ms = 1000.0 * static_cast<double>(tick_) / cfg_.tick_hz;
  {
    std::lock_guard<std::mutex> lock(mailbox_mutex_);
    out.applied.swap(mailbox_);
  }
  bool reset = false;
  for (const auto& in : out.applied) {
    if (in.client_t) last_client_t_ = in.client_t;
    switch (in.kind) {
      case InputKind::obstacle_update: obstacle_ = in.obstacle; break;
      case InputKind::target_update: runner_->set_tip_target(in.tip); break;
      case InputKind::session_control:
        if (in.action == SessionAction::start) running_ = true;
        if (in.action == SessionAction::pause) running_ = false;
        if (in.action == SessionAction::reset) {
          runner_->set_tip_target(cfg_.plan.tip_target);
          runner_->reset();
          step_ = 0;
          reset = true;
        }
        break;
    }
  }
  std::optional<AvoidanceFrame> frame;
  if (running_ && !reset) {
    frame = runner_->step(static_cast<double>(step_) / cfg_.tick_hz, obstacle_);
    ++step_;
    out.frame = *frame;
    out.stepped = true;
  }
  out.broadcast = reset || broadcast_tick(tick_, cfg_.tick_hz, cfg_.broadcast_hz);
  out.state_payload = state_payload(frame);
  ++tick_;
  return out;
}

std::string LiveSession::state_payload(const std::optional<AvoidanceFrame>& frame) const {
  const PlantState& plant = runner_->plant();
  const int n = cfg_.geo.n_segments;
  json nodes = json::array(), target = json::array(), beta = json::array();
  for (const auto& p : plant.shape.global) nodes.push_back(json::array({p.x, p.y, p.theta}));
  for (const auto& p : runner_->plan().shape.global) target.push_back(vec2(p.x, p.y));
  for (int i = 0; i < n; ++i) {
    if (frame && frame->beta.cols() == n)
      beta.push_back(json::array({frame->beta(0, i), frame->beta(1, i), frame->beta(2, i)}));
    else
      beta.push_back(json::array({1.0, 1.0, 1.0}));
  }
  const Eigen::Vector2d tip_target = runner_->plan_config().tip_target;
  const auto& tip = plant.shape.tip();
  json clearance = nullptr;
  if (obstacle_) clearance = min_clearance(plant.q_effective, *obstacle_, cfg_.geo);
  return json{{"step", step_},
              {"running", running_},
              {"nodes", nodes},
              {"target_nodes", target},
              {"tip", vec2(tip.x, tip.y)},
              {"tip_target", vec2(tip_target.x(), tip_target.y())},
              {"tip_error", std::hypot(tip.x - tip_target.x(), tip.y - tip_target.y())},
              {"beta", beta},
              {"min_clearance", clearance},
              {"obstacle", obstacle_json(obstacle_)},
              {"infeasible", frame ? frame->infeasible : false},
              {"q", std::vector<double>(plant.q.data(), plant.q.data() + plant.q.size())},
              {"ack_client_t", last_client_t_ ? json(*last_client_t_) : json(nullptr)}}
      .dump();
}

std::string LiveSession::hello_payload() const {
  const Eigen::Vector2d tip = cfg_.plan.tip_target;
  return json{{"schema_version", kWireSchemaVersion},
              {"n_segments", cfg_.geo.n_segments},
              {"tick_hz", cfg_.tick_hz},
              {"broadcast_hz", cfg_.broadcast_hz},
              {"controller", to_string(cfg_.kind)},
              {"tip_target", vec2(tip.x(), tip.y())},
              {"q_nominal", cfg_.plan.q_nominal},
              {"kinds", {"hello", "state", "obstacle_update", "target_update", "session_control", "fault"}}}
      .dump();
}

SessionRecorder::SessionRecorder(std::ostream& out) : out_(out) {
  out_ << json{{"recording", "shapectl-session"}, {"schema_version", kWireSchemaVersion}}.dump()
       << '\n';
}

void SessionRecorder::record(const LiveSession::Tick& tick, long state_seq) {
  long seq = 0;
  for (const auto& in : tick.applied)
    out_ << json{{"tick", tick.index}, {"dir", "in"},
                 {"msg", json::parse(encode_client_message(in, seq++))}}.dump()
         << '\n';
  if (tick.broadcast)
    out_ << json{{"tick", tick.index}, {"dir", "out"},
                 {"msg", json::parse(make_envelope("state", state_seq, tick.t_ms, tick.state_payload))}}
                .dump()
         << '\n';
  out_.flush();
}

ReplayResult replay_recording(std::istream& in, LiveSession& session) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("recording is empty");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error&) {
    throw ConfigError("recording header is not JSON");
  }
  if (header.value("schema_version", -1) != kWireSchemaVersion)
    throw ConfigError("recording has an unsupported schema version");

  std::map<long, std::vector<std::string>> inputs;
  std::map<long, json> outputs;
  long last = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::parse_error&) {
      throw ConfigError("recording line is not JSON");
    }
    const long t = r.at("tick").get<long>();
    last = std::max(last, t);
    if (r.at("dir") == "in")
      inputs[t].push_back(r.at("msg").dump());
    else
      outputs[t] = r.at("msg");
  }

  ReplayResult res;
  long seq = 0;
  for (long k = 0; k <= last; ++k) {
    if (auto it = inputs.find(k); it != inputs.end())
      for (const auto& text : it->second)
        session.submit(parse_client_message(text, session.runner().plan_config()));
    const LiveSession::Tick t = session.tick();
    ++res.ticks;
    const auto rec = outputs.find(k);
    if (t.broadcast != (rec != outputs.end())) {
      if (res.first_mismatch < 0) res.first_mismatch = k;
      continue;
    }
    if (!t.broadcast) continue;
    ++res.states_compared;
    if (json::parse(make_envelope("state", seq++, t.t_ms, t.state_payload)) != rec->second &&
        res.first_mismatch < 0)
      res.first_mismatch = k;
  }
  return res;
}

}  // namespace shapectl
