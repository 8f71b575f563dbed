// SPDX-License-Identifier: Apache-2.0
//
// Live avoidance session: a fixed-rate tick loop around the avoidance runner
// that takes operator inputs through a mailbox and emits JSON state messages.
// Networking lives in live_server.hpp; everything here is transport-free and
// deterministic in (seed, tick-aligned inputs).
#pragma once

#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "shapectl/planner.hpp"

namespace shapectl {

inline constexpr int kWireSchemaVersion = 1;

struct LiveConfig {
  RobotGeometry geo = RobotGeometry::make_default();
  DisturbanceProfile profile = DisturbanceProfile::full();
  PlanConfig plan;
  ControllerConfig controller;
  AvoidanceConfig avoid;
  ControllerKind kind = ControllerKind::hybrid;
  double tick_hz = 50.0;
  double broadcast_hz = 30.0;
  std::optional<Obstacle> initial_obstacle;
  bool autostart = true;

  void validate() const;
};

enum class InputKind { obstacle_update, target_update, session_control };
enum class SessionAction { start, pause, reset };

struct ClientInput {
  InputKind kind = InputKind::session_control;
  std::optional<Obstacle> obstacle;  // obstacle_update; nullopt removes it
  Eigen::Vector2d tip = Eigen::Vector2d::Zero();  // target_update
  SessionAction action = SessionAction::start;    // session_control
  std::optional<double> client_t;                 // sender timestamp (ms)
};

/// Parses one client text frame. Throws ProtocolError on malformed JSON, an
/// unknown kind, missing or unknown payload fields, or invalid values.
ClientInput parse_client_message(const std::string& text, const PlanConfig& plan);
std::string encode_client_message(const ClientInput& in, long seq);

/// Wraps a payload (JSON text) in the common envelope.
std::string make_envelope(const std::string& kind, long seq, double t_ms,
                          const std::string& payload_json);
std::string fault_payload(const std::string& code, const std::string& message);

class LiveSession {
 public:
  LiveSession(LiveConfig cfg, std::shared_ptr<const DisplacementModel> model);

  /// Thread-safe; drained at the start of the next tick.
  void submit(ClientInput in);

  struct Tick {
    long index = 0;         // tick counter since construction
    double t_ms = 0.0;      // simulation clock
    bool broadcast = false;  // decimated to broadcast_hz; always set after a reset
    std::string state_payload;
    std::vector<ClientInput> applied;  // inputs drained this tick, in arrival order
    AvoidanceFrame frame;   // valid when `stepped`
    bool stepped = false;
  };
  Tick tick();

  std::string hello_payload() const;
  long step() const { return step_; }
  bool running() const { return running_; }
  const LiveConfig& config() const { return cfg_; }
  const AvoidanceRunner& runner() const { return *runner_; }

 private:
  std::string state_payload(const std::optional<AvoidanceFrame>& frame) const;

  LiveConfig cfg_;
  std::shared_ptr<const DisplacementModel> model_;
  std::unique_ptr<ShapeController> controller_;
  std::unique_ptr<AvoidanceRunner> runner_;
  std::optional<Obstacle> obstacle_;
  bool running_;
  long step_ = 0;
  long tick_ = 0;
  std::optional<double> last_client_t_;
  std::mutex mailbox_mutex_;
  std::vector<ClientInput> mailbox_;
};

/// Newline-delimited session recording: a header line, then one line per
/// applied input ("in") and per broadcast state ("out"), tagged with the tick.
class SessionRecorder {
 public:
  explicit SessionRecorder(std::ostream& out);
  void record(const LiveSession::Tick& tick, long state_seq);

 private:
  std::ostream& out_;
};

struct ReplayResult {
  long ticks = 0;
  long states_compared = 0;
  long first_mismatch = -1;  // tick index, -1 when identical
};

/// Feeds the recorded inputs into `session` at their recorded ticks and
/// compares every broadcast state against the recording.
ReplayResult replay_recording(std::istream& in, LiveSession& session);

}  // namespace shapectl
