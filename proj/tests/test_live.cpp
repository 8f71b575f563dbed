// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "shapectl/errors.hpp"
#include "shapectl/live_server.hpp"

using namespace shapectl;
using json = nlohmann::json;

namespace {

LiveConfig phy_config() {
  LiveConfig c;
  c.kind = ControllerKind::phy;
  return c;
}

ClientInput obstacle_input(double x, double y, double r) {
  ClientInput in;
  in.kind = InputKind::obstacle_update;
  in.obstacle = Obstacle{{x, y}, r, 3.0 * r};
  return in;
}

ClientInput control(SessionAction a) {
  ClientInput in;
  in.kind = InputKind::session_control;
  in.action = a;
  return in;
}

std::set<std::string> keys(const json& j) {
  std::set<std::string> k;
  for (const auto& [key, v] : j.items()) k.insert(key);
  return k;
}

std::set<std::string> as_set(const json& arr) { return {arr.begin(), arr.end()}; }

json schema() {
  std::ifstream in(SHAPECTL_SOURCE_DIR "/docs/wire-schema.json");
  return json::parse(in);
}

}  // namespace

TEST(WireProtocol, ParsesEveryClientKind) {
  const PlanConfig plan;
  const ClientInput o =
      parse_client_message(R"({"kind":"obstacle_update","seq":3,"t":12.5,"payload":{"x":40,"y":200,"radius":12}})", plan);
  EXPECT_EQ(o.kind, InputKind::obstacle_update);
  ASSERT_TRUE(o.obstacle.has_value());
  EXPECT_EQ(o.obstacle->radius, 12.0);
  EXPECT_EQ(o.obstacle->influence, 36.0);
  EXPECT_EQ(*o.client_t, 12.5);
  EXPECT_FALSE(parse_client_message(R"({"kind":"obstacle_update","payload":{"present":false}})", plan)
                   .obstacle.has_value());
  EXPECT_EQ(parse_client_message(R"({"kind":"target_update","payload":{"x":5,"y":480}})", plan).tip.y(), 480.0);
  EXPECT_EQ(parse_client_message(R"({"kind":"session_control","payload":{"action":"reset"}})", plan).action,
            SessionAction::reset);
}

TEST(WireProtocol, RejectsMalformedMessages) {
  const PlanConfig plan;
  for (const char* bad : {
           "not json",
           "[1,2]",
           R"({"payload":{}})",
           R"({"kind":"teleport","payload":{}})",
           R"({"kind":"target_update","payload":{"x":1}})",
           R"({"kind":"target_update","payload":{"x":1,"y":2,"z":3}})",
           R"({"kind":"obstacle_update","payload":{"x":1,"y":2,"radius":-1}})",
           R"({"kind":"obstacle_update","payload":{"present":true}})",
           R"({"kind":"session_control","payload":{"action":"jump"}})",
           R"({"kind":"session_control","seq":1.5,"payload":{"action":"start"}})",
           R"({"kind":"session_control","extra":1,"payload":{"action":"start"}})",
       })
    EXPECT_THROW(parse_client_message(bad, plan), ProtocolError) << bad;
}

TEST(WireProtocol, EncodeParseRoundTrip) {
  const PlanConfig plan;
  ClientInput o = obstacle_input(-20.0, 310.5, 9.0);
  o.client_t = 1234.0;
  const ClientInput back = parse_client_message(encode_client_message(o, 7), plan);
  EXPECT_EQ(back.obstacle->center, o.obstacle->center);
  EXPECT_EQ(*back.client_t, 1234.0);
  const json env = json::parse(make_envelope("fault", 4, 20.0, fault_payload("protocol", "bad")));
  EXPECT_EQ(env["seq"], 4);
  EXPECT_EQ(env["payload"]["message"], "bad");
}

TEST(WireProtocol, MessagesMatchPublishedSchema) {
  const json s = schema();
  ASSERT_EQ(s["schema_version"], kWireSchemaVersion);
  LiveConfig cfg = phy_config();
  cfg.initial_obstacle = Obstacle{{60.0, 250.0}, 15.0, 45.0};
  LiveSession session(cfg, nullptr);
  const auto t = session.tick();
  const json state = json::parse(make_envelope("state", 0, t.t_ms, t.state_payload));
  EXPECT_EQ(keys(state), as_set(s["envelope"]));
  EXPECT_EQ(keys(state["payload"]), as_set(s["server"]["state"]));
  EXPECT_EQ(keys(json::parse(session.hello_payload())), as_set(s["server"]["hello"]));
  EXPECT_EQ(keys(json::parse(fault_payload("a", "b"))), as_set(s["server"]["fault"]));
  EXPECT_EQ(state["payload"]["nodes"].size(), 5u);
  EXPECT_EQ(state["payload"]["beta"][0].size(), 3u);
  for (const auto& [kind, variants] : s["client"].items())
    for (const auto& fields : variants) {
      json payload = json::object();
      for (const auto& f : fields) payload[f.get<std::string>()] = f == "present" ? json(false) : json(1.0);
      if (kind == "session_control") payload["action"] = "start";
      EXPECT_NO_THROW(parse_client_message(json{{"kind", kind}, {"payload", payload}}.dump(), PlanConfig{}))
          << kind;
    }
}

TEST(LiveSession, BroadcastIsDecimated) {
  LiveSession session(phy_config(), nullptr);
  int n = 0;
  for (int k = 0; k < 50; ++k) n += session.tick().broadcast;
  EXPECT_EQ(n, 30);
}

TEST(LiveSession, NoInputMatchesHeadlessStaticRun) {
  LiveConfig cfg = phy_config();
  const Obstacle ob{{70.0, 220.0}, 15.0, 45.0};
  cfg.initial_obstacle = ob;
  LiveSession session(cfg, nullptr);
  std::vector<ObstacleSample> trace;
  for (int k = 0; k < 80; ++k) trace.push_back({k / cfg.tick_hz, ob.center, ob.radius});
  ShapeController phy(ControllerKind::phy, cfg.geo, cfg.controller);
  const AvoidanceLog log = avoidance_session(phy, trace, cfg.plan, cfg.profile, cfg.geo, cfg.avoid);
  for (int k = 0; k < 80; ++k) {
    const auto t = session.tick();
    ASSERT_TRUE(t.stepped);
    ASSERT_EQ(t.frame.q, log.frames[k].q) << "tick " << k;
    ASSERT_EQ(t.frame.tip_error, log.frames[k].tip_error);
  }
}

TEST(LiveSession, TraceInputsMatchHeadlessSession) {
  LiveConfig cfg = phy_config();
  auto trace = scripted_sweep(cfg.plan);
  trace.resize(200);
  ShapeController phy(ControllerKind::phy, cfg.geo, cfg.controller);
  const AvoidanceLog log = avoidance_session(phy, trace, cfg.plan, cfg.profile, cfg.geo, cfg.avoid);
  LiveSession session(cfg, nullptr);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    ClientInput in;
    in.kind = InputKind::obstacle_update;
    in.obstacle = obstacle_at(trace[k], cfg.plan);
    session.submit(in);
    const auto t = session.tick();
    ASSERT_EQ(t.frame.q, log.frames[k].q) << "tick " << k;
    ASSERT_EQ(t.frame.infeasible, log.frames[k].infeasible);
  }
}

TEST(LiveSession, ResetAndPause) {
  LiveSession session(phy_config(), nullptr);
  session.submit(obstacle_input(30.0, 200.0, 15.0));
  for (int k = 0; k < 25; ++k) session.tick();
  EXPECT_EQ(session.step(), 25);
  session.submit(control(SessionAction::reset));
  const auto r = session.tick();
  EXPECT_TRUE(r.broadcast);
  EXPECT_FALSE(r.stepped);
  const json p = json::parse(r.state_payload);
  EXPECT_EQ(p["step"], 0);
  for (const auto& q : p["q"]) EXPECT_EQ(q.get<double>(), session.config().plan.q_nominal);

  session.submit(control(SessionAction::pause));
  const long before = session.step();
  for (int k = 0; k < 5; ++k) EXPECT_FALSE(session.tick().stepped);
  EXPECT_EQ(session.step(), before);
  session.submit(control(SessionAction::start));
  EXPECT_TRUE(session.tick().stepped);
}

TEST(LiveSession, ObstacleUpdatesAreLastWriterWins) {
  LiveSession a(phy_config(), nullptr), b(phy_config(), nullptr);
  a.submit(obstacle_input(200.0, 100.0, 10.0));
  a.submit(obstacle_input(40.0, 250.0, 15.0));
  b.submit(obstacle_input(40.0, 250.0, 15.0));
  const auto ta = a.tick(), tb = b.tick();
  EXPECT_EQ(ta.applied.size(), 2u);
  EXPECT_EQ(ta.state_payload, tb.state_payload);
}

TEST(LiveSession, RecordingReplaysExactly) {
  std::stringstream rec;
  {
    LiveSession session(phy_config(), nullptr);
    SessionRecorder recorder(rec);
    long seq = 0;
    for (int k = 0; k < 120; ++k) {
      if (k % 7 == 3) session.submit(obstacle_input(20.0 + k, 150.0 + 2.0 * k, 15.0));
      if (k == 60) session.submit(control(SessionAction::pause));
      if (k == 70) session.submit(control(SessionAction::start));
      if (k == 90) session.submit(control(SessionAction::reset));
      const auto t = session.tick();
      recorder.record(t, seq);
      if (t.broadcast) ++seq;
    }
  }
  const std::string text = rec.str();
  {
    std::istringstream in(text);
    LiveSession fresh(phy_config(), nullptr);
    const ReplayResult r = replay_recording(in, fresh);
    EXPECT_EQ(r.ticks, 120);
    EXPECT_GT(r.states_compared, 60);
    EXPECT_EQ(r.first_mismatch, -1);
  }
  {
    // A different disturbance seed diverges.
    LiveConfig other = phy_config();
    other.profile.seed += 1;
    std::istringstream in(text);
    LiveSession fresh(other, nullptr);
    EXPECT_GE(replay_recording(in, fresh).first_mismatch, 0);
  }
}

TEST(LiveSession, NeuralKindNeedsModel) {
  EXPECT_THROW(LiveSession(LiveConfig{}, nullptr), ConfigError);
}

TEST(LiveServer, WebSocketRoundTrip) {
  namespace net = boost::asio;
  namespace beast = boost::beast;
  LiveSession session(phy_config(), nullptr);
  ServeOptions opt;
  opt.port = 0;
  opt.max_ticks = 100;
  LiveServer server(session, opt);
  std::thread host([&] { server.run(); });

  net::io_context ioc;
  beast::websocket::stream<net::ip::tcp::socket> ws(ioc);
  net::ip::tcp::resolver resolver(ioc);
  net::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(server.port())));
  ws.handshake("127.0.0.1", "/");
  auto next = [&] {
    beast::flat_buffer b;
    ws.read(b);
    return json::parse(beast::buffers_to_string(b.data()));
  };
  const json hello = next();
  EXPECT_EQ(hello["kind"], "hello");
  EXPECT_EQ(hello["payload"]["schema_version"], kWireSchemaVersion);
  long last_seq = hello["seq"];

  ws.text(true);
  ws.write(net::buffer(std::string("{bogus")));
  ws.write(net::buffer(encode_client_message(obstacle_input(40.0, 250.0, 15.0), 0)));
  bool fault = false, saw_obstacle = false, saw_reset = false;
  int states = 0;
  while (states < 40) {
    const json m = next();
    EXPECT_GT(m["seq"].get<long>(), last_seq);
    last_seq = m["seq"];
    if (m["kind"] == "fault") {
      fault = true;
      continue;
    }
    ASSERT_EQ(m["kind"], "state");
    ++states;
    if (!m["payload"]["obstacle"].is_null()) saw_obstacle = true;
    if (states == 10) ws.write(net::buffer(encode_client_message(control(SessionAction::reset), 1)));
    if (states > 10 && m["payload"]["step"] == 0) saw_reset = true;
  }
  EXPECT_TRUE(fault);
  EXPECT_TRUE(saw_obstacle);
  EXPECT_TRUE(saw_reset);
  beast::error_code ec;
  ws.close(beast::websocket::close_code::normal, ec);
  host.join();
  EXPECT_EQ(server.ticks(), 100);
}
