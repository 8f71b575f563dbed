// SPDX-License-Identifier: Apache-2.0
//
// shapectl: data generation, training, benchmarking, avoidance sessions and
// the live service behind one command line.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime fault.
// Errors are also written to stderr as one JSON object per line.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "shapectl/config.hpp"
#include "shapectl/errors.hpp"
#include "shapectl/live_server.hpp"
#include "shapectl/report.hpp"
#include "shapectl/validate.hpp"

namespace fs = std::filesystem;
using namespace shapectl;

namespace {

struct Globals {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

struct Context {
  AppConfig cfg;
  bool force = false;
};

Context make_context(const Globals& g) {
  Context ctx;
  if (g.config != "default") ctx.cfg = load_config(g.config);
  if (g.seed) ctx.cfg.seed = *g.seed;
  if (!g.out.empty()) {
    const fs::path root(g.out);
    ctx.cfg.paths.data_dir = (root / "data").string();
    ctx.cfg.paths.checkpoint_dir = (root / "checkpoints").string();
    ctx.cfg.paths.report_dir = (root / "reports").string();
  }
  ctx.cfg.validate();
  ctx.force = g.force;
  return ctx;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Run commands offset the disturbance noise seed by the global seed, the
// same convention the benchmark uses per evaluation seed.
DisturbanceProfile run_profile(const AppConfig& cfg) {
  DisturbanceProfile p = cfg.disturbance;
  p.seed += cfg.seed;
  return p;
}

std::uint64_t report_hash(const AppConfig& cfg, const std::string& extra = "") {
  return fnv1a64(config_to_json(cfg, -1) + extra);
}

Dataset ensure_dataset(const Context& ctx, bool announce_reuse) {
  const std::string path = default_dataset_path(ctx.cfg);
  if (!ctx.force && fs::exists(path)) {
    if (announce_reuse) std::cout << "dataset " << path << " (reused)\n";
    return load_dataset(path);
  }
  const auto t0 = std::chrono::steady_clock::now();
  Dataset data = generate_dataset(ctx.cfg.disturbance, ctx.cfg.geometry, ctx.cfg.data.n_samples,
                                  ctx.cfg.seed, ctx.cfg.data.gen);
  ensure_parent(path);
  save_dataset(data, path);
  std::cout << "dataset " << path << " (" << data.samples.size() << " samples, "
            << std::round(seconds_since(t0) * 10.0) / 10.0 << " s)\n";
  return data;
}

std::shared_ptr<const DisplacementModel> load_model(const AppConfig& cfg) {
  const std::string path = default_checkpoint_path(cfg);
  if (!fs::exists(path))
    throw ConfigError("checkpoint not found: " + path + " (run `shapectl train` with the same config and seed)");
  return std::make_shared<NetworkModel>(std::make_shared<const NetworkParams>(load_checkpoint(path)));
}

std::shared_ptr<const DisplacementModel> model_for(ControllerKind kind, const AppConfig& cfg) {
  return kind == ControllerKind::phy ? nullptr : load_model(cfg);
}

int cmd_gen_data(const Context& ctx) {
  ensure_dataset(ctx, true);
  return 0;
}

int cmd_train(const Context& ctx) {
  const AppConfig& cfg = ctx.cfg;
  const std::string path = default_checkpoint_path(cfg);
  if (!ctx.force && fs::exists(path)) {
    std::cout << "checkpoint " << path << " (reused)\n";
    return 0;
  }
  const Dataset data = ensure_dataset(ctx, true);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(data, init_params(cfg.seed, cfg.network), cfg.loss, cfg.training,
                        [&](const EpochLog& e) {
                          std::cout << "epoch " << e.epoch << " train " << e.train_loss << " val "
                                    << e.val_loss << " beta " << e.mean_beta.transpose() << " ("
                                    << static_cast<long>(seconds_since(t0)) << " s)" << std::endl;
                        });
  if (r.diverged) throw NumericFault("training diverged", r.best_epoch);
  ensure_parent(path);
  save_checkpoint(r.params, path);
  write_training_log(r, cfg.training, cfg.loss, fs::path(path).replace_extension(".log").string());
  std::cout << "checkpoint " << path << " (best epoch " << r.best_epoch << ")\n";
  return 0;
}

int cmd_track(const Context& ctx, const std::string& controller, const std::string& difficulty,
              std::optional<std::uint64_t> jitter) {
  const AppConfig& cfg = ctx.cfg;
  const ControllerKind kind = controller_kind_from_string(controller);
  const Difficulty d = difficulty_from_string(difficulty);
  auto model = model_for(kind, cfg);
  const DisturbanceProfile profile = scaled_profile(run_profile(cfg), d);
  const TrackingTarget target = make_target(d, profile, cfg.geometry, jitter.value_or(cfg.seed));
  ShapeController c(kind, cfg.geometry, cfg.controller, model);
  const EpisodeLog log = run_episode(c, target, profile, cfg.geometry, cfg.bench.episode);
  const RunMetrics m = compute_metrics(log);

  const std::string stem = std::string("track-") + to_string(kind) + "-" + to_string(d);
  const std::string path = artifact_path(cfg.paths.report_dir, stem,
                                         report_hash(cfg, stem + std::to_string(jitter.value_or(0))),
                                         cfg.seed, ".csv");
  ensure_parent(path);
  write_episode_csv(log, path);
  std::cout << nlohmann::json{{"controller", to_string(kind)},
                              {"difficulty", to_string(d)},
                              {"e_mean_mm", m.e_mean},
                              {"t95_steps", m.t95},
                              {"chatter_mm", m.chatter},
                              {"cost_mm", m.cost},
                              {"faults", log.faults},
                              {"telemetry", path}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_bench(const Context& ctx) {
  const AppConfig& cfg = ctx.cfg;
  BenchmarkConfig bc;
  bc.seeds = cfg.bench.seeds;
  bc.episode = cfg.bench.episode;
  auto model = load_model(cfg);
  const std::string dir = artifact_path(cfg.paths.report_dir, "bench", report_hash(cfg), cfg.seed, "");
  const auto t0 = std::chrono::steady_clock::now();
  const BenchmarkReport report = run_benchmark(model, cfg.disturbance, cfg.geometry, cfg.controller, bc);
  fs::create_directories(dir);
  write_benchmark_csv(report, (fs::path(dir) / "metrics.csv").string());
  const std::string summary = benchmark_summary(report);
  std::ofstream((fs::path(dir) / "summary.txt").string()) << summary;
  write_benchmark_plots(report, dir);
  std::cout << summary << "report " << dir << " (" << std::round(seconds_since(t0) * 10.0) / 10.0
            << " s)\n";
  return 0;
}

int cmd_avoid(const Context& ctx, const std::string& controller, std::string trace_path) {
  const AppConfig& cfg = ctx.cfg;
  const ControllerKind kind = controller_kind_from_string(controller);
  auto model = model_for(kind, cfg);
  if (trace_path.empty()) trace_path = cfg.avoid.trace;
  const std::vector<ObstacleSample> trace =
      trace_path.empty() ? scripted_sweep(cfg.planner, cfg.avoid.frame_dt, cfg.avoid.obstacle_radius)
                         : load_obstacle_trace(trace_path);
  ShapeController c(kind, cfg.geometry, cfg.controller, model);
  const auto t0 = std::chrono::steady_clock::now();
  const AvoidanceLog log =
      avoidance_session(c, trace, cfg.planner, run_profile(cfg), cfg.geometry, cfg.avoid.session);

  const std::string stem = std::string("avoid-") + to_string(kind);
  const std::string path =
      artifact_path(cfg.paths.report_dir, stem, report_hash(cfg, stem + trace_path), cfg.seed, ".csv");
  ensure_parent(path);
  write_avoidance_csv(log, path);
  save_obstacle_trace(trace, fs::path(path).replace_extension(".trace.csv").string());
  std::cout << nlohmann::json{{"controller", to_string(kind)},
                              {"frames", log.frames.size()},
                              {"min_clearance_mm", log.min_clearance()},
                              {"mean_tip_error_mm", log.mean_tip_error()},
                              {"final_tip_error_mm", log.final_tip_error()},
                              {"infeasible_frames", log.infeasible_frames},
                              {"seconds", seconds_since(t0)},
                              {"log", path}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_gates(const Context& ctx) {
  const AppConfig& cfg = ctx.cfg;
  auto model = load_model(cfg);
  const std::string dir = artifact_path(cfg.paths.report_dir, "gates", report_hash(cfg), cfg.seed, "");
  fs::create_directories(dir);
  int lower = 0;
  for (std::uint64_t s : cfg.bench.seeds) {
    DisturbanceProfile profile = cfg.disturbance;
    profile.seed += s;
    const auto legs = gating_schedule(profile, cfg.geometry, s, cfg.bench.gating_steps_per_leg);
    ShapeController c(ControllerKind::hybrid, cfg.geometry, cfg.controller, model);
    const EpisodeLog log = run_schedule(c, legs, profile, cfg.geometry, cfg.bench.episode);
    const GatePhaseStats st = gate_phase_stats(log, cfg.geometry, profile.neutral_width);
    export_gate_heatmap(log.beta, (fs::path(dir) / ("seed" + std::to_string(s))).string());
    const bool ok = st.neutral_beta < st.smooth_beta;
    lower += ok ? 1 : 0;
    std::cout << nlohmann::json{{"seed", s},
                                {"neutral_beta", st.neutral_beta},
                                {"smooth_beta", st.smooth_beta},
                                {"neutral_cells", st.neutral_cells},
                                {"smooth_cells", st.smooth_cells},
                                {"neutral_lower", ok}}
                     .dump()
              << "\n";
  }
  std::cout << "neutral gate below smooth gate in " << lower << "/" << cfg.bench.seeds.size()
            << " seeds; heatmaps in " << dir << "\n";
  return 0;
}

std::atomic<LiveServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (LiveServer* s = g_server.load()) s->stop();
}

LiveConfig live_config(const AppConfig& cfg, ControllerKind kind) {
  LiveConfig lc;
  lc.geo = cfg.geometry;
  lc.profile = run_profile(cfg);
  lc.plan = cfg.planner;
  lc.controller = cfg.controller;
  lc.avoid = cfg.avoid.session;
  lc.kind = kind;
  lc.tick_hz = cfg.serve.tick_hz;
  lc.broadcast_hz = cfg.serve.broadcast_hz;
  return lc;
}

int cmd_serve(const Context& ctx, const std::string& controller, std::optional<int> port, long ticks,
              std::string record, const std::string& replay) {
  const AppConfig& cfg = ctx.cfg;
  const ControllerKind kind = controller_kind_from_string(controller);
  LiveSession session(live_config(cfg, kind), model_for(kind, cfg));

  if (!replay.empty()) {
    std::ifstream in(replay);
    if (!in) throw ConfigError("recording not found: " + replay);
    const ReplayResult r = replay_recording(in, session);
    std::cout << nlohmann::json{{"ticks", r.ticks},
                                {"states_compared", r.states_compared},
                                {"first_mismatch", r.first_mismatch}}
                     .dump()
              << "\n";
    if (r.first_mismatch >= 0)
      throw InternalFault("replay diverged from the recording at tick " +
                          std::to_string(r.first_mismatch));
    return 0;
  }

  if (record.empty()) record = cfg.serve.record;
  std::ofstream rec;
  ServeOptions opt;
  opt.port = port.value_or(cfg.serve.port);
  opt.max_ticks = ticks;
  opt.log = &std::cerr;
  if (!record.empty()) {
    ensure_parent(record);
    rec.open(record);
    if (!rec) throw ConfigError("cannot write recording " + record);
    opt.record = &rec;
  }
  LiveServer server(session, opt);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving " << to_string(kind) << " on ws://" << opt.address << ":" << server.port()
            << std::endl;
  server.run();
  g_server = nullptr;
  std::cout << "stopped after " << server.ticks() << " ticks (" << server.overruns()
            << " overruns)\n";
  return 0;
}

int cmd_validate() {
  bool all = true;
  for (const CheckResult& r : run_invariant_suite()) {
    all = all && r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << "  " << r.detail << "  ("
              << std::round(r.seconds * 100.0) / 100.0 << " s)\n";
  }
  if (!all) throw InternalFault("invariant suite failed");
  return 0;
}

void error_line(const char* kind, const std::string& message, int code) {
  std::cerr << nlohmann::json{{"level", "error"}, {"kind", kind}, {"message", message}, {"exit", code}}
                   .dump()
            << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape control for rack-actuated continuum robots"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Config file, or 'default' for the built-in defaults");
  app.add_option("--seed", g.seed, "Global seed (overrides the config)");
  app.add_option("--out", g.out, "Artifact root; data/, checkpoints/ and reports/ go below it");
  app.add_flag("--force", g.force, "Regenerate artifacts even when a matching file exists");

  std::string controller = "hybrid";
  std::string difficulty = "extreme";
  std::optional<std::uint64_t> jitter;
  std::string trace;
  std::optional<int> port;
  long ticks = 0;
  std::string record;
  std::string replay;

  auto* gen = app.add_subcommand("gen-data", "Generate the training dataset from the simulated plant");
  auto* train_cmd = app.add_subcommand("train", "Train the displacement network (generates data if needed)");
  auto* track = app.add_subcommand("track", "Run one controller against one target");
  track->add_option("--controller", controller, "phy, pure_nn or hybrid")->capture_default_str();
  track->add_option("--difficulty", difficulty, "easy, medium or extreme")->capture_default_str();
  track->add_option("--jitter", jitter, "Target jitter seed (default: the global seed)");
  auto* bench = app.add_subcommand("bench", "Full controller x difficulty benchmark");
  auto* avoid = app.add_subcommand("avoid", "Obstacle avoidance session");
  avoid->add_option("--controller", controller, "phy, pure_nn or hybrid")->capture_default_str();
  avoid->add_option("--trace", trace, "Obstacle trace CSV (default: scripted sweep)");
  auto* gates = app.add_subcommand("gates", "Gate heatmaps over near-neutral and bent phases");
  auto* serve = app.add_subcommand("serve", "Live WebSocket session");
  serve->add_option("--controller", controller, "phy, pure_nn or hybrid")->capture_default_str();
  serve->add_option("--port", port, "TCP port (0 picks a free one)");
  serve->add_option("--ticks", ticks, "Stop after this many ticks (0: until interrupted)");
  serve->add_option("--record", record, "Write the session recording here");
  serve->add_option("--replay", replay, "Replay a recording headlessly and compare states");
  auto* validate = app.add_subcommand("validate", "Run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << e.what() << "\n";
    error_line("usage", e.what(), 1);
    return 1;
  }

  try {
    if (validate->parsed()) return cmd_validate();
    const Context ctx = make_context(g);
    if (gen->parsed()) return cmd_gen_data(ctx);
    if (train_cmd->parsed()) return cmd_train(ctx);
    if (track->parsed()) return cmd_track(ctx, controller, difficulty, jitter);
    if (bench->parsed()) return cmd_bench(ctx);
    if (avoid->parsed()) return cmd_avoid(ctx, controller, trace);
    if (gates->parsed()) return cmd_gates(ctx);
    if (serve->parsed()) return cmd_serve(ctx, controller, port, ticks, record, replay);
  } catch (const ConfigError& e) {
    error_line("config", e.what(), 1);
    return 1;
  } catch (const UsageError& e) {
    error_line("usage", e.what(), 1);
    return 1;
  } catch (const InvalidInput& e) {
    error_line("invalid_input", e.what(), 1);
    return 1;
  } catch (const std::exception& e) {
    error_line("runtime", e.what(), 2);
    return 2;
  }
  return 1;
}
