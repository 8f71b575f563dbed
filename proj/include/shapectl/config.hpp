// SPDX-License-Identifier: Apache-2.0
//
// Application configuration: one JSON document covering every tunable of the
// pipeline. Missing keys take their defaults; unknown keys are rejected.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shapectl/network.hpp"
#include "shapectl/planner.hpp"
#include "shapectl/training.hpp"

namespace shapectl {

struct DataSection {
  int n_samples = 20000;
  DataGenConfig gen;
};

struct BenchSection {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  EpisodeConfig episode;
  int gating_steps_per_leg = 100;
};

struct AvoidSection {
  AvoidanceConfig session;
  double obstacle_radius = 15.0;
  double frame_dt = 0.02;  // s, scripted sweep sampling
  std::string trace;       // empty: scripted sweep
};

struct ServeSection {
  int port = 8731;
  double tick_hz = 50.0;
  double broadcast_hz = 30.0;
  std::string record;  // NDJSON path for the session recording; empty disables
};

struct PathSection {
  std::string data_dir = "artifacts/data";
  std::string checkpoint_dir = "artifacts/checkpoints";
  std::string report_dir = "artifacts/reports";
  std::string checkpoint;  // explicit checkpoint; empty: content-addressed default
};

struct AppConfig {
  RobotGeometry geometry = RobotGeometry::make_default();
  DisturbanceProfile disturbance = DisturbanceProfile::full();
  LossWeights loss;
  ControllerConfig controller;
  PlanConfig planner;
  NetworkDims network;
  DataSection data;
  TrainConfig training;
  BenchSection bench;
  AvoidSection avoid;
  ServeSection serve;
  PathSection paths;
  std::uint64_t seed = 1;

  /// Runs every sub-config's own checks; throws ConfigError naming the section.
  void validate() const;
};

AppConfig parse_config(const std::string& json_text);
AppConfig load_config(const std::string& path);
std::string config_to_json(const AppConfig& cfg, int indent = 2);
void save_config(const AppConfig& cfg, const std::string& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex16(std::uint64_t h);

/// Hash of everything that determines the generated dataset.
std::uint64_t dataset_hash(const AppConfig& cfg);
/// Hash of everything that determines the trained checkpoint (includes the
/// dataset hash).
std::uint64_t checkpoint_hash(const AppConfig& cfg);

/// `<stem>-<hash>-s<seed><ext>` inside `dir`.
std::string artifact_path(const std::string& dir, const std::string& stem, std::uint64_t hash,
                          std::uint64_t seed, const std::string& ext);

std::string default_dataset_path(const AppConfig& cfg);
std::string default_checkpoint_path(const AppConfig& cfg);

}  // namespace shapectl
