// SPDX-License-Identifier: Apache-2.0
#include "shapectl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

constexpr double kTargetLength = 80.0;  // mm, common arc length of every target segment

std::vector<double> nominal_bends(Difficulty d, double limit) {
  const double f = curvature_fraction(d) * limit;
  switch (d) {
    case Difficulty::easy: return {f, f, f, f, f};
    case Difficulty::medium: return {f, -f, f, -f, f};
    case Difficulty::extreme: return {f, -f, f, -f, f};
  }
  return {};
}

}  // namespace

const char* to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "Easy";
    case Difficulty::medium: return "Medium";
    case Difficulty::extreme: return "Extreme";
  }
  return "?";
}

Difficulty difficulty_from_string(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "easy") return Difficulty::easy;
  if (s == "medium") return Difficulty::medium;
  if (s == "extreme") return Difficulty::extreme;
  throw InvalidInput("unknown difficulty '" + name + "' (expected easy, medium or extreme)");
}

double curvature_fraction(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return 0.3;
    case Difficulty::medium: return 0.6;
    case Difficulty::extreme: return 0.95;
  }
  return 0.0;
}

double disturbance_scale(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return 0.3;
    case Difficulty::medium: return 0.7;
    case Difficulty::extreme: return 1.0;
  }
  return 0.0;
}

DisturbanceProfile scaled_profile(const DisturbanceProfile& base, Difficulty d) {
  const double s = disturbance_scale(d);
  DisturbanceProfile p = base;
  p.coupling_gain *= s;
  p.friction_scale *= s;
  p.hysteresis_decay *= s;
  return p;
}

TrackingTarget make_target(Difficulty d, const DisturbanceProfile& profile,
                           const RobotGeometry& geo, std::uint64_t jitter_seed) {
  if (geo.n_segments < 1) throw InvalidInput("make_target: empty geometry");
  const double limit = bend_limit(geo, kTargetLength);
  std::vector<double> base = nominal_bends(d, limit);
  std::vector<double> bends(geo.n_segments);
  for (int i = 0; i < geo.n_segments; ++i) bends[i] = base[i % base.size()];
  if (jitter_seed != 0) {
    std::mt19937_64 rng(jitter_seed);
    std::uniform_real_distribution<double> u(-0.03, 0.03);
    for (double& b : bends) b = std::clamp(b + u(rng), -limit, limit);
  }
  TrackingTarget t;
  t.difficulty = d;
  t.q_target = clamp_to_bounds(joints_from_curvature(geo, bends, kTargetLength), geo);
  t.shape = plant_reset(t.q_target, profile, geo).shape;
  t.positions = t.shape.positions();
  return t;
}

void write_episode_csv(const EpisodeLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write episode log '" + path + "'");
  if (log.q.empty()) return;
  const auto nq = log.q.front().size();
  const auto n = static_cast<Eigen::Index>(log.shape.front().global.size());
  out << "step,error_mm,dq_norm_mm,fault";
  for (Eigen::Index j = 0; j < nq; ++j) out << ",q" << j;
  for (Eigen::Index k = 0; k < n; ++k) out << ",x" << k << ",y" << k << ",theta" << k;
  for (Eigen::Index k = 0; k < n; ++k) out << ",beta_x" << k << ",beta_y" << k << ",beta_theta" << k;
  out << '\n' << std::setprecision(10);
  for (std::size_t t = 0; t < log.q.size(); ++t) {
    const bool cmd = t > 0 && t - 1 < log.dq_norm.size();
    out << t << ',' << log.error[t] << ',';
    if (cmd) out << log.dq_norm[t - 1] << ',' << (t - 1 < log.fault.size() && log.fault[t - 1] ? 1 : 0);
    else out << ',';
    for (Eigen::Index j = 0; j < nq; ++j) out << ',' << log.q[t](j);
    for (const auto& p : log.shape[t].global) out << ',' << p.x << ',' << p.y << ',' << p.theta;
    for (Eigen::Index k = 0; k < n; ++k)
      for (int d = 0; d < 3; ++d) {
        out << ',';
        if (cmd && t - 1 < log.beta.size()) out << log.beta[t - 1](d, k);
      }
    out << '\n';
  }
}

double mean_node_error(const ShapeState& shape, const Eigen::VectorXd& target_positions) {
  const int n = shape.n_segments();
  double acc = 0.0;
  for (int k = 0; k < n; ++k)
    acc += std::hypot(shape.global[k].x - target_positions(2 * k),
                      shape.global[k].y - target_positions(2 * k + 1));
  return acc / n;
}

EpisodeLog run_episode(ShapeController& controller, const TrackingTarget& target,
                       const DisturbanceProfile& profile, const RobotGeometry& geo,
                       const EpisodeConfig& cfg) {
  return run_schedule(controller, {{target, cfg.steps}}, profile, geo, cfg);
}

EpisodeLog run_schedule(ShapeController& controller, const std::vector<ScheduleLeg>& legs,
                        const DisturbanceProfile& profile, const RobotGeometry& geo,
                        const EpisodeConfig& cfg) {
  profile.validate();
  if (legs.empty() || cfg.observation_delay < 0)
    throw InvalidInput("run_schedule: need at least one leg and a non-negative delay");
  for (const auto& leg : legs)
    if (leg.steps < 1) throw InvalidInput("run_schedule: every leg needs at least one step");
  const int n = geo.n_segments;
  PlantState s = plant_reset(uniform_joints(geo, cfg.q_init), profile, geo);
  controller.reset(s.q);

  EpisodeLog log;
  auto record_state = [&](const PlantState& st, const Eigen::VectorXd& target) {
    Eigen::VectorXd ne(n);
    for (int k = 0; k < n; ++k)
      ne(k) = std::hypot(st.shape.global[k].x - target(2 * k),
                         st.shape.global[k].y - target(2 * k + 1));
    log.q.push_back(st.q);
    log.node_error.push_back(ne);
    log.error.push_back(ne.mean());
    log.shape.push_back(st.shape);
  };
  std::vector<ShapeState> observations;
  observations.push_back(observe(s, profile));
  record_state(s, legs.front().target.positions);
  int t = 0;
  for (const auto& leg : legs) {
    for (int k = 0; k < leg.steps; ++k, ++t) {
      const ShapeState& o = observations[std::max(0, t - cfg.observation_delay)];
      const ControlCommand cmd = controller.control_cycle(s.q, o, leg.target.positions);
      if (cmd.telemetry.fault) ++log.faults;
      log.fault.push_back(cmd.telemetry.fault);
      s = plant_step(s, cmd.dq, profile, geo);
      observations.push_back(observe(s, profile));
      record_state(s, leg.target.positions);
      log.beta.push_back(cmd.telemetry.beta);
      log.dq_norm.push_back(cmd.telemetry.dq_norm);
      log.peak_node.push_back(cmd.telemetry.peak_node);
    }
  }
  return log;
}

TrackingTarget make_bend_target(const std::vector<double>& bends, const DisturbanceProfile& profile,
                                const RobotGeometry& geo) {
  TrackingTarget t;
  t.q_target = clamp_to_bounds(joints_from_curvature(geo, bends, kTargetLength), geo);
  t.shape = plant_reset(t.q_target, profile, geo).shape;
  t.positions = t.shape.positions();
  return t;
}

std::vector<ScheduleLeg> gating_schedule(const DisturbanceProfile& profile, const RobotGeometry& geo,
                                         std::uint64_t seed, int steps_per_leg) {
  const double limit = bend_limit(geo, kTargetLength);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double neutral = std::min(profile.neutral_width, 0.5 * limit);
  std::vector<ScheduleLeg> legs;
  for (int leg = 0; leg < 4; ++leg) {
    std::vector<double> bends(geo.n_segments);
    for (double& b : bends) {
      const double sign = u(rng) < 0.5 ? -1.0 : 1.0;
      b = leg % 2 == 0 ? sign * 0.5 * neutral * u(rng)
                       : sign * (0.35 + 0.3 * u(rng)) * limit;
    }
    legs.push_back({make_bend_target(bends, profile, geo), steps_per_leg});
  }
  return legs;
}

GatePhaseStats gate_phase_stats(const EpisodeLog& log, const RobotGeometry& geo,
                                double neutral_width) {
  GatePhaseStats st;
  double acc_n = 0.0, acc_s = 0.0;
  for (std::size_t t = 0; t < log.beta.size() && t < log.q.size(); ++t) {
    const JointVector& q = log.q[t];
    for (int i = 0; i < geo.n_segments; ++i) {
      const SegmentArc arc = segment_arc(q(2 * i), q(2 * i + 1), geo.width[i]);
      const double th = std::abs(arc.theta);
      const double b = log.beta[t].col(i).mean();
      if (th < neutral_width) {
        acc_n += b;
        ++st.neutral_cells;
      } else if (th >= 2.0 * neutral_width && th <= 0.75 * bend_limit(geo, arc.length)) {
        acc_s += b;
        ++st.smooth_cells;
      }
    }
  }
  if (st.neutral_cells) st.neutral_beta = acc_n / st.neutral_cells;
  if (st.smooth_cells) st.smooth_beta = acc_s / st.smooth_cells;
  return st;
}

int settle_index(const std::vector<double>& error, double steady) {
  if (error.empty()) return 0;
  const double threshold = steady + 0.05 * (error.front() - steady);
  int idx = static_cast<int>(error.size());
  for (int t = static_cast<int>(error.size()) - 1; t >= 0; --t) {
    if (error[t] <= threshold)
      idx = t;
    else
      break;
  }
  return idx;
}

RunMetrics compute_metrics(const std::vector<double>& error, const std::vector<JointVector>& q) {
  if (error.size() < 4 || q.size() != error.size())
    throw InvalidInput("compute_metrics: need at least 4 aligned samples");
  RunMetrics m;
  m.error = error;
  const std::size_t len = error.size();
  const std::size_t tail = std::max<std::size_t>(1, (len + 4) / 5);
  double acc = 0.0;
  for (std::size_t t = len - tail; t < len; ++t) acc += error[t];
  m.e_mean = acc / static_cast<double>(tail);
  m.t95 = settle_index(error, m.e_mean);
  m.chatter_series.assign(len, 0.0);
  double ch = 0.0;
  for (std::size_t t = 3; t < len; ++t) {
    m.chatter_series[t] = (q[t] - 3.0 * q[t - 1] + 3.0 * q[t - 2] - q[t - 3]).norm();
    ch += m.chatter_series[t];
  }
  m.chatter = ch / static_cast<double>(len - 3);
  for (std::size_t t = 0; t + 1 < len; ++t) m.cost += (q[t + 1] - q[t]).lpNorm<1>();
  return m;
}

RunMetrics compute_metrics(const EpisodeLog& log) { return compute_metrics(log.error, log.q); }

}  // namespace shapectl
