// SPDX-License-Identifier: Apache-2.0
#include "shapectl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "shapectl/errors.hpp"

namespace shapectl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Below this clearance the barrier continues linearly so a colliding start
// still has a finite, descending potential.
constexpr double kBarrierFloor = 0.5;  // mm

double barrier(double d, double influence) {
  if (d >= influence) return 0.0;
  const double inv_cut = 1.0 / influence;
  if (d >= kBarrierFloor) {
    const double u = 1.0 / d - inv_cut;
    return u * u;
  }
  const double u0 = 1.0 / kBarrierFloor - inv_cut;
  const double slope = -2.0 * u0 / (kBarrierFloor * kBarrierFloor);
  return u0 * u0 + slope * (d - kBarrierFloor);
}

Eigen::Vector2d tip_of(const JointVector& q, const RobotGeometry& geo) {
  const ShapeState s = forward_kinematics_unchecked(q, geo);
  return {s.tip().x, s.tip().y};
}

bool straight(const JointVector& q, const RobotGeometry& geo) {
  for (int i = 0; i < geo.n_segments; ++i)
    if (std::abs(q(2 * i) - q(2 * i + 1)) > 1e-9) return false;
  return true;
}

}  // namespace

void Obstacle::validate() const {
  if (!(radius > 0.0)) throw InvalidInput("obstacle radius must be positive");
  if (!(influence > radius)) throw InvalidInput("obstacle influence must exceed its radius");
  if (!center.allFinite()) throw InvalidInput("obstacle center must be finite");
}

void PlanConfig::validate() const {
  if (k_rep < 0.0 || k_rest < 0.0) throw InvalidInput("planner gains must be non-negative");
  if (!(tip_tol > 0.0)) throw InvalidInput("planner tip_tol must be positive");
  if (iters < 0) throw InvalidInput("planner iters must be non-negative");
  if (!(influence_factor > 1.0)) throw InvalidInput("planner influence_factor must exceed 1");
  if (!tip_target.allFinite()) throw InvalidInput("planner tip_target must be finite");
}

std::vector<Eigen::Vector2d> backbone_samples(const JointVector& q, const RobotGeometry& geo) {
  const ShapeState s = forward_kinematics_unchecked(q, geo);
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(2 * geo.n_segments + 1));
  pts.emplace_back(0.0, 0.0);
  SegmentPose parent{};
  for (int i = 0; i < geo.n_segments; ++i) {
    const SegmentArc arc = segment_arc(q(2 * i), q(2 * i + 1), geo.width[i]);
    const SegmentPose mid = compose(parent, segment_pose(0.5 * arc.theta, 0.5 * arc.length));
    pts.emplace_back(mid.x, mid.y);
    pts.emplace_back(s.global[i].x, s.global[i].y);
    parent = s.global[i];
  }
  return pts;
}

double min_clearance(const JointVector& q, const Obstacle& obstacle, const RobotGeometry& geo) {
  double best = kInf;
  for (const auto& p : backbone_samples(q, geo))
    best = std::min(best, (p - obstacle.center).norm() - obstacle.radius);
  return best;
}

double potential(const JointVector& q, const std::optional<Obstacle>& obstacle,
                 const PlanConfig& cfg, const RobotGeometry& geo) {
  double u = cfg.k_rest * (q.array() - cfg.q_nominal).square().sum();
  if (obstacle && cfg.k_rep > 0.0) {
    double rep = 0.0;
    for (const auto& p : backbone_samples(q, geo))
      rep += barrier((p - obstacle->center).norm() - obstacle->radius, obstacle->influence);
    u += cfg.k_rep * rep;
  }
  return u;
}

std::optional<JointVector> project_tip(const JointVector& q0, const Eigen::Vector2d& tip_target,
                                       double tip_tol, const RobotGeometry& geo) {
  JointVector q = clamp_to_bounds(q0, geo);
  const int tip_row = 3 * (geo.n_segments - 1);
  for (int it = 0; it < 30; ++it) {
    const Eigen::Vector2d err = tip_target - tip_of(q, geo);
    if (err.norm() <= 1e-3 * tip_tol) break;
    const Eigen::MatrixXd jt = physical_jacobian_unchecked(q, geo).full.middleRows(tip_row, 2);
    const Eigen::Matrix2d jjt = jt * jt.transpose() + 1e-9 * Eigen::Matrix2d::Identity();
    const JointVector step = jt.transpose() * jjt.ldlt().solve(err);
    q = clamp_to_bounds(q + step, geo);
  }
  if ((tip_target - tip_of(q, geo)).norm() > tip_tol) return std::nullopt;
  return q;
}

Plan plan_shape(const JointVector& q_current, const std::optional<Obstacle>& obstacle,
                const PlanConfig& cfg, const RobotGeometry& geo) {
  cfg.validate();
  if (obstacle) obstacle->validate();
  if (q_current.size() != geo.n_joints()) throw InvalidInput("plan_shape: joint vector size mismatch");
  double reach = 0.0;
  for (int i = 0; i < geo.n_segments; ++i) reach += geo.q_max;
  if (cfg.tip_target.norm() >= reach) throw InvalidInput("plan_shape: tip target out of reach");
  if (obstacle && (cfg.tip_target - obstacle->center).norm() <= obstacle->radius)
    throw InvalidInput("plan_shape: obstacle covers the tip target");

  JointVector start = q_current;
  // Symmetric setup: nudge the proximal segment toward +x before descending.
  if (obstacle && std::abs(obstacle->center.x()) < 1e-6 && std::abs(cfg.tip_target.x()) < 1e-6 &&
      straight(q_current, geo)) {
    const double nudge = 0.02 * geo.width[0];
    start(0) += nudge;
    start(1) -= nudge;
  }
  auto projected = project_tip(start, cfg.tip_target, cfg.tip_tol, geo);
  if (!projected) throw InfeasiblePlan("plan_shape: tip constraint cannot be met");

  Plan plan;
  JointVector q = *projected;
  double u = potential(q, obstacle, cfg, geo);
  plan.potential_trace.push_back(u);
  double step = 2.0;  // mm along the normalized descent direction
  const double h = 1e-5;
  for (int it = 0; it < cfg.iters; ++it) {
    JointVector g(q.size());
    for (int j = 0; j < q.size(); ++j) {
      JointVector qp = q, qm = q;
      qp(j) += h;
      qm(j) -= h;
      g(j) = (potential(qp, obstacle, cfg, geo) - potential(qm, obstacle, cfg, geo)) / (2 * h);
    }
    const double gn = g.norm();
    if (!(gn > 1e-9)) break;
    bool accepted = false;
    for (double t = step; t >= 1e-4; t *= 0.5) {
      auto cand = project_tip(q - (t / gn) * g, cfg.tip_target, cfg.tip_tol, geo);
      if (!cand) continue;
      const double uc = potential(*cand, obstacle, cfg, geo);
      if (uc <= u) {
        q = *cand;
        u = uc;
        step = std::min(8.0, 1.5 * t);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    ++plan.accepted_steps;
    plan.potential_trace.push_back(u);
  }

  plan.q = q;
  plan.shape = forward_kinematics(q, geo);
  plan.potential = u;
  plan.clearance = obstacle ? min_clearance(q, *obstacle, geo) : kInf;
  if (plan.clearance <= 0.0) throw InfeasiblePlan("plan_shape: no collision-free target found");
  return plan;
}

std::vector<ObstacleSample> load_obstacle_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("obstacle trace not found: " + path);
  std::vector<ObstacleSample> trace;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line_no == 1 && line.rfind("t,", 0) == 0) continue;  // header
    std::stringstream ss(line);
    ObstacleSample s;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> s.t >> c1 >> s.center.x() >> c2 >> s.center.y() >> c3 >> s.radius) || c1 != ',' ||
        c2 != ',' || c3 != ',')
      throw ConfigError("obstacle trace " + path + ": malformed line " + std::to_string(line_no));
    if (!trace.empty() && s.t < trace.back().t)
      throw ConfigError("obstacle trace " + path + ": time goes backwards at line " +
                        std::to_string(line_no));
    trace.push_back(s);
  }
  return trace;
}

void save_obstacle_trace(const std::vector<ObstacleSample>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write obstacle trace '" + path + "'");
  out << "t,x,y,radius\n" << std::setprecision(10);
  for (const auto& s : trace)
    out << s.t << ',' << s.center.x() << ',' << s.center.y() << ',' << s.radius << '\n';
}

std::vector<ObstacleSample> scripted_sweep(const PlanConfig& cfg, double dt, double radius) {
  if (!(dt > 0.0 && radius > 0.0)) throw InvalidInput("scripted_sweep: dt and radius must be positive");
  const double reach = cfg.tip_target.norm();
  // Waypoints (time s, x mm, y as a fraction of the tip distance).
  struct Key {
    double t, x, y;
  };
  const Key keys[] = {{0.0, 140.0, 0.3}, {1.0, 140.0, 0.3}, {3.0, 10.0, 0.3},
                      {5.0, 10.0, 0.7}, {6.0, 10.0, 0.5}, {8.0, 140.0, 0.5}, {9.0, 140.0, 0.5}};
  const double t_end = 12.0;
  std::vector<ObstacleSample> trace;
  for (int k = 0; k * dt <= t_end + 1e-9; ++k) {
    const double t = k * dt;
    ObstacleSample s;
    s.t = t;
    if (t > keys[std::size(keys) - 1].t) {
      s.radius = 0.0;  // withdrawn
    } else {
      std::size_t i = 0;
      while (i + 1 < std::size(keys) && keys[i + 1].t < t) ++i;
      const Key& a = keys[i];
      const Key& b = keys[std::min(i + 1, std::size(keys) - 1)];
      const double w = b.t > a.t ? std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0) : 0.0;
      const double smooth = w * w * (3.0 - 2.0 * w);
      s.center = {a.x + (b.x - a.x) * smooth, reach * (a.y + (b.y - a.y) * smooth)};
      s.radius = radius;
    }
    trace.push_back(s);
  }
  return trace;
}

double AvoidanceLog::min_clearance() const {
  double best = kInf;
  for (const auto& f : frames) best = std::min(best, f.clearance);
  return best;
}

double AvoidanceLog::mean_tip_error() const {
  if (frames.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& f : frames) acc += f.tip_error;
  return acc / static_cast<double>(frames.size());
}

double AvoidanceLog::final_tip_error() const { return frames.empty() ? 0.0 : frames.back().tip_error; }

AvoidanceRunner::AvoidanceRunner(ShapeController& controller, PlanConfig plan,
                                 DisturbanceProfile profile, RobotGeometry geo, AvoidanceConfig cfg)
    : controller_(controller),
      plan_cfg_(std::move(plan)),
      profile_(profile),
      geo_(std::move(geo)),
      cfg_(cfg) {
  plan_cfg_.validate();
  profile_.validate();
  if (cfg_.control_cycles_per_frame < 1 || cfg_.observation_delay < 0)
    throw InvalidInput("avoidance: invalid cycle configuration");
  reset();
}

void AvoidanceRunner::reset() {
  plant_ = plant_reset(uniform_joints(geo_, cfg_.q_init), profile_, geo_);
  controller_.reset(plant_.q);
  observations_.assign(1, observe(plant_, profile_));
  current_ = plan_shape(uniform_joints(geo_, plan_cfg_.q_nominal), std::nullopt, plan_cfg_, geo_);
  infeasible_ = 0;
}

void AvoidanceRunner::set_tip_target(const Eigen::Vector2d& tip) { plan_cfg_.tip_target = tip; }

AvoidanceFrame AvoidanceRunner::step(double t, const std::optional<Obstacle>& obstacle) {
  AvoidanceFrame frame;
  frame.t = t;
  try {
    current_ = plan_shape(current_.q, obstacle, plan_cfg_, geo_);
  } catch (const InfeasiblePlan&) {
    frame.infeasible = true;
    ++infeasible_;
  }
  const Eigen::VectorXd target = current_.shape.positions();
  for (int c = 0; c < cfg_.control_cycles_per_frame; ++c) {
    const int k = static_cast<int>(observations_.size()) - 1;
    const ShapeState& o = observations_[std::max(0, k - cfg_.observation_delay)];
    const ControlCommand cmd = controller_.control_cycle(plant_.q, o, target);
    plant_ = plant_step(plant_, cmd.dq, profile_, geo_);
    observations_.push_back(observe(plant_, profile_));
    frame.beta = cmd.telemetry.beta;
  }
  // Only the most recent observations are ever read.
  if (observations_.size() > static_cast<std::size_t>(4 * (cfg_.observation_delay + 1)))
    observations_.erase(observations_.begin(),
                        observations_.end() - (cfg_.observation_delay + 1));
  frame.q = plant_.q;
  frame.q_target = current_.q;
  frame.tip_error = std::hypot(plant_.shape.tip().x - plan_cfg_.tip_target.x(),
                               plant_.shape.tip().y - plan_cfg_.tip_target.y());
  frame.clearance = obstacle ? min_clearance(plant_.q_effective, *obstacle, geo_) : kInf;
  frame.target_clearance = obstacle ? min_clearance(current_.q, *obstacle, geo_) : kInf;
  frame.rest_distance = (plant_.q.array() - plan_cfg_.q_nominal).matrix().norm();
  return frame;
}

std::optional<Obstacle> obstacle_at(const ObstacleSample& sample, const PlanConfig& plan) {
  if (!(sample.radius > 0.0)) return std::nullopt;
  return Obstacle{sample.center, sample.radius, plan.influence_factor * sample.radius};
}

AvoidanceLog avoidance_session(ShapeController& controller,
                               const std::vector<ObstacleSample>& trace, const PlanConfig& plan_cfg,
                               const DisturbanceProfile& profile, const RobotGeometry& geo,
                               const AvoidanceConfig& cfg) {
  AvoidanceRunner runner(controller, plan_cfg, profile, geo, cfg);
  AvoidanceLog log;
  for (const auto& sample : trace) log.frames.push_back(runner.step(sample.t, obstacle_at(sample, plan_cfg)));
  log.infeasible_frames = runner.infeasible_frames();
  return log;
}

void write_avoidance_csv(const AvoidanceLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write avoidance log '" + path + "'");
  out << "t,tip_error,clearance,target_clearance,infeasible,rest_distance,mean_beta\n";
  out << std::setprecision(8);
  for (const auto& f : log.frames) {
    out << f.t << ',' << f.tip_error << ',';
    if (std::isfinite(f.clearance))
      out << f.clearance << ',' << f.target_clearance;
    else
      out << "inf,inf";
    out << ',' << (f.infeasible ? 1 : 0) << ',' << f.rest_distance << ','
        << (f.beta.size() ? f.beta.mean() : 1.0) << '\n';
  }
}

}  // namespace shapectl
