// SPDX-License-Identifier: Apache-2.0
#include "shapectl/validate.hpp"

#include <chrono>
#include <numeric>
#include <random>
#include <sstream>

#include "shapectl/errors.hpp"
#include "shapectl/harness.hpp"
#include "shapectl/network.hpp"
#include "shapectl/planner.hpp"
#include "shapectl/training.hpp"

namespace shapectl {

namespace {

template <typename F>
CheckResult timed(const std::string& name, F&& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

JointVector random_feasible(const RobotGeometry& geo, std::mt19937_64& rng, double margin) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  JointVector q(geo.n_joints());
  for (int i = 0; i < geo.n_segments; ++i) {
    const double r = geo.q_min + margin + (geo.q_max - geo.q_min - 2 * margin) * u(rng);
    const double lo = std::max(geo.f_min(r), geo.q_min + margin);
    const double hi = std::min(geo.f_max(r), geo.q_max - margin);
    q(2 * i + 1) = r;
    q(2 * i) = lo + (hi - lo) * u(rng);
  }
  return q;
}

Eigen::VectorXd flatten(const ShapeState& s) {
  Eigen::VectorXd v(3 * s.n_segments());
  for (int k = 0; k < s.n_segments(); ++k) v.segment<3>(3 * k) << s.global[k].x, s.global[k].y, s.global[k].theta;
  return v;
}

std::shared_ptr<const DisplacementModel> untrained(const RobotGeometry& geo) {
  return std::make_shared<NetworkModel>(std::make_shared<const NetworkParams>(init_params(5, geo)));
}

}  // namespace

CheckResult check_kinematics_exactness(int steps, double tol_mm) {
  return timed("kinematics exactness", [&](CheckResult& r) {
    const RobotGeometry geo = RobotGeometry::make_default();
    const auto zero = DisturbanceProfile::zero();
    ShapeController phy(ControllerKind::phy, geo, ControllerConfig{});
    EpisodeConfig cfg;
    cfg.steps = steps;
    const RunMetrics m = compute_metrics(run_episode(phy, make_target(Difficulty::easy, zero, geo), zero, geo, cfg));
    r.pass = m.e_mean < tol_mm;
    r.detail = "e_mean " + fmt(m.e_mean) + " mm after " + std::to_string(steps) + " steps (limit " + fmt(tol_mm) + ")";
  });
}

CheckResult check_jacobian_suite(int n_configs, double rel_tol, std::uint64_t seed) {
  return timed("jacobian suite", [&](CheckResult& r) {
    const RobotGeometry geo = RobotGeometry::make_default();
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    bool triangular = true;
    const double h = 1e-4;
    for (int trial = 0; trial < n_configs; ++trial) {
      const JointVector q = random_feasible(geo, rng, 1e-3);
      const Eigen::MatrixXd j = physical_jacobian(q, geo).full;
      Eigen::MatrixXd fd(j.rows(), j.cols());
      for (int c = 0; c < q.size(); ++c) {
        JointVector qp = q, qm = q;
        qp(c) += h;
        qm(c) -= h;
        fd.col(c) = (flatten(forward_kinematics_unchecked(qp, geo)) -
                     flatten(forward_kinematics_unchecked(qm, geo))) / (2 * h);
      }
      const double scale = std::max(1.0, j.cwiseAbs().rowwise().sum().maxCoeff());
      worst = std::max(worst, (j - fd).cwiseAbs().rowwise().sum().maxCoeff() / scale);
      for (int i = 0; i < geo.n_segments; ++i)
        for (int k = i + 1; k < geo.n_segments; ++k)
          triangular &= (j.block<3, 2>(3 * i, 2 * k).array() == 0.0).all();
    }
    r.pass = worst < rel_tol && triangular;
    r.detail = std::to_string(n_configs) + " configurations, worst relative error " + fmt(worst) +
               ", block-triangular " + (triangular ? "exact" : "VIOLATED");
  });
}

CheckResult check_gradient_suite(int n_samples, double rel_tol, std::uint64_t seed) {
  return timed("gradient suite", [&](CheckResult& r) {
    const RobotGeometry geo = RobotGeometry::make_default();
    const Dataset data = generate_dataset(DisturbanceProfile::full(), geo, n_samples + 100, 21);
    std::vector<std::size_t> idx(n_samples);
    std::iota(idx.begin(), idx.end(), std::size_t{100});
    const Batch batch = make_batch(data, idx);
    NetworkDims dims;
    dims.expert_width = 8;
    dims.gru_width = 8;
    dims.head_width = 16;
    NetworkParams p = init_params(seed, dims);
    fit_normalization(p, data, idx);
    NetworkParams g = p.zeros_like();
    evaluate_loss(p, batch, LossWeights{}, &g);
    std::vector<const Mat*> grads;
    g.for_each([&](const std::string&, const Mat& m) { grads.push_back(&m); });
    double worst = 0.0;
    std::string worst_name;
    std::size_t k = 0;
    NetworkParams work = p;
    work.for_each([&](const std::string& name, Mat& m) {
      const Mat& gm = *grads[k++];
      Mat fd(m.rows(), m.cols());
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double orig = m.data()[i];
        const double step = 1e-6 * std::max(1.0, std::abs(orig));
        m.data()[i] = orig + step;
        const double fp = evaluate_loss(work, batch, LossWeights{}).total;
        m.data()[i] = orig - step;
        const double fm = evaluate_loss(work, batch, LossWeights{}).total;
        m.data()[i] = orig;
        fd.data()[i] = (fp - fm) / (2 * step);
      }
      const double rel = (gm - fd).norm() / std::max(fd.norm(), 1e-8);
      if (rel > worst) {
        worst = rel;
        worst_name = name;
      }
    });
    r.pass = worst < rel_tol;
    r.detail = std::to_string(n_samples) + " samples, " + std::to_string(k) +
               " tensors, worst relative error " + fmt(worst) + " (" + worst_name + ")";
  });
}

CheckResult check_reduction_identities(std::shared_ptr<const DisplacementModel> model) {
  return timed("reduction identities", [&](CheckResult& r) {
    const RobotGeometry geo = RobotGeometry::make_default();
    if (!model) model = untrained(geo);
    const auto profile = DisturbanceProfile::full();
    bool ok = true;
    int compared = 0;
    for (Difficulty d : {Difficulty::easy, Difficulty::extreme}) {
      const auto p = scaled_profile(profile, d);
      const TrackingTarget target = make_target(d, p, geo, 1);
      EpisodeConfig cfg;
      cfg.steps = 80;
      auto run = [&](ControllerKind k, GateOverride g) {
        ShapeController c(k, geo, ControllerConfig{}, k == ControllerKind::phy ? nullptr : model, g);
        return run_episode(c, target, p, geo, cfg);
      };
      const EpisodeLog phy = run(ControllerKind::phy, GateOverride::none);
      const EpisodeLog h1 = run(ControllerKind::hybrid, GateOverride::physics);
      const EpisodeLog nn = run(ControllerKind::pure_nn, GateOverride::none);
      const EpisodeLog h0 = run(ControllerKind::hybrid, GateOverride::network);
      for (std::size_t t = 0; t < phy.q.size(); ++t) {
        ok &= phy.q[t] == h1.q[t] && nn.q[t] == h0.q[t];
        ++compared;
      }
    }
    r.pass = ok;
    r.detail = std::to_string(compared) + " steps compared per pair, " +
               (ok ? "bit-identical" : "MISMATCH");
  });
}

CheckResult check_metric_oracles() {
  return timed("metric oracles", [&](CheckResult& r) {
    std::vector<JointVector> q;
    for (int t = 0; t < 50; ++t) {
      JointVector v = JointVector::Zero(10);
      v(0) = static_cast<double>(t) * t * t;
      q.push_back(v);
    }
    const double chatter = compute_metrics(std::vector<double>(50, 0.0), q).chatter;
    bool t95_ok = true;
    const std::vector<JointVector> flat(60, JointVector::Constant(10, 70.0));
    for (int k = 1; k < 48; ++k) {
      std::vector<double> e(60, 0.0);
      for (int t = 0; t < k; ++t) e[t] = 5.0;
      t95_ok &= compute_metrics(e, flat).t95 == k;
    }
    r.pass = chatter == 6.0 && t95_ok;
    r.detail = "cubic chatter " + fmt(chatter) + ", step t95 " + (t95_ok ? "exact" : "WRONG");
  });
}

CheckResult check_fusion_convexity(int trials, std::uint64_t seed) {
  return timed("fusion convexity", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bool ok = true;
    for (int t = 0; t < trials; ++t) {
      const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(10, 10, [&] { return n(rng); });
      const Eigen::MatrixXd b = Eigen::MatrixXd::NullaryExpr(10, 10, [&] { return n(rng); });
      const Eigen::MatrixXd beta = Eigen::MatrixXd::NullaryExpr(3, 5, [&] { return u(rng); });
      const Eigen::MatrixXd f = fuse_jacobian(a, b, beta).j_fused;
      ok &= ((f.array() >= a.cwiseMin(b).array() - 1e-12) && (f.array() <= a.cwiseMax(b).array() + 1e-12)).all();
    }
    r.pass = ok;
    r.detail = std::to_string(trials) + " random fusions";
  });
}

CheckResult check_dls_monotonicity(int trials, std::uint64_t seed) {
  return timed("dls damping monotonicity", [&](CheckResult& r) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    bool ok = true;
    ControllerConfig cfg;
    cfg.dq_max = 1e9;
    for (int t = 0; t < trials; ++t) {
      const Eigen::MatrixXd j = Eigen::MatrixXd::NullaryExpr(10, 10, [&] { return n(rng); });
      const Eigen::VectorXd e = Eigen::VectorXd::NullaryExpr(10, [&] { return n(rng); });
      const Eigen::VectorXd ne = e.reshaped(2, 5).colwise().norm().transpose();
      double prev = std::numeric_limits<double>::infinity();
      for (double lam : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}) {
        cfg.lambda_dls = lam;
        const double norm = dls_step(j, e, cfg, ne).dq.norm();
        ok &= norm <= prev + 1e-12;
        prev = norm;
      }
    }
    r.pass = ok;
    r.detail = std::to_string(trials) + " random systems, 7 damping levels";
  });
}

CheckResult check_planner_invariants(int trials, std::uint64_t seed) {
  return timed("planner invariants", [&](CheckResult& r) {
    const RobotGeometry geo = RobotGeometry::make_default();
    const PlanConfig cfg;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(-120.0, 120.0), uy(60.0, 440.0), ur(5.0, 25.0);
    int feasible = 0, violations = 0;
    for (int t = 0; t < trials; ++t) {
      const double rad = ur(rng);
      const Obstacle o{{ux(rng), uy(rng)}, rad, 3.0 * rad};
      try {
        const Plan p = plan_shape(uniform_joints(geo, cfg.q_nominal), o, cfg, geo);
        ++feasible;
        const Eigen::Vector2d tip(p.shape.tip().x, p.shape.tip().y);
        if ((tip - cfg.tip_target).norm() > cfg.tip_tol || !within_bounds(p.q, geo) || p.clearance <= 0.0)
          ++violations;
        for (std::size_t k = 1; k < p.potential_trace.size(); ++k)
          if (p.potential_trace[k] > p.potential_trace[k - 1]) ++violations;
      } catch (const InfeasiblePlan&) {
      }
    }
    r.pass = violations == 0 && feasible > 0;
    r.detail = std::to_string(feasible) + "/" + std::to_string(trials) + " feasible plans, " +
               std::to_string(violations) + " invariant violations";
  });
}

CheckResult check_plant_feasibility(int steps, std::uint64_t seed) {
  return timed("command feasibility", [&](CheckResult& r) {
    const RobotGeometry geo = RobotGeometry::make_default();
    auto profile = scaled_profile(DisturbanceProfile::full(), Difficulty::extreme);
    profile.seed = seed;
    ShapeController c(ControllerKind::hybrid, geo, ControllerConfig{}, untrained(geo));
    EpisodeConfig cfg;
    cfg.steps = steps;
    const EpisodeLog log = run_episode(c, make_target(Difficulty::extreme, profile, geo, seed), profile, geo, cfg);
    int bad = 0;
    for (const auto& q : log.q) bad += !within_bounds(q, geo);
    r.pass = bad == 0;
    r.detail = std::to_string(log.q.size()) + " states, " + std::to_string(bad) + " out of bounds";
  });
}

std::vector<CheckResult> run_invariant_suite() {
  return {check_kinematics_exactness(), check_jacobian_suite(),     check_gradient_suite(),
          check_reduction_identities(), check_metric_oracles(),     check_fusion_convexity(),
          check_dls_monotonicity(),     check_planner_invariants(), check_plant_feasibility()};
}

}  // namespace shapectl
