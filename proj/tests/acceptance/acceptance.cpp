// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgrasp/label_generation.hpp"
#include "dgrasp/pipeline.hpp"
#include "dgrasp/version.hpp"

using namespace dgrasp;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct TrainingRecipe {
  std::uint64_t seed = 1;
  int epochs = 1000;
  int episodes_per_worker = 4;
  int goals_per_label = 5;
};

const HandModel& hand() {
  static const HandModel m = default_desk_hand();
  return m;
}

const SceneConfig& scene() {
  static const SceneConfig s = default_scene();
  return s;
}

Quat random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q;
}

Vec3 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

Eigen::VectorXd random_q(std::mt19937_64& rng) {
  Eigen::VectorXd q(hand().joint_count());
  for (int j = 0; j < q.size(); ++j)
    q[j] = std::uniform_real_distribution<double>(hand().limits[j].lo, hand().limits[j].hi)(rng);
  return q;
}

SimState state_at(const GraspLabel& l, const HandState& h) {
  return make_state(hand(), h, ObjectBody{scene().object(l.object_id), l.object_pose, {}}, scene().surface_height);
}

// ---------------------------------------------------------------------------

void physics_sanity(Outcome& o) {
  const auto start = std::chrono::steady_clock::now();
  const SimConfig cfg;
  const ObjectSpec ball{ObjectShape::sphere(0.04), 0.2, 0.8};
  const HandState parked = HandState::at_rest(hand(), Pose6D::translation(0, 0, 5.0), Eigen::VectorXd::Zero(6));
  auto hold = [](const SimState& s) { return HandAction{s.hand.q, s.hand.wrist}; };

  SimState s = set_surface(make_state(hand(), parked, {ball, Pose6D::translation(0, 0, 1.0), {}}, 0.0), SurfaceMode::Removed);
  const int n = static_cast<int>(std::round(1.0 / cfg.control_dt()));
  for (int i = 0; i < n; ++i) s = step(hand(), cfg, s, hold(s));
  const double t = n * cfg.control_dt();
  const double analytic = 0.5 * 9.81 * t * t;
  const double fall_err = std::abs((1.0 - s.object.pose.position.z()) - analytic) / analytic;
  o.check(fall_err <= 0.01, "free fall within 1%");

  s = make_state(hand(), parked, {ball, resting_pose(ball, 0.0), {}}, 0.0);
  for (int i = 0; i < 300; ++i) s = step(hand(), cfg, s, hold(s));
  const double pen = ball.shape.dims.x() - s.object.pose.position.z();
  const double bound = ball.mass * 9.81 / cfg.contact_stiffness;
  o.check(pen <= bound * (1.0 + 1e-6), "resting penetration <= m g / k");

  s = make_state(hand(), parked, {ball, Pose6D::translation(0, 0, 0.1), {}}, 0.0);
  s.object.twist.angular = Vec3(2.0, 0.0, 1.0);
  s.object.twist.linear = Vec3(0.3, 0.0, 0.0);
  double e = mechanical_energy(hand(), cfg, s), worst_gain = -1e300;
  for (int i = 0; i < 200; ++i) {
    s = step(hand(), cfg, s, hold(s));
    const double e2 = mechanical_energy(hand(), cfg, s);
    worst_gain = std::max(worst_gain, e2 - e);
    e = e2;
  }
  o.check(worst_gain <= 1e-4, "energy non-increasing");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.check(secs < 10.0, "runtime < 10 s");
  o.detail << "fall error " << fall_err * 100 << "%, penetration " << pen * 1000 << " mm (bound " << bound * 1000
           << " mm), max energy gain " << worst_gain << " J/step, " << secs << " s";
}

void math_oracles(Outcome& o) {
  std::mt19937_64 rng(101);
  double geo = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Quat a = random_quat(rng), b = random_quat(rng);
    const double dot = std::min(1.0, std::abs(a.dot(b)));
    geo = std::max(geo, std::abs(geodesic_distance(a, b) - 2.0 * std::acos(dot)));
  }
  o.check(geo <= 1e-9, "geodesic vs quaternion angle");

  double gae = 0.0;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const int n = 5 + static_cast<int>(rng() % 40);
    Eigen::VectorXd r(n), v(n);
    std::vector<bool> done(n);
    for (int k = 0; k < n; ++k) {
      r[k] = nd(rng);
      v[k] = nd(rng);
      done[k] = rng() % 7 == 0;
    }
    done.back() = done.back() || rng() % 2;
    const GaeResult g = gae_advantages(r, v, done, 0.99, 0.95);
    for (int t = 0; t < n; ++t) {
      long double a = 0.0L, w = 1.0L;
      for (int k = t; k < n; ++k) {
        const long double next = (k + 1 < n && !done[k]) ? static_cast<long double>(v[k + 1]) : 0.0L;
        a += w * (r[k] + 0.99L * next - v[k]);
        if (done[k]) break;
        w *= 0.99L * 0.95L;
      }
      gae = std::max(gae, static_cast<double>(std::fabs(a - g.advantages[t])));
    }
  }
  o.check(gae <= 1e-12, "GAE vs direct sum");

  double fk = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Pose6D wrist(random_vec(rng), random_quat(rng));
    const Eigen::VectorXd q = random_q(rng);
    const HandKinematics k = forward_kinematics(hand(), wrist, q);
    std::vector<Eigen::Matrix4d> t;
    for (int l = 0; l < hand().link_count(); ++l) {
      const HandLink& link = hand().links[l];
      auto h = [](const Pose6D& p) {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = p.orientation.toRotationMatrix();
        m.topRightCorner<3, 1>() = p.position;
        return m;
      };
      Eigen::Matrix4d x = (link.parent < 0 ? h(wrist) : t[link.parent]) * h(link.offset);
      if (link.axis) {
        Eigen::Matrix4d r = Eigen::Matrix4d::Identity();
        r.topLeftCorner<3, 3>() = Eigen::AngleAxisd(q[link.joint], *link.axis).toRotationMatrix();
        x = x * r;
      }
      t.push_back(x);
      fk = std::max(fk, (k.joint_positions[l] - x.topRightCorner<3, 1>()).norm());
    }
  }
  o.check(fk <= 1e-10, "FK vs matrix chain");
  o.detail << "max errors: geodesic " << geo << ", GAE " << gae << ", FK " << fk;
}

void feature_invariance(const std::vector<GraspLabel>& labels, Outcome& o) {
  std::mt19937_64 rng(102);
  double feat = 0.0, rew = 0.0;
  const Eigen::VectorXd rate = Eigen::VectorXd::Zero(grasp_action_size(hand()));
  for (int i = 0; i < 1000; ++i) {
    const GraspLabel& l = labels[i % labels.size()];
    HandState h = HandState::at_rest(hand(), compose(l.hand_pose, Pose6D(random_vec(rng, 0.03), exp_map(random_vec(rng, 0.3)))),
                                     random_q(rng));
    SimState s = state_at(l, h);
    s.object.pose = compose(s.object.pose, Pose6D(random_vec(rng, 0.02), exp_map(random_vec(rng, 0.3))));
    s.link_force = Eigen::VectorXd::Random(hand().link_count()).cwiseAbs();
    const Pose6D g(random_vec(rng), random_quat(rng));
    SimState t = s;
    t.hand.wrist = compose(g, s.hand.wrist);
    t.object.pose = compose(g, s.object.pose);
    const GraspObservation a = extract_grasp_features(hand(), s, l, 0.0);
    const GraspObservation b = extract_grasp_features(hand(), t, l, 0.0);
    for (size_t k = 0; k < a.goals.positions.size(); ++k)
      feat = std::max(feat, (a.goals.positions[k] - b.goals.positions[k]).norm());
    feat = std::max(feat, (a.goals.joint_angles - b.goals.joint_angles).cwiseAbs().maxCoeff());
    feat = std::max(feat, (a.goals.wrist_rotation - b.goals.wrist_rotation).norm());
    feat = std::max(feat, (a.goals.contacts - b.goals.contacts).cwiseAbs().maxCoeff());
    const double ra = grasp_reward(hand(), a, rate, 0.2, {});
    const double rb = grasp_reward(hand(), b, rate, 0.2, {});
    rew = std::max(rew, std::abs(ra - rb));
  }
  o.check(feat <= 1e-9, "goal components");
  o.check(rew <= 1e-9, "grasp reward");
  o.detail << "max change over 1000 transforms: goal components " << feat << ", reward " << rew;
}

void contact_derivation(Outcome& o) {
  std::mt19937_64 rng(103);
  const SurfacePointSet pts = sample_surface(scene().object("sphere40").shape);
  int mismatches = 0, monotone_violations = 0, contacts = 0;
  for (int i = 0; i < 100; ++i) {
    GraspLabel l;
    l.object_id = "sphere40";
    l.object_pose = Pose6D(random_vec(rng, 0.5), random_quat(rng));
    const double r = std::uniform_real_distribution<double>(0.03, 0.09)(rng);
    l.hand_pose = compose(l.object_pose, Pose6D(random_vec(rng).normalized() * r, random_quat(rng)));
    l.q = random_q(rng);
    const HandKinematics fk = forward_kinematics(hand(), relative_to(l.hand_pose, l.object_pose), l.q);
    Eigen::VectorXi oracle = Eigen::VectorXi::Zero(hand().link_count());
    for (int k = 0; k < hand().link_count(); ++k)
      for (const Vec3& v : link_surface_points(hand(), fk, k))
        for (const Vec3& p : pts.points)
          if ((v - p).norm() < kContactThreshold) oracle[k] = 1;
    const Eigen::VectorXi got = derive_target_contacts(hand(), l, pts, kContactThreshold);
    mismatches += got != oracle;
    contacts += got.sum();
    Eigen::VectorXi prev = Eigen::VectorXi::Zero(hand().link_count());
    for (double eps : {0.001, 0.005, 0.01, 0.015, 0.02, 0.04}) {
      const Eigen::VectorXi c = derive_target_contacts(hand(), l, pts, eps);
      monotone_violations += (c.array() < prev.array()).any();
      prev = c;
    }
  }
  o.check(mismatches == 0, "all-pairs oracle");
  o.check(monotone_violations == 0, "monotone in eps");
  o.detail << mismatches << " mismatches in 100 labels (" << contacts << " contacts), " << monotone_violations
           << " monotonicity violations";
}

void motion_contraction(const std::vector<GraspLabel>& labels, Outcome& o) {
  SimConfig cfg = scene().sim;
  cfg.kinematic = true;
  std::mt19937_64 rng(104);
  double worst = 0.0;
  for (double beta : {0.02, 0.05, 0.2}) {
    for (const GraspLabel& l : labels) {
      SimState s = set_surface(state_at(l, HandState::at_rest(hand(), l.hand_pose, l.q)), SurfaceMode::Removed);
      s.weld_object();
      const Pose6D goal = compose(s.object.pose, Pose6D(random_vec(rng, 0.1), exp_map(random_vec(rng, 0.5))));
      const double p0 = (goal.position - s.object.pose.position).norm();
      const double r0 = geodesic_distance(goal.orientation, s.object.pose.orientation);
      for (int k = 1; k <= 60; ++k) {
        s = step(hand(), cfg, s, {s.hand.q, motion_step_closed_loop(s, goal, beta)});
        const double f = std::pow(1.0 - beta, k);
        worst = std::max(worst, std::abs((goal.position - s.object.pose.position).norm() - f * p0) / (f * p0));
        worst = std::max(worst, std::abs(geodesic_distance(goal.orientation, s.object.pose.orientation) - f * r0) / (f * r0));
      }
    }
  }
  o.check(worst <= 1e-6, "relative error");
  o.detail << "max relative error " << worst << " over beta in {0.02, 0.05, 0.2}, 60 steps";
}

void metrics_checks(const std::vector<GraspLabel>& labels, Outcome& o) {
  const ObjectShape big = ObjectShape::box(0.5, 0.5, 0.5);
  const VolumeEstimate v = union_volume_inside(
      {{Vec3::Zero(), 0.02}}, [&](const Vec3& p) { return big.contains(p); }, kInterpenetrationSamples, 7);
  const double analytic = 4.0 / 3.0 * std::numbers::pi * 0.02 * 0.02 * 0.02 * 1e6;
  o.check(std::abs(v.volume - analytic) <= 3.0 * v.standard_error + 1e-12, "submerged sphere volume");

  BaselineOptions welded;
  welded.weld_object = true;
  const RolloutRecord w = baseline_pd(hand(), scene(), labels[0], welded);
  const double rigid = sim_dist(w).mean;
  o.check(rigid <= 1e-6, "sim_dist of rigid motion");
  GraspLabel away = labels[0];
  away.hand_pose.position.z() += 0.3;
  const double s_weld = success_rate({w});
  const double s_free = success_rate({baseline_pd(hand(), scene(), away)});
  o.check(s_weld == 1.0 && s_free == 0.0, "success on welded/free scenes");
  o.detail << "volume " << v.volume << " +- " << v.standard_error << " cm3 (analytic " << analytic << "), sim_dist "
           << rigid << " mm/s, success welded " << s_weld << " free " << s_free;
}

void desk_training(const std::vector<GraspLabel>& labels, const TrainingRecipe& recipe, Outcome& o) {
  RunConfig cfg;
  cfg.seed = recipe.seed;
  cfg.ppo.epochs = recipe.epochs;
  cfg.ppo.episodes_per_worker = recipe.episodes_per_worker;
  const int steps = static_cast<int>(labels.size()) * recipe.episodes_per_worker *
                    (cfg.task.grasp_steps + cfg.task.train_motion_steps);
  o.check(recipe.epochs <= 2000 && steps <= 10000, "training scale");
  const auto start = std::chrono::steady_clock::now();
  const TrainResult trained = train_grasp_policy(hand(), scene(), labels, cfg);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;

  Policies p;
  p.grasp = &trained.net;
  cfg.eval.mode = EvalMode::Grasp;
  std::vector<RolloutRecord> holds;
  for (auto& e : evaluate_labels(hand(), scene(), labels, cfg, p)) holds.push_back(std::move(e.rollout));
  const double success = success_rate(holds);
  o.check(success >= 0.8, "success >= 0.8");

  cfg.eval.mode = EvalMode::Motion;
  cfg.eval.goals_per_label = recipe.goals_per_label;
  int reached = 0, total = 0;
  for (const auto& e : evaluate_labels(hand(), scene(), labels, cfg, p)) {
    reached += (e.metrics.mpe < 10.0 && e.metrics.geodesic < 0.15) ? 1 : 0;
    ++total;
  }
  const double frac = static_cast<double>(reached) / total;
  o.check(frac >= 0.6, "goals reached >= 60%");
  o.detail << "seed " << recipe.seed << ", " << recipe.epochs << " epochs x " << steps << " steps in " << minutes
           << " min; hold success " << success << "; goals reached " << reached << "/" << total;
}

void baseline_ordering(Outcome& o) {
  const std::vector<GraspLabel> labels = generate_labels(hand(), scene(), "sphere40", 16, 11);
  const SurfacePointSet pts = sample_surface(scene().object("sphere40").shape);
  int pd = 0, ik = 0, n = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      std::mt19937_64 rng(mix_seed(105, i, k));
      const GraspLabel noisy = corrupt_label(hand(), labels[i], 0.005, rng, pts);
      pd += rollout_success(baseline_pd(hand(), scene(), noisy)) ? 1 : 0;
      ik += rollout_success(baseline_ik(hand(), scene(), noisy)) ? 1 : 0;
      ++n;
    }
  }
  o.check(ik >= pd, "IK >= PD");
  o.detail << "success with 5 mm noise over " << n << " labels: IK " << static_cast<double>(ik) / n << ", PD "
           << static_cast<double>(pd) / n;
}

void reproducibility(const std::vector<GraspLabel>& labels, Outcome& o) {
  RunConfig cfg;
  cfg.seed = 21;
  cfg.ppo.epochs = 3;
  cfg.task.train_motion_steps = 20;
  auto run_once = [&](int threads) {
    RunConfig c = cfg;
    c.ppo.threads = threads;
    const TrainResult t = train_grasp_policy(hand(), scene(), labels, c);
    Policies p;
    p.grasp = &t.net;
    c.eval.mode = EvalMode::Motion;
    c.eval.interpenetration_samples = 20000;
    const auto rollouts = evaluate_labels(hand(), scene(), labels, c, p);
    std::string logs;
    for (const auto& e : rollouts) logs += rollout_jsonl(e.rollout, {{"label", e.rollout.label_index}});
    const nlohmann::json cj = run_config_to_json(cfg);
    return std::vector<std::string>{checkpoint_string(t.net, cj), logs,
                                    report_csv(report_from(rollouts), cj, version_string())};
  };
  const auto a = run_once(1);
  const auto b = run_once(1);
  const auto c = run_once(3);
  o.check(a[0] == b[0] && a[0] == c[0], "checkpoints");
  o.check(a[1] == b[1] && a[1] == c[1], "rollouts");
  o.check(a[2] == b[2] && a[2] == c[2], "reports");
  o.detail << "checkpoint " << a[0].size() << " B, rollouts " << a[1].size() << " B, report " << a[2].size()
           << " B identical across runs and thread counts";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  TrainingRecipe recipe;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--seed", recipe.seed, "Training seed for criterion 7")->capture_default_str();
  app.add_option("--epochs", recipe.epochs, "Training epochs for criterion 7")->capture_default_str();
  app.add_option("--episodes-per-worker", recipe.episodes_per_worker, "Episodes per worker and epoch")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<GraspLabel> labels = generate_labels(hand(), scene(), "sphere40", 4, 7);
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"physics sanity", physics_sanity},
      {"math oracles", math_oracles},
      {"feature invariance", [&](Outcome& o) { feature_invariance(labels, o); }},
      {"contact derivation", contact_derivation},
      {"closed-loop motion contraction", [&](Outcome& o) { motion_contraction(labels, o); }},
      {"metrics", [&](Outcome& o) { metrics_checks(labels, o); }},
      {"desk-scale training", [&](Outcome& o) { desk_training(labels, recipe, o); }},
      {"baseline ordering", baseline_ordering},
      {"reproducibility", [&](Outcome& o) { reproducibility(labels, o); }},
  };
  bool all = true;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [error: " << e.what() << "]";
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail.str()
              << std::endl;
  }
  return all ? 0 : 1;
}
