#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dgrasp/control.hpp"
#include "dgrasp/label_generation.hpp"
#include "test_util.hpp"

using namespace dgrasp;
using namespace dgrasp::testing;

namespace {

const HandModel& hand() {
  static const HandModel m = default_desk_hand();
  return m;
}

const SceneConfig& scene() {
  static const SceneConfig s = default_scene();
  return s;
}

const std::vector<GraspLabel>& labels() {
  static const auto l = generate_labels(hand(), scene(), "sphere40", 4, 7);
  return l;
}

const SurfacePointSet& points() {
  static const SurfacePointSet p = sample_surface(scene().object("sphere40").shape);
  return p;
}

const ActorCritic& untrained_policy() {
  static const ActorCritic net = [] {
    std::mt19937_64 rng(3);
    return ActorCritic::create(static_cast<int>(grasp_observation_size(hand().joint_count(), hand().link_count())),
                               grasp_action_size(hand()), PpoConfig{}, rng);
  }();
  return net;
}

SimState state_at_label(const GraspLabel& l) {
  const ObjectBody obj{scene().object(l.object_id), l.object_pose, {}};
  return make_state(hand(), HandState::at_rest(hand(), l.hand_pose, l.q), obj, scene().surface_height);
}

GraspLabel fingertip_contacts_only(GraspLabel l) {
  l.target_contacts.setZero();
  for (int tip : hand().fingertips) l.target_contacts[tip] = 1;
  return l;
}

double wrist_object_drift(const RolloutRecord& r) {
  const Pose6D rel0 = relative_to(r.steps.front().object, r.steps.front().hand);
  double worst = 0.0;
  for (const auto& s : r.steps) worst = std::max(worst, (relative_to(s.object, s.hand).position - rel0.position).norm());
  return worst;
}

}  // namespace

TEST(MotionStep, ObjectAtGoalKeepsTheWrist) {
  const SimState s = state_at_label(labels()[0]);
  EXPECT_TRUE(approx_equal(motion_step_closed_loop(s, s.object.pose, 0.05), s.hand.wrist, 1e-12));
}

TEST(MotionStep, PureLiftMovesTheWristByBetaOfTheGap) {
  const SimState s = state_at_label(labels()[0]);
  Pose6D goal = s.object.pose;
  goal.position.z() += 0.2;
  const Pose6D target = motion_step_closed_loop(s, goal, 0.05);
  EXPECT_LT((target.position - (s.hand.wrist.position + Vec3(0, 0, 0.01))).norm(), 1e-12);
  EXPECT_LT(geodesic_distance(target.orientation, s.hand.wrist.orientation), 1e-12);
}

TEST(MotionStep, WeldedKinematicGapContractsGeometrically) {
  SimConfig cfg = scene().sim;
  cfg.kinematic = true;
  SimState s = set_surface(state_at_label(labels()[1]), SurfaceMode::Removed);
  s.weld_object();
  std::mt19937_64 rng(61);
  const Pose6D goal = compose(s.object.pose, Pose6D(random_vec(rng, 0.1), exp_map(random_vec(rng, 0.4))));
  const double beta = 0.05;
  const double p0 = (goal.position - s.object.pose.position).norm();
  const double r0 = geodesic_distance(goal.orientation, s.object.pose.orientation);
  for (int k = 1; k <= 40; ++k) {
    s = step(hand(), cfg, s, {s.hand.q, motion_step_closed_loop(s, goal, beta)});
    const double f = std::pow(1.0 - beta, k);
    EXPECT_NEAR((goal.position - s.object.pose.position).norm(), f * p0, 1e-9);
    EXPECT_NEAR(geodesic_distance(goal.orientation, s.object.pose.orientation), f * r0, 1e-9);
  }
}

TEST(MotionStep, StationKeepingAtTheCurrentPose) {
  SimConfig cfg = scene().sim;
  cfg.kinematic = true;
  SimState s = set_surface(state_at_label(labels()[2]), SurfaceMode::Removed);
  s.weld_object();
  const Pose6D goal = s.object.pose;
  for (int k = 0; k < 50; ++k) s = step(hand(), cfg, s, {s.hand.q, motion_step_limited(s, goal, 0.05, 0.003, 0.02)});
  EXPECT_TRUE(approx_equal(s.object.pose, goal, 1e-9));
}

TEST(MotionStep, LimitedStepRespectsRates) {
  const SimState s = state_at_label(labels()[0]);
  Pose6D goal = s.object.pose;
  goal.position += Vec3(0.5, -0.3, 0.4);
  goal.orientation = exp_map(Vec3(0, 0, 1.0)) * goal.orientation;
  const Pose6D t = motion_step_limited(s, goal, 1.0, 0.003, 0.02);
  EXPECT_NEAR((t.position - s.hand.wrist.position).norm(), 0.003, 1e-12);
  EXPECT_NEAR(geodesic_distance(t.orientation, s.hand.wrist.orientation), 0.02, 1e-9);
}

TEST(MotionStep, RejectsInvalidBeta) {
  const SimState s = state_at_label(labels()[0]);
  EXPECT_THROW(motion_step_closed_loop(s, s.object.pose, 0.0), std::invalid_argument);
  EXPECT_THROW(motion_step_closed_loop(s, s.object.pose, 1.5), std::invalid_argument);
}

TEST(GraspAction, ZeroActionAtTheLabelHoldsTheLabel) {
  const GraspLabel& l = labels()[0];
  const SimState s = state_at_label(l);
  const HandAction cmd = grasp_action_to_command(hand(), s, l, l.object_pose, Eigen::VectorXd::Zero(12), ActionScale{});
  EXPECT_LT((cmd.q_ref - l.q).norm(), 1e-12);
  EXPECT_TRUE(approx_equal(cmd.wrist_target, l.hand_pose, 1e-12));
}

TEST(GraspAction, TargetsAreRateLimited) {
  const GraspLabel& l = labels()[0];
  SimState s = state_at_label(l);
  s.hand.q.setZero();
  s.hand.wrist.position += Vec3(0.0, 0.0, 0.1);
  const ActionScale sc;
  const HandAction cmd = grasp_action_to_command(hand(), s, l, l.object_pose, Eigen::VectorXd::Ones(12), sc);
  EXPECT_LE((cmd.q_ref - s.hand.q).cwiseAbs().maxCoeff(), sc.joint_rate + 1e-12);
  EXPECT_LE((cmd.wrist_target.position - s.hand.wrist.position).norm(), sc.wrist_pos_rate + 1e-12);
  for (int j = 0; j < 6; ++j) {
    EXPECT_GE(cmd.q_ref[j], hand().limits[j].lo);
    EXPECT_LE(cmd.q_ref[j], hand().limits[j].hi);
  }
  EXPECT_THROW(grasp_action_to_command(hand(), s, l, l.object_pose, Eigen::VectorXd::Zero(5), sc), std::invalid_argument);
}

TEST(Goals, SamplesStayInTheBox) {
  const GoalSampler g;
  const Pose6D base = labels()[0].object_pose;
  std::mt19937_64 rng(62);
  for (int i = 0; i < 200; ++i) {
    const Pose6D p = g.sample(base, rng);
    const Vec3 off = p.position - base.position - g.center;
    EXPECT_LE(off.cwiseAbs().maxCoeff() - g.half_extent.maxCoeff(), 1e-12);
    EXPECT_LE(std::abs(off.z()), g.half_extent.z() + 1e-12);
    EXPECT_LE(geodesic_distance(p.orientation, base.orientation), g.yaw_range + 1e-9);
    // pure yaw: the world z axis of the object is unchanged
    EXPECT_LT(((p.orientation * base.orientation.inverse()) * Vec3::UnitZ() - Vec3::UnitZ()).norm(), 1e-9);
  }
}

TEST(Hierarchical, EpisodeLengthsAndPhases) {
  const GraspLabel& l = labels()[0];
  const TaskConfig task;
  EpisodePlan grasp_only;
  const RolloutRecord a = run_hierarchical(hand(), scene(), untrained_policy(), MotionModule{}, l, grasp_only, task);
  ASSERT_EQ(a.steps.size(), 195u);
  for (const auto& s : a.steps) EXPECT_EQ(s.phase, Phase::Grasp);

  EpisodePlan with_goal;
  std::mt19937_64 rng(63);
  with_goal.goal = task.goals.sample(l.object_pose, rng);
  const RolloutRecord b = run_hierarchical(hand(), scene(), untrained_policy(), MotionModule{}, l, with_goal, task);
  ASSERT_EQ(b.steps.size(), 300u);
  EXPECT_EQ(b.steps[194].phase, Phase::Grasp);
  EXPECT_EQ(b.steps[195].phase, Phase::Motion);
  EXPECT_EQ(b.steps.back().phase, Phase::Motion);
  EXPECT_EQ(b.steps.back().t, 299);

  EpisodePlan hold;
  hold.hold_steps = 173;
  const RolloutRecord c = run_hierarchical(hand(), scene(), untrained_policy(), MotionModule{}, l, hold, task);
  ASSERT_EQ(c.steps.size(), 368u);
  EXPECT_EQ(c.steps[195].phase, Phase::Hold);
}

TEST(Hierarchical, HandoffIsContinuous) {
  const GraspLabel& l = labels()[1];
  const TaskConfig task;
  EpisodePlan plan;
  std::mt19937_64 rng(64);
  plan.goal = task.goals.sample(l.object_pose, rng);
  const RolloutRecord r = run_hierarchical(hand(), scene(), untrained_policy(), MotionModule{}, l, plan, task);
  // the wrist moves under PD dynamics, so a switch of targets cannot jump it
  const double jump = (r.steps[195].hand.position - r.steps[194].hand.position).norm();
  EXPECT_LT(jump, task.action.wrist_pos_rate);
  EXPECT_LT(geodesic_distance(r.steps[195].hand.orientation, r.steps[194].hand.orientation), task.action.wrist_rot_rate);
}

TEST(Hierarchical, Deterministic) {
  const GraspLabel& l = labels()[2];
  EpisodePlan plan;
  plan.hold_steps = 20;
  const auto a = run_hierarchical(hand(), scene(), untrained_policy(), MotionModule{}, l, plan, TaskConfig{});
  const auto b = run_hierarchical(hand(), scene(), untrained_policy(), MotionModule{}, l, plan, TaskConfig{});
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (size_t t = 0; t < a.steps.size(); ++t) {
    EXPECT_EQ(a.steps[t].object.position, b.steps[t].object.position);
    EXPECT_EQ(a.steps[t].q, b.steps[t].q);
  }
}

TEST(BaselinePd, WeldedObjectNeverSlips) {
  BaselineOptions opt;
  opt.weld_object = true;
  const RolloutRecord r = baseline_pd(hand(), scene(), labels()[0], opt);
  ASSERT_EQ(r.steps.size(), 1u + kHoldWindowSteps);
  EXPECT_LT(wrist_object_drift(r), 1e-9);
}

TEST(BaselinePd, HandAwayFromTheObjectDropsIt) {
  GraspLabel l = labels()[0];
  l.hand_pose.position.z() += 0.3;
  const RolloutRecord r = baseline_pd(hand(), scene(), l);
  EXPECT_GT(r.steps.front().object.position.z() - r.steps.back().object.position.z(), kFallThreshold);
}

TEST(BaselinePd, DeterministicAndWithinJointLimits) {
  GraspLabel l = labels()[3];
  l.q[0] = 10.0;
  l.q[1] = -10.0;
  const RolloutRecord a = baseline_pd(hand(), scene(), l);
  const RolloutRecord b = baseline_pd(hand(), scene(), l);
  EXPECT_EQ(a.steps.back().object.position, b.steps.back().object.position);
  for (const auto& s : a.steps)
    for (int j = 0; j < 6; ++j) {
      EXPECT_GE(s.q[j], hand().limits[j].lo - 0.05);
      EXPECT_LE(s.q[j], hand().limits[j].hi + 0.05);
    }
}

TEST(BaselineIk, TouchingLabelIsAFixedPoint) {
  const ObjectShape& shape = scene().object("sphere40").shape;
  GraspLabel l = fingertip_contacts_only(labels()[0]);
  const IkResult first = ik_correct_label(hand(), shape, l);
  ASSERT_LT(first.residual, 1e-6);
  l.hand_pose = first.hand_pose;
  l.q = first.q;
  const IkResult again = ik_correct_label(hand(), shape, l);
  for (int k = 0; k < hand().link_count(); ++k) EXPECT_LT((again.keypoints[k] - first.keypoints[k]).norm(), 1e-4);
  EXPECT_LT((again.hand_pose.position - l.hand_pose.position).norm(), 1e-4);
}

TEST(BaselineIk, FingertipsOffTheSurfaceArePulledOntoIt) {
  const ObjectShape& shape = scene().object("sphere40").shape;
  std::mt19937_64 rng(65);
  for (const GraspLabel& clean : labels()) {
    // wrist backed off 5 mm along the approach axis
    GraspLabel l = fingertip_contacts_only(clean);
    l.hand_pose.position += 0.005 * (l.hand_pose.orientation * Vec3::UnitZ());
    const IkResult ik = ik_correct_label(hand(), shape, l);
    ASSERT_TRUE(ik.converged);
    for (int tip : hand().fingertips) EXPECT_LT(std::abs(shape.closest(ik.keypoints[tip]).signed_distance), 1e-3);
  }
}

TEST(BaselineIk, ReducesKeypointErrorOnNoisyLabels) {
  const ObjectShape& shape = scene().object("sphere40").shape;
  std::mt19937_64 rng(66);
  for (const GraspLabel& clean : labels()) {
    const GraspLabel noisy = corrupt_label(hand(), clean, 0.005, rng, points());
    const IkResult none = ik_correct_label(hand(), shape, noisy, 0);
    const IkResult ik = ik_correct_label(hand(), shape, noisy);
    ASSERT_TRUE(ik.converged);
    EXPECT_LT(ik.residual, none.residual);
  }
}

TEST(BaselineIk, LinksWithoutContactKeepTheirKeypoints) {
  const ObjectShape& shape = scene().object("sphere40").shape;
  const GraspLabel l = fingertip_contacts_only(labels()[1]);
  const HandKinematics fk = forward_kinematics(hand(), relative_to(l.hand_pose, l.object_pose), l.q);
  const IkResult ik = ik_correct_label(hand(), shape, l);
  for (int k = 0; k < hand().link_count(); ++k) {
    if (l.target_contacts[k])
      EXPECT_LT(std::abs(shape.closest(ik.keypoints[k]).signed_distance), 1e-3) << "link " << k;
    else
      EXPECT_LT((ik.keypoints[k] - fk.joint_positions[k]).norm(), 1e-3) << "link " << k;
  }
}

TEST(BaselineIk, RunsThePdHoldOnTheCorrectedLabel) {
  BaselineOptions opt;
  opt.hold_steps = 10;
  const RolloutRecord r = baseline_ik(hand(), scene(), labels()[0], opt);
  EXPECT_EQ(r.controller, to_string(ControllerKind::BaselineIk));
  EXPECT_EQ(r.steps.size(), 11u);
}

TEST(CorruptLabel, WristShiftHasTheNoiseLength) {
  std::mt19937_64 rng(66);
  const GraspLabel& l = labels()[0];
  for (double noise : {0.0, 0.005, 0.02}) {
    const GraspLabel c = corrupt_label(hand(), l, noise, rng, points());
    EXPECT_NEAR((c.hand_pose.position - l.hand_pose.position).norm(), noise, 1e-12);
    if (noise == 0.0) {
      EXPECT_EQ(c.q, l.q);
    }
  }
}

TEST(Envs, ObservationAndActionSizes) {
  const GraspLabel& l = labels()[0];
  TaskConfig task;
  task.train_motion_steps = 5;
  std::mt19937_64 rng(67);
  GraspEnv g(hand(), scene(), l, task);
  EXPECT_EQ(g.reset(rng).size(), g.observation_size());
  EXPECT_EQ(g.action_size(), 12);
  int n = 0;
  for (bool done = false; !done; ++n) done = g.step(Eigen::VectorXd::Zero(12)).done;
  EXPECT_EQ(n, 195 + 5);
  const double ok = g.episode_success();
  EXPECT_TRUE(ok == 0.0 || ok == 1.0);

  FlatEnv f(hand(), scene(), l, task);
  EXPECT_EQ(f.observation_size(), g.observation_size() + static_cast<int>(kMotionObservationSize));
  EXPECT_EQ(f.reset(rng).size(), f.observation_size());
  EXPECT_EQ(f.step(Eigen::VectorXd::Zero(12)).observation.size(), f.observation_size());

  MotionEnv m(hand(), scene(), l, task, untrained_policy());
  EXPECT_EQ(m.reset(rng).size(), static_cast<Eigen::Index>(kMotionObservationSize));
  n = 0;
  for (bool done = false; !done; ++n) done = m.step(Eigen::VectorXd::Zero(6)).done;
  EXPECT_EQ(n, 300 - 195);
}

TEST(TaskConfigJson, RoundTripAndValidation) {
  TaskConfig t;
  t.motion_beta = 0.1;
  t.action.joint = 0.2;
  const TaskConfig back = task_config_from_json(task_config_to_json(t));
  EXPECT_EQ(task_config_to_json(back), task_config_to_json(t));
  EXPECT_THROW(task_config_from_json({{"grasp_step", 3}}), std::invalid_argument);
  EXPECT_THROW(task_config_from_json({{"grasp_steps", 300}}), std::invalid_argument);
  EXPECT_THROW(task_config_from_json({{"motion_beta", 0.0}}), std::invalid_argument);
  EXPECT_THROW(goal_sampler_from_json({{"yaw_range", -1.0}}), std::invalid_argument);
  EXPECT_EQ(controller_from_string(to_string(ControllerKind::BaselineIk)), ControllerKind::BaselineIk);
  EXPECT_THROW(controller_from_string("nope"), std::invalid_argument);
}
