#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/features.hpp"
#include "dgrasp/grasp_label.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/ppo.hpp"
#include "dgrasp/rewards.hpp"
#include "dgrasp/se3.hpp"
#include "dgrasp/sim.hpp"

namespace dgrasp {

inline constexpr int kHoldWindowSteps = 173;  // 5 s at 13 x 2.22 ms per action
inline constexpr double kFallThreshold = 0.25;  // m

enum class ControllerKind { OursPdMotion, OursLearnedMotion, BaselinePd, BaselineIk, FlatRl };

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::OursPdMotion: return "ours-pd";
    case ControllerKind::OursLearnedMotion: return "ours-learned";
    case ControllerKind::BaselinePd: return "baseline-pd";
    case ControllerKind::BaselineIk: return "baseline-ik";
    case ControllerKind::FlatRl: return "flat-rl";
  }
  return "?";
}

inline ControllerKind controller_from_string(const std::string& s) {
  for (auto k : {ControllerKind::OursPdMotion, ControllerKind::OursLearnedMotion, ControllerKind::BaselinePd,
                 ControllerKind::BaselineIk, ControllerKind::FlatRl})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown controller '" + s +
                              "' (expected ours-pd, ours-learned, baseline-pd, baseline-ik or flat-rl)");
}

/// Ranges of the normalized [-1, 1] action channels and per-step rate limits
/// of the PD targets.
struct ActionScale {
  double joint = 0.1;            // rad, residual around the label joint angles
  double wrist_pos = 0.002;      // m, residual around the label wrist pose, wrist frame
  double wrist_rot = 0.01;       // rad
  double joint_rate = 0.15;      // rad per control step
  double wrist_pos_rate = 0.01;  // m per control step
  double wrist_rot_rate = 0.05;  // rad per control step
};

/// LabelResidual: the wrist target is the label wrist pose re-expressed for
/// the object pose at episode start (the anchor), offset by the action. Incremental: the action
/// moves the wrist target relative to the current wrist pose.
enum class WristActionMode { LabelResidual, Incremental };

/// Grasp action layout: [joint residuals (J), wrist translation (3), wrist rotation (3)].
inline int grasp_action_size(const HandModel& model) { return model.joint_count() + 6; }

/// Label wrist pose re-expressed for the object's current pose.
inline Pose6D label_wrist_reference(const GraspLabel& label, const Pose6D& object_pose) {
  return compose(object_pose, relative_to(label.hand_pose, label.object_pose));
}

/// Moves from `from` toward `to` by at most the given translation and angle.
inline Pose6D rate_limited_target(const Pose6D& from, const Pose6D& to, double max_pos, double max_rot) {
  PoseDelta d = pose_delta(from, to);
  const double dp = d.translation.norm();
  const double dr = d.rotation.norm();
  if (dp > max_pos) d.translation *= max_pos / dp;
  if (dr > max_rot) d.rotation *= max_rot / dr;
  return scaled_pose_step(from, d, 1.0);
}

inline HandAction grasp_action_to_command(const HandModel& model, const SimState& state, const GraspLabel& label,
                                          const Pose6D& anchor, const Eigen::VectorXd& a, const ActionScale& scale,
                                          WristActionMode mode = WristActionMode::LabelResidual) {
  const int j = model.joint_count();
  if (a.size() != j + 6) throw std::invalid_argument("grasp action: expected " + std::to_string(j + 6) + " values");
  const Eigen::VectorXd c = a.cwiseMax(-1.0).cwiseMin(1.0);
  const HandState& hand = state.hand;
  HandAction cmd;
  const Eigen::VectorXd goal = clamp_to_limits(model, label.q + scale.joint * c.head(j));
  cmd.q_ref = clamp_to_limits(
      model, hand.q + (goal - hand.q).cwiseMax(-scale.joint_rate).cwiseMin(scale.joint_rate));
  if (mode == WristActionMode::LabelResidual) {
    const Pose6D residual(scale.wrist_pos * c.segment<3>(j), exp_map(scale.wrist_rot * c.segment<3>(j + 3)));
    const Pose6D desired = compose(label_wrist_reference(label, anchor), residual);
    cmd.wrist_target = rate_limited_target(hand.wrist, desired, scale.wrist_pos_rate, scale.wrist_rot_rate);
  } else {
    const Pose6D offset(scale.wrist_pos_rate * c.segment<3>(j), exp_map(scale.wrist_rot_rate * c.segment<3>(j + 3)));
    cmd.wrist_target = compose(hand.wrist, offset);
  }
  return cmd;
}

/// Action change in physical units (rad, m): the regularized PD-target rate.
inline Eigen::VectorXd grasp_action_rate(const HandModel& model, const Eigen::VectorXd& a, const Eigen::VectorXd& prev,
                                         const ActionScale& scale) {
  const int j = model.joint_count();
  Eigen::VectorXd d = a.cwiseMax(-1.0).cwiseMin(1.0) - prev.cwiseMax(-1.0).cwiseMin(1.0);
  d.head(j) *= scale.joint;
  d.segment<3>(j) *= scale.wrist_pos;
  d.segment<3>(j + 3) *= scale.wrist_rot;
  return d;
}

/// Motion action layout: [wrist translation (3), wrist rotation (3)], world frame.
inline Pose6D motion_action_to_target(const HandState& hand, const Eigen::VectorXd& a, const ActionScale& scale) {
  if (a.size() != 6) throw std::invalid_argument("motion action: expected 6 values");
  const Eigen::VectorXd c = a.cwiseMax(-1.0).cwiseMin(1.0);
  return {hand.wrist.position + scale.wrist_pos_rate * c.head<3>(),
          exp_map(scale.wrist_rot_rate * c.tail<3>()) * hand.wrist.orientation};
}

// ---------------------------------------------------------------------------
// Goals

/// Goal poses relative to the label's object pose: position offset drawn from
/// the box center +- half_extent, yaw about world z from +-yaw_range.
struct GoalSampler {
  Vec3 center = Vec3(0.0, 0.0, 0.1);
  Vec3 half_extent = Vec3(0.1, 0.1, 0.05);
  double yaw_range = std::numbers::pi / 4.0;

  Pose6D sample(const Pose6D& object_pose, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec3 off;
    for (int i = 0; i < 3; ++i) off[i] = center[i] + half_extent[i] * u(rng);
    const double yaw = yaw_range * u(rng);
    return {object_pose.position + off, canonical(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())) * object_pose.orientation)};
  }
};

inline nlohmann::json goal_sampler_to_json(const GoalSampler& g) {
  return {{"center", vec3_to_json(g.center)}, {"half_extent", vec3_to_json(g.half_extent)}, {"yaw_range", g.yaw_range}};
}

inline GoalSampler goal_sampler_from_json(const nlohmann::json& j) {
  GoalSampler g;
  detail::reject_unknown_keys(j, {"center", "half_extent", "yaw_range"}, "goals");
  if (j.contains("center")) g.center = vec3_from_json(j["center"], "goals.center");
  if (j.contains("half_extent")) g.half_extent = vec3_from_json(j["half_extent"], "goals.half_extent");
  detail::read_field(j, "yaw_range", g.yaw_range, "goals");
  if ((g.half_extent.array() < 0.0).any() || g.yaw_range < 0.0)
    throw std::invalid_argument("goals: extents must be non-negative");
  return g;
}

// ---------------------------------------------------------------------------
// Closed-loop motion

/// Wrist pose that puts the object at `goal` when the object sits at
/// `object_in_wrist` relative to the wrist.
inline Pose6D estimated_hand_target(const Pose6D& goal, const Pose6D& object_in_wrist) {
  return compose(goal, inverse(object_in_wrist));
}

/// Next wrist target: the object's current pose gap to `goal`, scaled by
/// beta, carried rigidly over to the wrist. Recomputed from the measured
/// object pose every control step.
inline Pose6D motion_step_closed_loop(const SimState& state, const Pose6D& goal, double beta) {
  if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("motion beta must be in (0, 1]");
  const Pose6D& object = state.object.pose;
  const Pose6D object_step = scaled_pose_step(object, pose_delta(object, goal), beta);
  return estimated_hand_target(object_step, relative_to(object, state.hand.wrist));
}

/// Closed-loop step with the wrist target kept within the given per-step
/// translation and rotation of the current wrist pose.
inline Pose6D motion_step_limited(const SimState& state, const Pose6D& goal, double beta, double max_pos,
                                  double max_rot) {
  return rate_limited_target(state.hand.wrist, motion_step_closed_loop(state, goal, beta), max_pos, max_rot);
}

// ---------------------------------------------------------------------------
// Episode setup

struct TaskConfig {
  int grasp_steps = 195;
  int total_steps = 300;
  int hold_steps = kHoldWindowSteps;  // evaluation window after the grasp phase
  int train_motion_steps = 105;       // closed-loop motion steps appended to grasp training episodes
  double train_surface_drop = 0.3;    // m, surface lowering after the grasp phase in training
  double train_hold_fraction = 0.5;   // share of training episodes without motion after the grasp phase
  double approach_offset = 0.10;      // m, start distance of the wrist along its approach axis
  double fall_threshold = kFallThreshold;
  double motion_beta = 0.05;
  double motion_pos_rate = 0.003;  // m per control step, wrist speed limit during motion
  double motion_rot_rate = 0.02;   // rad per control step
  ActionScale action;
  RewardWeights rewards;
  GoalSampler goals;

  void validate() const {
    if (grasp_steps < 1 || total_steps <= grasp_steps)
      throw std::invalid_argument("task: need 0 < grasp_steps < total_steps");
    if (hold_steps < 1 || train_motion_steps < 0) throw std::invalid_argument("task: hold windows must be positive");
    if (!(train_hold_fraction >= 0.0 && train_hold_fraction <= 1.0))
      throw std::invalid_argument("task.train_hold_fraction must be in [0, 1]");
    if (approach_offset < 0.0 || !(fall_threshold > 0.0) || !(train_surface_drop > 0.0)) throw std::invalid_argument("task: invalid distances");
    if (!(motion_beta > 0.0 && motion_beta <= 1.0)) throw std::invalid_argument("task.motion_beta must be in (0, 1]");
    if (!(motion_pos_rate > 0.0 && motion_rot_rate > 0.0)) throw std::invalid_argument("task: motion rates must be > 0");
    if (!(action.joint > 0.0 && action.wrist_pos > 0.0 && action.wrist_rot > 0.0 && action.joint_rate > 0.0 &&
          action.wrist_pos_rate > 0.0 && action.wrist_rot_rate > 0.0))
      throw std::invalid_argument("task: action scales must be > 0");
  }
};

inline nlohmann::json task_config_to_json(const TaskConfig& t) {
  return {{"grasp_steps", t.grasp_steps},
          {"total_steps", t.total_steps},
          {"hold_steps", t.hold_steps},
          {"train_motion_steps", t.train_motion_steps},
          {"train_surface_drop", t.train_surface_drop},
          {"train_hold_fraction", t.train_hold_fraction},
          {"approach_offset", t.approach_offset},
          {"fall_threshold", t.fall_threshold},
          {"motion_beta", t.motion_beta},
          {"motion_pos_rate", t.motion_pos_rate},
          {"motion_rot_rate", t.motion_rot_rate},
          {"action_joint", t.action.joint},
          {"action_wrist_pos", t.action.wrist_pos},
          {"action_wrist_rot", t.action.wrist_rot},
          {"rate_joint", t.action.joint_rate},
          {"rate_wrist_pos", t.action.wrist_pos_rate},
          {"rate_wrist_rot", t.action.wrist_rot_rate}};
}

inline TaskConfig task_config_from_json(const nlohmann::json& j, TaskConfig t = {}) {
  detail::reject_unknown_keys(j,
                              {"grasp_steps", "total_steps", "hold_steps", "train_motion_steps", "train_surface_drop", "train_hold_fraction",
                               "approach_offset",
                               "fall_threshold", "motion_beta", "motion_pos_rate", "motion_rot_rate", "action_joint", "action_wrist_pos",
                               "action_wrist_rot", "rate_joint", "rate_wrist_pos", "rate_wrist_rot"},
                              "task");
  detail::read_field(j, "grasp_steps", t.grasp_steps, "task");
  detail::read_field(j, "total_steps", t.total_steps, "task");
  detail::read_field(j, "hold_steps", t.hold_steps, "task");
  detail::read_field(j, "train_motion_steps", t.train_motion_steps, "task");
  detail::read_field(j, "train_surface_drop", t.train_surface_drop, "task");
  detail::read_field(j, "train_hold_fraction", t.train_hold_fraction, "task");
  detail::read_field(j, "approach_offset", t.approach_offset, "task");
  detail::read_field(j, "fall_threshold", t.fall_threshold, "task");
  detail::read_field(j, "motion_beta", t.motion_beta, "task");
  detail::read_field(j, "motion_pos_rate", t.motion_pos_rate, "task");
  detail::read_field(j, "motion_rot_rate", t.motion_rot_rate, "task");
  detail::read_field(j, "action_joint", t.action.joint, "task");
  detail::read_field(j, "action_wrist_pos", t.action.wrist_pos, "task");
  detail::read_field(j, "action_wrist_rot", t.action.wrist_rot, "task");
  detail::read_field(j, "rate_joint", t.action.joint_rate, "task");
  detail::read_field(j, "rate_wrist_pos", t.action.wrist_pos_rate, "task");
  detail::read_field(j, "rate_wrist_rot", t.action.wrist_rot_rate, "task");
  t.validate();
  return t;
}

/// Hand backed off along its approach axis with open fingers, object resting
/// at the label pose.
inline SimState grasp_start_state(const HandModel& model, const SceneConfig& scene, const GraspLabel& label,
                                  double approach_offset) {
  const Vec3 approach = label.hand_pose.orientation * Vec3::UnitZ();
  const Pose6D wrist(label.hand_pose.position + approach * approach_offset, label.hand_pose.orientation);
  const Eigen::VectorXd q = clamp_to_limits(model, Eigen::VectorXd::Zero(model.joint_count()));
  ObjectBody obj{scene.object(label.object_id), label.object_pose, {}};
  return make_state(model, HandState::at_rest(model, wrist, q), obj, scene.surface_height);
}

// ---------------------------------------------------------------------------
// Rollout records

enum class Phase { Grasp, Hold, Motion };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::Grasp: return "grasp";
    case Phase::Hold: return "hold";
    case Phase::Motion: return "motion";
  }
  return "?";
}

inline Phase phase_from_string(const std::string& s) {
  if (s == "grasp") return Phase::Grasp;
  if (s == "hold") return Phase::Hold;
  if (s == "motion") return Phase::Motion;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

struct RolloutStep {
  int t = 0;
  Pose6D hand;
  Eigen::VectorXd q;
  Pose6D object;
  Eigen::VectorXd link_force;
  double reward = 0.0;
  Phase phase = Phase::Grasp;
};

struct RolloutRecord {
  std::string object_id;
  int label_index = 0;
  std::string controller;
  double control_dt = 0.0;
  std::vector<RolloutStep> steps;  // state after each action
  std::optional<Pose6D> goal;

  /// Steps of the given phase, in order.
  std::vector<const RolloutStep*> phase_steps(Phase p) const {
    std::vector<const RolloutStep*> out;
    for (const auto& s : steps)
      if (s.phase == p) out.push_back(&s);
    return out;
  }
};

inline RolloutStep record_step(int t, const SimState& s, double reward, Phase phase) {
  return {t, s.hand.wrist, s.hand.q, s.object.pose, s.link_force, reward, phase};
}

inline nlohmann::json rollout_step_to_json(const RolloutStep& s) {
  auto contacts = nlohmann::json::array();
  for (Eigen::Index l = 0; l < s.link_force.size(); ++l)
    if (s.link_force[l] > 0.0) contacts.push_back({{"link", l}, {"force", s.link_force[l]}});
  return {{"t", s.t},
          {"T_h", pose_to_json(s.hand)},
          {"q_h", std::vector<double>(s.q.data(), s.q.data() + s.q.size())},
          {"T_o", pose_to_json(s.object)},
          {"contacts", contacts},
          {"reward", s.reward},
          {"phase", to_string(s.phase)}};
}

/// Per-link force vector restored from the sparse contact list.
inline RolloutStep rollout_step_from_json(const nlohmann::json& j, int links) {
  RolloutStep s;
  s.t = j.at("t").get<int>();
  s.hand = pose_from_json(j.at("T_h"), "T_h");
  const auto q = j.at("q_h").get<std::vector<double>>();
  s.q = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  s.object = pose_from_json(j.at("T_o"), "T_o");
  s.link_force = Eigen::VectorXd::Zero(links);
  for (const auto& c : j.at("contacts")) {
    const int l = c.at("link").get<int>();
    if (l < 0 || l >= links) throw std::invalid_argument("rollout contact link out of range");
    s.link_force[l] = c.at("force").get<double>();
  }
  s.reward = j.at("reward").get<double>();
  s.phase = phase_from_string(j.at("phase").get<std::string>());
  return s;
}

// ---------------------------------------------------------------------------
// Grasp environment (one label per instance)

class GraspEnv : public Env {
 public:
  GraspEnv(const HandModel& model, SceneConfig scene, GraspLabel label, TaskConfig task)
      : model_(model), scene_(std::move(scene)), label_(std::move(label)), task_(task) {
    task_.validate();
    if (label_.target_positions.size() != static_cast<size_t>(model_.link_count()))
      throw std::invalid_argument("GraspEnv: label is not finalized");
  }

  int observation_size() const override {
    return static_cast<int>(grasp_observation_size(model_.joint_count(), model_.link_count()));
  }
  int action_size() const override { return grasp_action_size(model_); }

  Eigen::VectorXd reset(std::mt19937_64& rng) override {
    state_ = grasp_start_state(model_, scene_, label_, task_.approach_offset);
    anchor_ = state_.object.pose;
    goal_ = task_.goals.sample(anchor_, rng);
    hold_ = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < task_.train_hold_fraction;
    prev_action_ = Eigen::VectorXd::Zero(action_size());
    t_ = 0;
    slip_ = 0.0;
    return observe();
  }

  /// After the grasp phase the surface is lowered. In motion episodes the
  /// closed-loop motion module then takes the wrist toward the sampled goal.
  StepResult step(const Eigen::VectorXd& action) override {
    HandAction cmd = grasp_action_to_command(model_, state_, label_, anchor_, action, task_.action);
    if (t_ >= task_.grasp_steps && !hold_)
      cmd.wrist_target =
          motion_step_limited(state_, goal_, task_.motion_beta, task_.motion_pos_rate, task_.motion_rot_rate);
    state_ = dgrasp::step(model_, scene_.sim, state_, cmd);
    ++t_;
    const GraspObservation obs = extract_grasp_features(model_, state_, label_, scene_.surface_height);
    const Eigen::VectorXd rate = grasp_action_rate(model_, action, prev_action_, task_.action);
    prev_action_ = action;
    const double r = grasp_reward(model_, obs, rate, state_.object.mass(), task_.rewards);
    if (t_ == task_.grasp_steps) {
      state_ = set_surface(state_, SurfaceMode::Lowered, task_.train_surface_drop);
      grasp_offset_ = relative_to(state_.object.pose, state_.hand.wrist).position;
    }
    if (t_ > task_.grasp_steps)
      slip_ = std::max(slip_, (relative_to(state_.object.pose, state_.hand.wrist).position - grasp_offset_).norm());
    const bool done = t_ >= task_.grasp_steps + task_.train_motion_steps;
    return {obs.flatten(), r, done, done};
  }

  /// 1 if the object stayed within the fall threshold of its grasp-time
  /// position relative to the wrist, NaN without a post-grasp window.
  double episode_success() const override {
    if (task_.train_motion_steps == 0) return std::numeric_limits<double>::quiet_NaN();
    return slip_ <= task_.fall_threshold ? 1.0 : 0.0;
  }

  const SimState& state() const { return state_; }

 private:
  Eigen::VectorXd observe() const {
    return extract_grasp_features(model_, state_, label_, scene_.surface_height).flatten();
  }

  HandModel model_;
  SceneConfig scene_;
  GraspLabel label_;
  TaskConfig task_;
  SimState state_;
  Pose6D anchor_;
  Pose6D goal_;
  bool hold_ = false;
  Eigen::VectorXd prev_action_;
  int t_ = 0;
  Vec3 grasp_offset_ = Vec3::Zero();
  double slip_ = 0.0;
};

// ---------------------------------------------------------------------------
// Hierarchical controller

struct EpisodePlan {
  int grasp_steps = 195;
  int total_steps = 300;  // used when a goal is set
  int hold_steps = 0;     // used when no goal is set: surface removed, policy keeps control
  std::optional<Pose6D> goal;

  void validate() const {
    if (grasp_steps < 1) throw std::invalid_argument("plan: grasp_steps must be >= 1");
    if (goal && total_steps <= grasp_steps) throw std::invalid_argument("plan: need grasp_steps < total_steps");
    if (hold_steps < 0) throw std::invalid_argument("plan: hold_steps must be >= 0");
  }
  int length() const { return goal ? total_steps : grasp_steps + hold_steps; }
};

/// Motion synthesis for the wrist: closed-loop PD by default, a learned policy
/// when `policy` is set.
struct MotionModule {
  double beta = 0.05;
  const ActorCritic* policy = nullptr;
  ActionScale scale;
};

/// Grasp policy for the whole hand during the grasp phase. With a goal, the
/// motion module takes the wrist for the remaining steps while the grasp
/// policy keeps driving the fingers. The surface is removed when the grasp
/// phase ends.
inline RolloutRecord run_hierarchical(const HandModel& model, const SceneConfig& scene, const ActorCritic& policy_g,
                                      const MotionModule& motion, const GraspLabel& label, const EpisodePlan& plan,
                                      const TaskConfig& task) {
  plan.validate();
  SimState s = grasp_start_state(model, scene, label, task.approach_offset);
  const Pose6D anchor = s.object.pose;
  RolloutRecord rec;
  rec.object_id = label.object_id;
  rec.controller = motion.policy ? to_string(ControllerKind::OursLearnedMotion) : to_string(ControllerKind::OursPdMotion);
  rec.control_dt = scene.sim.control_dt();
  rec.goal = plan.goal;
  std::mt19937_64 unused(0);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(grasp_action_size(model));
  for (int t = 0; t < plan.length(); ++t) {
    const Phase phase = t < plan.grasp_steps ? Phase::Grasp : plan.goal ? Phase::Motion : Phase::Hold;
    if (t == plan.grasp_steps) s = set_surface(s, SurfaceMode::Removed);
    const Eigen::VectorXd obs = extract_grasp_features(model, s, label, scene.surface_height).flatten();
    const Eigen::VectorXd a = act(policy_g, obs, false, unused);
    HandAction cmd = grasp_action_to_command(model, s, label, anchor, a, task.action);
    if (phase == Phase::Motion) {
      if (motion.policy) {
        const Eigen::VectorXd mobs = extract_motion_features(s, *plan.goal).flatten();
        cmd.wrist_target = motion_action_to_target(s.hand, act(*motion.policy, mobs, false, unused), motion.scale);
      } else {
        cmd.wrist_target = motion_step_limited(s, *plan.goal, motion.beta, task.motion_pos_rate, task.motion_rot_rate);
      }
    }
    s = step(model, scene.sim, s, cmd);
    double r = 0.0;
    const GraspObservation gobs = extract_grasp_features(model, s, label, scene.surface_height);
    const Eigen::VectorXd rate = grasp_action_rate(model, a, prev, task.action);
    prev = a;
    if (phase == Phase::Motion)
      r = motion_reward(extract_motion_features(s, *plan.goal), task.rewards);
    else
      r = grasp_reward(model, gobs, rate, s.object.mass(), task.rewards);
    rec.steps.push_back(record_step(t, s, r, phase));
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Baselines

struct BaselineOptions {
  int hold_steps = kHoldWindowSteps;
  bool weld_object = false;  // debug: object rigidly attached to the wrist
};

/// Teleports the hand to the label and holds q_ref = q̄, wrist target = T̄_h
/// with the surface removed for the evaluation window. The recorded steps are
/// one grasp-phase step (the teleported state) followed by the hold window.
inline RolloutRecord baseline_pd(const HandModel& model, const SceneConfig& scene, const GraspLabel& label,
                                 const BaselineOptions& opt = {}) {
  ObjectBody obj{scene.object(label.object_id), label.object_pose, {}};
  const Eigen::VectorXd q = clamp_to_limits(model, label.q);
  SimState s = make_state(model, HandState::at_rest(model, label.hand_pose, q), obj, scene.surface_height);
  s.contacts = detect_contacts(model, forward_kinematics(model, s.hand.wrist, s.hand.q), s.object, s.surface,
                               scene.sim.hand_surface_collision);
  RolloutRecord rec;
  rec.object_id = label.object_id;
  rec.controller = to_string(ControllerKind::BaselinePd);
  rec.control_dt = scene.sim.control_dt();
  rec.steps.push_back(record_step(0, s, 0.0, Phase::Grasp));
  if (opt.weld_object) s.weld_object();
  s = set_surface(s, SurfaceMode::Removed);
  const HandAction cmd{q, label.hand_pose};
  for (int t = 1; t <= opt.hold_steps; ++t) {
    s = step(model, scene.sim, s, cmd);
    rec.steps.push_back(record_step(t, s, 0.0, Phase::Hold));
  }
  return rec;
}

struct IkResult {
  Pose6D hand_pose;  // world frame
  Eigen::VectorXd q;
  std::vector<Vec3> keypoints;  // corrected keypoints, object frame, one per link
  double residual = 0.0;        // RMS keypoint error after fitting, m
  bool converged = true;
};

namespace detail {

// Point on the link collider closest to the object, in the link frame.
inline Vec3 contact_point_in_link(const HandModel& model, const HandKinematics& fk, int link, const ObjectShape& shape) {
  const auto& col = model.links[link].collider;
  const Vec3 c = fk.collider_center(model, link);
  const SurfaceQuery sq = shape.closest(c);
  Vec3 dir = sq.point - c;
  if (sq.signed_distance < 0.0) dir = -dir;  // center inside: push out along the surface normal side
  const Vec3 world = dir.norm() > 1e-12 ? Vec3(c + col.radius * dir.normalized()) : c;
  return inverse(fk.link_poses[link]).apply(world);
}

}  // namespace detail

/// Keypoint correction: for links with a desired contact, the collider point
/// nearest the object is pulled onto the closest object surface point (its
/// signed surface distance is driven to zero); other links keep their label
/// keypoint. Wrist pose and joints are fitted by damped least squares in the
/// label's object frame.
inline IkResult ik_correct_label(const HandModel& model, const ObjectShape& shape, const GraspLabel& label,
                                 int iterations = 100, double damping = 1e-3) {
  const int links = model.link_count();
  const int joints = model.joint_count();
  const Pose6D wrist0 = relative_to(label.hand_pose, label.object_pose);
  const HandKinematics fk0 = forward_kinematics(model, wrist0, label.q);
  std::vector<bool> contact(static_cast<size_t>(links), false);
  if (label.target_contacts.size() == links)
    for (int l = 0; l < links; ++l) contact[l] = label.target_contacts[l] != 0;

  std::vector<Vec3> local(static_cast<size_t>(links), Vec3::Zero());  // keypoint in link frame
  std::vector<Vec3> fixed(static_cast<size_t>(links));
  int rows = 0;
  for (int l = 0; l < links; ++l) {
    fixed[l] = fk0.joint_positions[l];
    if (contact[l]) local[l] = detail::contact_point_in_link(model, fk0, l, shape);
    rows += contact[l] ? 1 : 3;
  }
  auto keypoints = [&](const Pose6D& w, const Eigen::VectorXd& q) {
    const HandKinematics fk = forward_kinematics(model, w, q);
    std::vector<Vec3> kp(static_cast<size_t>(links));
    for (int l = 0; l < links; ++l) kp[l] = fk.link_poses[l].apply(local[l]);
    return kp;
  };
  auto residual = [&](const Pose6D& w, const Eigen::VectorXd& q) {
    const std::vector<Vec3> kp = keypoints(w, q);
    Eigen::VectorXd r(rows);
    int i = 0;
    for (int l = 0; l < links; ++l) {
      if (contact[l]) {
        r[i++] = shape.closest(kp[l]).signed_distance;
      } else {
        r.segment<3>(i) = kp[l] - fixed[l];
        i += 3;
      }
    }
    return r;
  };

  Pose6D w = wrist0;
  Eigen::VectorXd q = label.q;
  const int dof = 6 + joints;
  const double h = 1e-7;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::VectorXd r = residual(w, q);
    Eigen::MatrixXd jac(rows, dof);
    for (int k = 0; k < dof; ++k) {
      Pose6D wp = w;
      Eigen::VectorXd qp = q;
      if (k < 3)
        wp.position[k] += h;
      else if (k < 6)
        wp.orientation = exp_map(Vec3::Unit(k - 3) * h) * w.orientation;
      else
        qp[k - 6] += h;
      jac.col(k) = (residual(wp, qp) - r) / h;
    }
    const Eigen::MatrixXd a = jac.transpose() * jac + damping * Eigen::MatrixXd::Identity(dof, dof);
    const Eigen::VectorXd dx = -a.ldlt().solve(jac.transpose() * r);
    w.position += dx.head<3>();
    w.orientation = canonical(exp_map(dx.segment<3>(3)) * w.orientation);
    q = clamp_to_limits(model, q + dx.tail(joints));
  }
  IkResult out;
  out.keypoints = keypoints(w, q);
  const Eigen::VectorXd r = residual(w, q);
  double sq = 0.0;  // per-link keypoint error: surface distance or drift from the label keypoint
  for (int l = 0, i = 0; l < links; ++l) {
    sq += contact[l] ? r[i] * r[i] : r.segment<3>(i).squaredNorm();
    i += contact[l] ? 1 : 3;
  }
  out.residual = std::sqrt(sq / links);
  out.converged = std::isfinite(out.residual);
  if (!out.converged) {
    out.hand_pose = label.hand_pose;
    out.q = label.q;
    return out;
  }
  out.hand_pose = compose(label.object_pose, w);
  out.q = q;
  return out;
}

/// IK-corrected label followed by the PD hold. Falls back to the original
/// label when the fit diverges.
inline RolloutRecord baseline_ik(const HandModel& model, const SceneConfig& scene, const GraspLabel& label,
                                 const BaselineOptions& opt = {}) {
  const IkResult ik = ik_correct_label(model, scene.object(label.object_id).shape, label);
  GraspLabel corrected = label;
  corrected.hand_pose = ik.hand_pose;
  corrected.q = ik.q;
  RolloutRecord rec = baseline_pd(model, scene, corrected, opt);
  rec.controller = to_string(ControllerKind::BaselineIk);
  return rec;
}

/// Label with the wrist shifted by a random vector of length `noise` and
/// every joint perturbed so that its distal keypoint moves by about `noise`.
inline GraspLabel corrupt_label(const HandModel& model, const GraspLabel& label, double noise, std::mt19937_64& rng,
                                const SurfacePointSet& object_points) {
  std::normal_distribution<double> n(0.0, 1.0);
  GraspLabel out = label;
  Vec3 d(n(rng), n(rng), n(rng));
  out.hand_pose.position += noise * d.normalized();
  const double lever = 0.1;  // m, typical finger length
  for (int j = 0; j < model.joint_count(); ++j) out.q[j] += (noise / lever) * n(rng) / std::sqrt(2.0);
  out.q = clamp_to_limits(model, out.q);
  finalize_label(model, out, object_points);
  return out;
}

// ---------------------------------------------------------------------------
// Motion environment (learned motion module)

/// Wrist control toward a sampled goal after a frozen grasp policy has grasped
/// the object. The post-grasp state is computed once per instance.
class MotionEnv : public Env {
 public:
  MotionEnv(const HandModel& model, SceneConfig scene, GraspLabel label, TaskConfig task, const ActorCritic& policy_g)
      : model_(model), scene_(std::move(scene)), label_(std::move(label)), task_(task), policy_g_(policy_g) {
    task_.validate();
    std::mt19937_64 unused(0);
    SimState s = grasp_start_state(model_, scene_, label_, task_.approach_offset);
    anchor_ = s.object.pose;
    const Pose6D& anchor = anchor_;
    for (int t = 0; t < task_.grasp_steps; ++t) {
      const Eigen::VectorXd obs = extract_grasp_features(model_, s, label_, scene_.surface_height).flatten();
      s = dgrasp::step(model_, scene_.sim, s,
                       grasp_action_to_command(model_, s, label_, anchor, act(policy_g_, obs, false, unused), task_.action));
    }
    after_grasp_ = set_surface(s, SurfaceMode::Removed);
  }

  int observation_size() const override { return static_cast<int>(kMotionObservationSize); }
  int action_size() const override { return 6; }

  Eigen::VectorXd reset(std::mt19937_64& rng) override {
    state_ = after_grasp_;
    goal_ = task_.goals.sample(label_.object_pose, rng);
    t_ = task_.grasp_steps;
    return extract_motion_features(state_, goal_).flatten();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    std::mt19937_64 unused(0);
    const Eigen::VectorXd gobs = extract_grasp_features(model_, state_, label_, scene_.surface_height).flatten();
    HandAction cmd = grasp_action_to_command(model_, state_, label_, anchor_, act(policy_g_, gobs, false, unused),
                                             task_.action);
    cmd.wrist_target = motion_action_to_target(state_.hand, action, task_.action);
    state_ = dgrasp::step(model_, scene_.sim, state_, cmd);
    ++t_;
    const MotionObservation obs = extract_motion_features(state_, goal_);
    const bool done = t_ >= task_.total_steps;
    return {obs.flatten(), motion_reward(obs, task_.rewards), done, done};
  }

 private:
  HandModel model_;
  SceneConfig scene_;
  GraspLabel label_;
  TaskConfig task_;
  const ActorCritic& policy_g_;
  Pose6D anchor_;
  SimState after_grasp_;
  SimState state_;
  Pose6D goal_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Flat RL baseline

/// One policy for the whole task: observation φ ++ ψ, reward grasp + motion,
/// surface removed when the grasp phase ends.
class FlatEnv : public Env {
 public:
  FlatEnv(const HandModel& model, SceneConfig scene, GraspLabel label, TaskConfig task)
      : model_(model), scene_(std::move(scene)), label_(std::move(label)), task_(task) {
    task_.validate();
  }

  int observation_size() const override {
    return static_cast<int>(grasp_observation_size(model_.joint_count(), model_.link_count()) +
                            kMotionObservationSize);
  }
  int action_size() const override { return grasp_action_size(model_); }

  Eigen::VectorXd reset(std::mt19937_64& rng) override {
    state_ = grasp_start_state(model_, scene_, label_, task_.approach_offset);
    goal_ = task_.goals.sample(label_.object_pose, rng);
    prev_action_ = Eigen::VectorXd::Zero(action_size());
    t_ = 0;
    return observe(state_);
  }

  /// Resets to a fixed goal.
  Eigen::VectorXd reset_with_goal(const Pose6D& goal) {
    state_ = grasp_start_state(model_, scene_, label_, task_.approach_offset);
    goal_ = goal;
    prev_action_ = Eigen::VectorXd::Zero(action_size());
    t_ = 0;
    return observe(state_);
  }

  StepResult step(const Eigen::VectorXd& action) override {
    const HandAction cmd =
        grasp_action_to_command(model_, state_, label_, state_.object.pose, action, task_.action,
                                WristActionMode::Incremental);
    state_ = dgrasp::step(model_, scene_.sim, state_, cmd);
    ++t_;
    if (t_ == task_.grasp_steps) state_ = set_surface(state_, SurfaceMode::Removed);
    const GraspObservation g = extract_grasp_features(model_, state_, label_, scene_.surface_height);
    const MotionObservation m = extract_motion_features(state_, goal_);
    const double r = flat_reward(model_, g, m, grasp_action_rate(model_, action, prev_action_, task_.action),
                                 state_.object.mass(), task_.rewards);
    prev_action_ = action;
    const bool done = t_ >= task_.total_steps;
    Eigen::VectorXd obs(observation_size());
    obs << g.flatten(), m.flatten();
    return {obs, r, done, done};
  }

  const SimState& state() const { return state_; }
  const Pose6D& goal() const { return goal_; }

 private:
  Eigen::VectorXd observe(const SimState& s) const {
    Eigen::VectorXd obs(observation_size());
    obs << extract_grasp_features(model_, s, label_, scene_.surface_height).flatten(),
        extract_motion_features(s, goal_).flatten();
    return obs;
  }

  HandModel model_;
  SceneConfig scene_;
  GraspLabel label_;
  TaskConfig task_;
  SimState state_;
  Pose6D goal_;
  Eigen::VectorXd prev_action_;
  int t_ = 0;
};

/// Deterministic flat-policy episode. Phases follow the hierarchical layout so
/// the same metrics apply.
inline RolloutRecord run_flat(const HandModel& model, const SceneConfig& scene, const ActorCritic& policy,
                              const GraspLabel& label, const Pose6D& goal, const TaskConfig& task) {
  FlatEnv env(model, scene, label, task);
  Eigen::VectorXd obs = env.reset_with_goal(goal);
  RolloutRecord rec;
  rec.object_id = label.object_id;
  rec.controller = to_string(ControllerKind::FlatRl);
  rec.control_dt = scene.sim.control_dt();
  rec.goal = goal;
  std::mt19937_64 unused(0);
  for (int t = 0; t < task.total_steps; ++t) {
    const StepResult res = env.step(act(policy, obs, false, unused));
    rec.steps.push_back(record_step(t, env.state(), res.reward, t < task.grasp_steps ? Phase::Grasp : Phase::Motion));
    obs = res.observation;
  }
  return rec;
}

}  // namespace dgrasp
