#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/grasp_label.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/se3.hpp"
#include "dgrasp/sim.hpp"

namespace dgrasp {

/// Goal part of the grasping observation. Gaps are "target - current".
struct GoalFeatures {
  std::vector<Vec3> positions;  // g̃_x, one per link, wrist frame
  Eigen::VectorXd joint_angles;  // g̃_q joint part: q̄ - q
  Vec3 wrist_rotation = Vec3::Zero();  // g̃_q wrist part: rotation vector, wrist frame
  Eigen::VectorXd contacts;      // g_c, 2 x link count
};

struct GraspObservation {
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;
  Twist6D wrist_twist;     // wrist frame
  Pose6D object_in_wrist;  // T̃_o
  Twist6D object_twist;    // wrist frame
  double height = 0.0;     // x̃_z
  Eigen::VectorXd link_force;  // f
  GoalFeatures goals;

  /// Fixed layout, see grasp_observation_schema().
  Eigen::VectorXd flatten() const;
};

struct MotionObservation {
  Pose6D hand;
  Twist6D hand_twist;
  Pose6D object;
  Twist6D object_twist;
  Vec3 position_gap = Vec3::Zero();  // g_{o,x} = T_o,x - T_g,x
  Vec3 rotation_gap = Vec3::Zero();  // g_{o,q}: rotation vector of R_o R_g^T

  Eigen::VectorXd flatten() const;
};

namespace detail {

struct ObservationWriter {
  Eigen::VectorXd out;
  Eigen::Index pos = 0;
  explicit ObservationWriter(Eigen::Index n) : out(n) {}
  void put(double v) { out[pos++] = v; }
  void put(const Vec3& v) {
    for (int i = 0; i < 3; ++i) put(v[i]);
  }
  void put(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) put(v[i]);
  }
  void put_pose(const Pose6D& p) {
    put(p.position);
    for (double v : rotation_6d(p.orientation)) put(v);
  }
  void put(const Twist6D& t) {
    put(t.linear);
    put(t.angular);
  }
};

}  // namespace detail

inline Eigen::Index grasp_observation_size(int joints, int links) {
  return 2 * joints + 6 + 9 + 6 + 1 + links + 3 * links + (joints + 3) + 2 * links;
}

inline Eigen::VectorXd GraspObservation::flatten() const {
  const auto joints = static_cast<int>(q.size());
  const auto links = static_cast<int>(link_force.size());
  detail::ObservationWriter w(grasp_observation_size(joints, links));
  w.put(q);
  w.put(qdot);
  w.put(wrist_twist);
  w.put_pose(object_in_wrist);
  w.put(object_twist);
  w.put(height);
  w.put(link_force);
  for (const Vec3& g : goals.positions) w.put(g);
  w.put(goals.joint_angles);
  w.put(goals.wrist_rotation);
  w.put(goals.contacts);
  return w.out;
}

inline constexpr Eigen::Index kMotionObservationSize = 9 + 6 + 9 + 6 + 3 + 3;

inline Eigen::VectorXd MotionObservation::flatten() const {
  detail::ObservationWriter w(kMotionObservationSize);
  w.put_pose(hand);
  w.put(hand_twist);
  w.put_pose(object);
  w.put(object_twist);
  w.put(position_gap);
  w.put(rotation_gap);
  return w.out;
}

/// g̃_x: label joint positions (label object frame) minus current joint
/// positions (current object frame), rotated into the current wrist frame.
inline std::vector<Vec3> relative_target_positions(const HandModel& model, const HandState& hand,
                                                   const Pose6D& object_pose, const GraspLabel& label) {
  const Pose6D wrist_in_object = relative_to(hand.wrist, object_pose);
  const HandKinematics fk = forward_kinematics(model, wrist_in_object, hand.q);
  const Quat to_wrist = wrist_in_object.orientation.conjugate();
  std::vector<Vec3> gaps;
  gaps.reserve(fk.joint_positions.size());
  for (size_t i = 0; i < fk.joint_positions.size(); ++i)
    gaps.push_back(to_wrist * (label.target_positions[i] - fk.joint_positions[i]));
  return gaps;
}

struct RelativeRotations {
  Eigen::VectorXd joints;  // q̄ - q
  Vec3 wrist;              // wrist frame rotation vector toward the target
};

inline RelativeRotations relative_target_rotations(const HandState& hand, const Pose6D& object_pose,
                                                   const GraspLabel& label) {
  const Quat current = relative_to(hand.wrist, object_pose).orientation;
  const Quat target = relative_to(label.hand_pose, label.object_pose).orientation;
  return {label.q - hand.q, log_map(current.conjugate() * target)};
}

inline GoalFeatures goal_features(const HandModel& model, const HandState& hand, const Pose6D& object_pose,
                                  const GraspLabel& label) {
  const RelativeRotations rot = relative_target_rotations(hand, object_pose, label);
  return {relative_target_positions(model, hand, object_pose, label), rot.joints, rot.wrist,
          contact_goal_vector(label.target_contacts)};
}

/// φ(s, D). `surface_height` is the reference height the object rests on.
inline GraspObservation extract_grasp_features(const HandModel& model, const SimState& state,
                                               const GraspLabel& label, double surface_height) {
  const Quat to_wrist = state.hand.wrist.orientation.conjugate();
  GraspObservation obs;
  obs.q = state.hand.q;
  obs.qdot = state.hand.qdot;
  obs.wrist_twist = {to_wrist * state.hand.wrist_twist.linear, to_wrist * state.hand.wrist_twist.angular};
  obs.object_in_wrist = relative_to(state.object.pose, state.hand.wrist);
  obs.object_twist = {to_wrist * state.object.twist.linear, to_wrist * state.object.twist.angular};
  obs.height = state.object.pose.position.z() - surface_height;
  obs.link_force = state.link_force.size() == model.link_count() ? state.link_force
                                                                  : Eigen::VectorXd::Zero(model.link_count());
  obs.goals = goal_features(model, state.hand, state.object.pose, label);
  return obs;
}

/// ψ(s, T_g, D)
inline MotionObservation extract_motion_features(const SimState& state, const Pose6D& goal) {
  return {state.hand.wrist,
          state.hand.wrist_twist,
          state.object.pose,
          state.object.twist,
          state.object.pose.position - goal.position,
          log_map(state.object.pose.orientation * goal.orientation.conjugate())};
}

/// Self-description of the flattened observation vectors.
inline nlohmann::json grasp_observation_schema(const HandModel& model) {
  const int j = model.joint_count();
  const int l = model.link_count();
  const std::vector<std::pair<std::string, int>> segments = {
      {"q_h", j},         {"qdot_h", j},          {"wrist_twist_wrist_frame", 6},
      {"object_pose_wrist_frame[pos3,rot6d]", 9}, {"object_twist_wrist_frame", 6},
      {"object_height_above_surface", 1},         {"link_contact_force", l},
      {"goal_rel_positions[link x 3]", 3 * l},    {"goal_rel_joint_angles", j},
      {"goal_rel_wrist_rotation", 3},             {"goal_contacts[desired, indicator]", 2 * l}};
  nlohmann::json segs = nlohmann::json::array();
  int offset = 0;
  for (const auto& [name, len] : segments) {
    segs.push_back({{"name", name}, {"offset", offset}, {"length", len}});
    offset += len;
  }
  return {{"observation", "grasp"}, {"size", offset}, {"segments", segs}};
}

inline nlohmann::json motion_observation_schema() {
  const std::vector<std::pair<std::string, int>> segments = {
      {"hand_pose[pos3,rot6d]", 9}, {"hand_twist", 6},   {"object_pose[pos3,rot6d]", 9},
      {"object_twist", 6},          {"goal_position_gap", 3}, {"goal_rotation_gap", 3}};
  nlohmann::json segs = nlohmann::json::array();
  int offset = 0;
  for (const auto& [name, len] : segments) {
    segs.push_back({{"name", name}, {"offset", offset}, {"length", len}});
    offset += len;
  }
  return {{"observation", "motion"}, {"size", offset}, {"segments", segs}};
}

}  // namespace dgrasp
