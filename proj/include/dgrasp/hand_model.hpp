#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/se3.hpp"

namespace dgrasp {

struct SphereCollider {
  double radius = 0.01;
  Vec3 center = Vec3::Zero();  // link frame
};

/// One rigid link of the hand. The root link (the palm) has no joint; every
/// other link rotates about `axis` (link frame) relative to its parent.
struct HandLink {
  std::string name;
  int parent = -1;
  Pose6D offset;             // parent link frame -> this link frame at q = 0
  std::optional<Vec3> axis;  // revolute axis, unit length
  SphereCollider collider;
  int joint = -1;            // actuated joint index, -1 for the root
};

struct JointLimits {
  double lo = 0.0;
  double hi = 0.0;
};

struct JointPdGains {
  double kp = 0.0;
  double kd = 0.0;
};

/// Lumped rigid body that carries the whole hand, driven by a 6D PD wrench.
struct WristDynamics {
  double mass = 0.5;        // kg
  double inertia = 5e-3;    // kg m^2, isotropic
  double kp_lin = 2.0e4;    // N/m
  double kd_lin = 200.0;    // N s/m
  double kp_rot = 200.0;    // N m/rad
  double kd_rot = 2.0;      // N m s/rad
};

/// Widens [lo, hi] by `fraction` of its width on each side.
inline JointLimits with_slack(JointLimits raw, double fraction) {
  const double w = raw.hi - raw.lo;
  return {raw.lo - fraction * w, raw.hi + fraction * w};
}

inline constexpr double kJointLimitSlack = 0.10;

/// Kinematic and actuation description of an articulated hand. Immutable
/// after `finalize()`.
class HandModel {
 public:
  std::vector<HandLink> links;
  std::vector<JointLimits> limits;  // effective limits (slack applied)
  std::vector<int> fingertips;      // link indices
  std::vector<JointPdGains> gains;
  std::vector<double> bias;         // q_b, rad
  double joint_inertia = 1e-3;      // reflected inertia per joint, kg m^2
  WristDynamics wrist;

  int link_count() const { return static_cast<int>(links.size()); }
  int joint_count() const { return static_cast<int>(joint_links_.size()); }
  int joint_link(int joint) const { return joint_links_.at(joint); }
  bool is_fingertip(int link) const {
    return std::find(fingertips.begin(), fingertips.end(), link) != fingertips.end();
  }
  /// Joints on the path from the root to `link`, `link`'s own joint included.
  const std::vector<int>& ancestor_joints(int link) const { return ancestors_.at(link); }

  /// Assigns joint indices, computes ancestor lists and checks invariants.
  void finalize() {
    joint_links_.clear();
    ancestors_.assign(links.size(), {});
    for (size_t i = 0; i < links.size(); ++i) {
      auto& l = links[i];
      if (i == 0) {
        if (l.parent != -1) throw std::invalid_argument("link 0 must be the root (parent -1)");
        if (l.axis) throw std::invalid_argument("root link cannot carry a joint");
      } else {
        if (l.parent < 0 || l.parent >= static_cast<int>(i))
          throw std::invalid_argument("link '" + l.name + "' must have a parent listed before it");
        if (!l.axis) throw std::invalid_argument("non-root link '" + l.name + "' needs a joint axis");
        if (std::abs(l.axis->norm() - 1.0) > 1e-9) l.axis = l.axis->normalized();
        l.joint = static_cast<int>(joint_links_.size());
        joint_links_.push_back(static_cast<int>(i));
        ancestors_[i] = ancestors_[l.parent];
        ancestors_[i].push_back(l.joint);
      }
      if (!(l.collider.radius > 0.0)) throw std::invalid_argument("collider radius of '" + l.name + "' must be > 0");
    }
    const size_t j = joint_links_.size();
    if (limits.size() != j || gains.size() != j || bias.size() != j)
      throw std::invalid_argument("limits, gains and bias must have one entry per joint");
    for (const auto& lim : limits)
      if (!(lim.lo < lim.hi)) throw std::invalid_argument("joint limits need lo < hi");
    for (int tip : fingertips)
      if (tip < 0 || tip >= link_count()) throw std::invalid_argument("fingertip index out of range");
    if (!(joint_inertia > 0.0) || !(wrist.mass > 0.0) || !(wrist.inertia > 0.0))
      throw std::invalid_argument("inertias must be positive");
  }

  /// Sum of link offset lengths plus collider reach: an upper bound on how far
  /// any point of the hand moves per radian of joint motion.
  double chain_length() const {
    double total = 0.0;
    for (const auto& l : links) total += l.offset.position.norm();
    double reach = 0.0;
    for (const auto& l : links) reach = std::max(reach, l.collider.center.norm() + l.collider.radius);
    return total + reach;
  }

 private:
  std::vector<int> joint_links_;
  std::vector<std::vector<int>> ancestors_;
};

struct HandState {
  Pose6D wrist;
  Twist6D wrist_twist;
  Eigen::VectorXd q;
  Eigen::VectorXd qdot;

  static HandState at_rest(const HandModel& model, const Pose6D& wrist, const Eigen::VectorXd& q) {
    if (q.size() != model.joint_count()) throw std::invalid_argument("joint vector length mismatch");
    return {wrist, {}, q, Eigen::VectorXd::Zero(model.joint_count())};
  }
};

struct HandKinematics {
  std::vector<Pose6D> link_poses;    // world pose of every link frame
  std::vector<Vec3> joint_positions;  // x_h: link-frame origins, one per link

  Vec3 collider_center(const HandModel& model, int link) const {
    return link_poses[link].apply(model.links[link].collider.center);
  }
  Vec3 joint_axis_world(const HandModel& model, int link) const {
    return link_poses[link].orientation * *model.links[link].axis;
  }
};

inline HandKinematics forward_kinematics(const HandModel& model, const Pose6D& wrist,
                                         const Eigen::VectorXd& q) {
  if (q.size() != model.joint_count())
    throw std::invalid_argument("forward_kinematics: expected " + std::to_string(model.joint_count()) +
                                " joint angles, got " + std::to_string(q.size()));
  HandKinematics fk;
  fk.link_poses.reserve(model.links.size());
  for (const auto& link : model.links) {
    const Pose6D& parent = link.parent < 0 ? wrist : fk.link_poses[link.parent];
    Pose6D pose = compose(parent, link.offset);
    if (link.axis) pose = compose(pose, Pose6D::rotation(*link.axis, q[link.joint]));
    fk.link_poses.push_back(pose);
  }
  fk.joint_positions.reserve(fk.link_poses.size());
  for (const auto& p : fk.link_poses) fk.joint_positions.push_back(p.position);
  return fk;
}

inline Eigen::VectorXd clamp_to_limits(const HandModel& model, Eigen::VectorXd q) {
  for (int j = 0; j < q.size() && j < model.joint_count(); ++j)
    q[j] = std::clamp(q[j], model.limits[j].lo, model.limits[j].hi);
  return q;
}

/// Three fingers around a palm, two flexion joints each. In the wrist frame the
/// palm faces -z and an open finger points radially outward in the xy-plane;
/// positive angles curl the finger toward -z.
inline HandModel default_desk_hand() {
  HandModel m;
  HandLink palm;
  palm.name = "palm";
  palm.collider = {0.025, Vec3(0, 0, -0.01)};
  m.links.push_back(palm);

  constexpr double kKnuckleRadius = 0.05;
  constexpr double kKnuckleDrop = -0.01;
  constexpr double kProximalLength = 0.075;
  for (int f = 0; f < 3; ++f) {
    const double yaw = 2.0 * std::numbers::pi * f / 3.0;
    const Quat about_z(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
    HandLink prox;
    prox.name = "finger" + std::to_string(f) + "_proximal";
    prox.parent = 0;
    prox.offset = Pose6D(about_z * Vec3(kKnuckleRadius, 0, kKnuckleDrop), about_z);
    prox.axis = Vec3::UnitY();
    prox.collider = {0.011, Vec3(0.0375, 0, 0)};
    const int prox_index = static_cast<int>(m.links.size());
    m.links.push_back(prox);

    HandLink dist;
    dist.name = "finger" + std::to_string(f) + "_distal";
    dist.parent = prox_index;
    dist.offset = Pose6D::translation(kProximalLength, 0, 0);
    dist.axis = Vec3::UnitY();
    dist.collider = {0.010, Vec3(0.027, 0, 0)};
    m.fingertips.push_back(static_cast<int>(m.links.size()));
    m.links.push_back(dist);

    m.limits.push_back(with_slack({0.0, 1.6}, kJointLimitSlack));
    m.limits.push_back(with_slack({0.0, 1.8}, kJointLimitSlack));
    m.gains.push_back({2.0, 0.08});
    m.gains.push_back({2.0, 0.08});
    m.bias.push_back(0.0);
    m.bias.push_back(0.0);
  }
  m.finalize();
  return m;
}

// ---------------------------------------------------------------------------
// Config I/O. Schema (JSON):
// {
//   "joint_inertia": 1e-3,
//   "wrist": {"mass":..,"inertia":..,"kp_lin":..,"kd_lin":..,"kp_rot":..,"kd_rot":..},
//   "links": [ {"name": "palm", "parent": -1, "offset": [x,y,z,qw,qx,qy,qz],
//               "collider": {"radius": r, "center": [x,y,z]}},
//              {"name": .., "parent": i, "offset": [..7], "axis": [x,y,z],
//               "range": [lo, hi], "kp": .., "kd": .., "bias": 0.0,
//               "fingertip": true|false, "collider": {..}}, ... ]
// }
// "range" is the raw joint range; the loader widens it by the 10% slack.

inline Vec3 vec3_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument(where + ": expected array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Pose6D pose_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 7) throw std::invalid_argument(where + ": expected pose array of 7 numbers");
  std::array<double, 7> a{};
  for (int i = 0; i < 7; ++i) a[i] = j[i].get<double>();
  try {
    return Pose6D::from_array(a);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(where + ": " + e.what());
  }
}

inline nlohmann::json pose_to_json(const Pose6D& p) {
  const auto a = p.to_array();
  return nlohmann::json(std::vector<double>(a.begin(), a.end()));
}

inline HandModel hand_model_from_json(const nlohmann::json& j) {
  HandModel m;
  m.joint_inertia = j.value("joint_inertia", m.joint_inertia);
  if (j.contains("wrist")) {
    const auto& w = j["wrist"];
    m.wrist.mass = w.value("mass", m.wrist.mass);
    m.wrist.inertia = w.value("inertia", m.wrist.inertia);
    m.wrist.kp_lin = w.value("kp_lin", m.wrist.kp_lin);
    m.wrist.kd_lin = w.value("kd_lin", m.wrist.kd_lin);
    m.wrist.kp_rot = w.value("kp_rot", m.wrist.kp_rot);
    m.wrist.kd_rot = w.value("kd_rot", m.wrist.kd_rot);
  }
  if (!j.contains("links") || !j["links"].is_array()) throw std::invalid_argument("hand: missing 'links' array");
  int index = 0;
  for (const auto& lj : j["links"]) {
    const std::string where = "hand.links[" + std::to_string(index) + "]";
    HandLink l;
    l.name = lj.value("name", "link" + std::to_string(index));
    l.parent = lj.value("parent", -1);
    if (lj.contains("offset")) l.offset = pose_from_json(lj["offset"], where + ".offset");
    if (lj.contains("axis") && !lj["axis"].is_null()) {
      l.axis = vec3_from_json(lj["axis"], where + ".axis");
      if (!lj.contains("range")) throw std::invalid_argument(where + ".range: missing");
      const auto& r = lj["range"];
      m.limits.push_back(with_slack({r.at(0).get<double>(), r.at(1).get<double>()}, kJointLimitSlack));
      m.gains.push_back({lj.value("kp", 2.0), lj.value("kd", 0.08)});
      m.bias.push_back(lj.value("bias", 0.0));
    }
    if (!lj.contains("collider")) throw std::invalid_argument(where + ".collider: missing");
    l.collider.radius = lj["collider"].at("radius").get<double>();
    if (lj["collider"].contains("center")) l.collider.center = vec3_from_json(lj["collider"]["center"], where + ".collider.center");
    if (lj.value("fingertip", false)) m.fingertips.push_back(index);
    m.links.push_back(std::move(l));
    ++index;
  }
  m.finalize();
  return m;
}

/// Serializes the model; limits are written back as raw ranges (slack removed).
inline nlohmann::json hand_model_to_json(const HandModel& m) {
  nlohmann::json j;
  j["joint_inertia"] = m.joint_inertia;
  j["wrist"] = {{"mass", m.wrist.mass},     {"inertia", m.wrist.inertia}, {"kp_lin", m.wrist.kp_lin},
                {"kd_lin", m.wrist.kd_lin}, {"kp_rot", m.wrist.kp_rot},   {"kd_rot", m.wrist.kd_rot}};
  auto links = nlohmann::json::array();
  for (int i = 0; i < m.link_count(); ++i) {
    const auto& l = m.links[i];
    nlohmann::json lj = {{"name", l.name}, {"parent", l.parent}, {"offset", pose_to_json(l.offset)}};
    lj["collider"] = {{"radius", l.collider.radius}, {"center", vec3_to_json(l.collider.center)}};
    if (l.axis) {
      const auto& lim = m.limits[l.joint];
      const double w = (lim.hi - lim.lo) / (1.0 + 2.0 * kJointLimitSlack);
      const double lo = lim.lo + kJointLimitSlack * w;
      lj["axis"] = vec3_to_json(*l.axis);
      lj["range"] = {lo, lo + w};
      lj["kp"] = m.gains[l.joint].kp;
      lj["kd"] = m.gains[l.joint].kd;
      lj["bias"] = m.bias[l.joint];
    }
    lj["fingertip"] = m.is_fingertip(i);
    links.push_back(lj);
  }
  j["links"] = links;
  return j;
}

inline HandModel load_hand_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open hand model '" + path + "'");
  return hand_model_from_json(nlohmann::json::parse(in));
}

}  // namespace dgrasp
