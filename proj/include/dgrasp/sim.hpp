#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/geometry.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/se3.hpp"

namespace dgrasp {

/// Raised when the integrator produces a non-finite state.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  double dt = 2.22e-3;
  int substeps_per_action = 13;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double contact_stiffness = 1.0e4;  // k_n, N/m
  double contact_damping = 50.0;     // c_n, N s/m
  double surface_friction = 0.8;     // hand vs support plane
  double rolling_friction = 0.005;   // object vs support plane, m (torque per unit normal force)
  bool hand_surface_collision = true;
  bool hand_gravity = false;  // the hand is gravity compensated by default
  bool kinematic = false;     // hand teleports to its targets, no dynamics

  double control_dt() const { return dt * substeps_per_action; }

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("sim.dt must be > 0");
    if (substeps_per_action < 1) throw std::invalid_argument("sim.substeps_per_action must be >= 1");
    if (contact_stiffness < 0.0 || contact_damping < 0.0 || surface_friction < 0.0 ||
        rolling_friction < 0.0)
      throw std::invalid_argument("contact parameters must be non-negative");
  }
};

struct ObjectSpec {
  ObjectShape shape;
  double mass = 0.2;
  double friction = 0.8;

  void validate() const {
    shape.validate();
    if (!(mass > 0.0)) throw std::invalid_argument("object mass must be > 0");
    if (friction < 0.0) throw std::invalid_argument("object friction must be >= 0");
  }
};

struct ObjectBody {
  ObjectSpec spec;
  Pose6D pose;
  Twist6D twist;

  double mass() const { return spec.mass; }
  Mat3 inertia_world() const {
    const Mat3 r = pose.rotation_matrix();
    return r * spec.shape.principal_inertia(spec.mass).asDiagonal() * r.transpose();
  }
  Mat3 inverse_inertia_world() const {
    const Mat3 r = pose.rotation_matrix();
    return r * spec.shape.principal_inertia(spec.mass).cwiseInverse().asDiagonal() * r.transpose();
  }
  Vec3 point_velocity(const Vec3& p) const { return twist.linear + twist.angular.cross(p - pose.position); }
};

enum class SurfaceMode { Present, Lowered, Removed };

struct Surface {
  SurfaceMode mode = SurfaceMode::Present;
  double base_height = 0.0;
  double lowered_by = 1.0;

  std::optional<double> height() const {
    switch (mode) {
      case SurfaceMode::Present: return base_height;
      case SurfaceMode::Lowered: return base_height - lowered_by;
      case SurfaceMode::Removed: return std::nullopt;
    }
    return std::nullopt;
  }
};

enum class ContactPair { HandObject, ObjectSurface, HandSurface };

/// `normal` points in the direction the first body (object, or hand for
/// HandSurface) is pushed; for hand-object pairs it points from hand to object.
struct ContactPoint {
  ContactPair pair = ContactPair::HandObject;
  int hand_link = -1;  // -1 for object-surface contacts
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double depth = 0.0;
  double force = 0.0;  // normal force magnitude, N
};

struct HandAction {
  Eigen::VectorXd q_ref;
  Pose6D wrist_target;
};

struct SimState {
  HandState hand;
  ObjectBody object;
  Surface surface;
  std::vector<ContactPoint> contacts;
  Eigen::VectorXd link_force;  // per link, hand-object normal force averaged over the last action
  std::uint64_t step_count = 0;
  std::optional<Pose6D> weld;  // object pose in the wrist frame while welded

  void weld_object() { weld = relative_to(object.pose, hand.wrist); }
  void release_object() { weld.reset(); }
};

inline SimState make_state(const HandModel& model, const HandState& hand, const ObjectBody& object,
                           double surface_height) {
  SimState s;
  s.hand = hand;
  s.object = object;
  s.surface.base_height = surface_height;
  s.link_force = Eigen::VectorXd::Zero(model.link_count());
  return s;
}

/// Pose of an object lying on the plane z = `height` with identity tilt.
inline Pose6D resting_pose(const ObjectSpec& spec, double height, const Vec3& xy = Vec3::Zero(), double yaw = 0.0) {
  const double half = spec.shape.kind == ShapeKind::Sphere   ? spec.shape.dims.x()
                      : spec.shape.kind == ShapeKind::Box    ? spec.shape.dims.z()
                                                             : spec.shape.dims.y();
  return {Vec3(xy.x(), xy.y(), height + half), Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()))};
}

// ---------------------------------------------------------------------------
// Actuation laws

/// tau_j = kp_j (q_ref_j + q_b_j - q_j) - kd_j qdot_j
inline Eigen::VectorXd pd_torque(const HandModel& model, const Eigen::VectorXd& q_ref, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qdot) {
  const int n = model.joint_count();
  if (q_ref.size() != n || q.size() != n || qdot.size() != n)
    throw std::invalid_argument("pd_torque: vector length mismatch");
  Eigen::VectorXd tau(n);
  for (int j = 0; j < n; ++j)
    tau[j] = model.gains[j].kp * (q_ref[j] + model.bias[j] - q[j]) - model.gains[j].kd * qdot[j];
  return tau;
}

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

inline Wrench wrist_pd_wrench(const Pose6D& target, const HandState& state, const WristDynamics& gains) {
  const PoseDelta gap = pose_delta(state.wrist, target);
  return {gains.kp_lin * gap.translation - gains.kd_lin * state.wrist_twist.linear,
          gains.kp_rot * gap.rotation - gains.kd_rot * state.wrist_twist.angular};
}

// ---------------------------------------------------------------------------
// Contact detection

/// Sphere (world centre `c`, radius `r`) against the object; nullopt when apart.
inline std::optional<ContactPoint> sphere_object_contact(const Vec3& c, double r, const ObjectBody& object) {
  const Vec3 local = object.pose.orientation.conjugate() * (c - object.pose.position);
  const SurfaceQuery q = object.spec.shape.closest(local);
  const double depth = r - q.signed_distance;
  if (depth <= 0.0) return std::nullopt;
  const Vec3 outward = object.pose.orientation * q.normal;
  const Vec3 surface_pt = object.pose.apply(q.point);
  ContactPoint cp;
  cp.pair = ContactPair::HandObject;
  cp.normal = -outward;
  cp.depth = depth;
  cp.point = 0.5 * (surface_pt + (c - outward * r));
  return cp;
}

inline std::vector<ContactPoint> detect_contacts(const HandModel& model, const HandKinematics& fk,
                                                 const ObjectBody& object, const Surface& surface,
                                                 bool hand_surface_collision) {
  std::vector<ContactPoint> out;
  const double reach = object.spec.shape.bounding_radius();
  for (int l = 0; l < model.link_count(); ++l) {
    const Vec3 c = fk.collider_center(model, l);
    const double r = model.links[l].collider.radius;
    if ((c - object.pose.position).norm() > reach + r) continue;
    if (auto cp = sphere_object_contact(c, r, object)) {
      cp->hand_link = l;
      out.push_back(*cp);
    }
  }
  const auto height = surface.height();
  if (!height) return out;
  const double h = *height;
  if (object.spec.shape.kind == ShapeKind::Sphere) {
    const double depth = h - (object.pose.position.z() - object.spec.shape.dims.x());
    if (depth > 0.0) {
      const Vec3 p(object.pose.position.x(), object.pose.position.y(), h - 0.5 * depth);
      out.push_back({ContactPair::ObjectSurface, -1, p, Vec3::UnitZ(), depth, 0.0});
    }
  } else {
    for (const Vec3& local : object.spec.shape.plane_probe_points()) {
      const Vec3 p = object.pose.apply(local);
      const double depth = h - p.z();
      if (depth > 0.0)
        out.push_back({ContactPair::ObjectSurface, -1, Vec3(p.x(), p.y(), h - 0.5 * depth), Vec3::UnitZ(), depth, 0.0});
    }
  }
  if (hand_surface_collision) {
    for (int l = 0; l < model.link_count(); ++l) {
      const Vec3 c = fk.collider_center(model, l);
      const double depth = h - (c.z() - model.links[l].collider.radius);
      if (depth > 0.0)
        out.push_back({ContactPair::HandSurface, l, Vec3(c.x(), c.y(), h - 0.5 * depth), Vec3::UnitZ(), depth, 0.0});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dynamics

namespace detail {

// Velocity-level view of the lumped hand: wrist body plus independent joints.
struct HandBody {
  const HandModel& model;
  const HandKinematics& fk;
  HandState& state;

  Vec3 joint_lever(int joint, const Vec3& p) const {
    const int link = model.joint_link(joint);
    return fk.joint_axis_world(model, link).cross(p - fk.link_poses[link].position);
  }

  Vec3 point_velocity(int link, const Vec3& p) const {
    Vec3 v = state.wrist_twist.linear + state.wrist_twist.angular.cross(p - state.wrist.position);
    for (int j : model.ancestor_joints(link)) v += state.qdot[j] * joint_lever(j, p);
    return v;
  }

  double inverse_mass(int link, const Vec3& p, const Vec3& dir) const {
    double w = 1.0 / model.wrist.mass + (p - state.wrist.position).cross(dir).squaredNorm() / model.wrist.inertia;
    for (int j : model.ancestor_joints(link)) {
      const double g = joint_lever(j, p).dot(dir);
      w += g * g / model.joint_inertia;
    }
    return w;
  }

  void apply_impulse(int link, const Vec3& p, const Vec3& impulse) {
    state.wrist_twist.linear += impulse / model.wrist.mass;
    state.wrist_twist.angular += (p - state.wrist.position).cross(impulse) / model.wrist.inertia;
    for (int j : model.ancestor_joints(link)) state.qdot[j] += joint_lever(j, p).dot(impulse) / model.joint_inertia;
  }

  void accumulate_force(int link, const Vec3& p, const Vec3& f, Wrench& wrist, Eigen::VectorXd& tau) const {
    wrist.force += f;
    wrist.torque += (p - state.wrist.position).cross(f);
    for (int j : model.ancestor_joints(link)) tau[j] += joint_lever(j, p).dot(f);
  }
};

inline void apply_object_impulse(ObjectBody& obj, const Mat3& inv_inertia, const Vec3& p, const Vec3& impulse) {
  obj.twist.linear += impulse / obj.mass();
  obj.twist.angular += inv_inertia * (p - obj.pose.position).cross(impulse);
}

inline double object_inverse_mass(const ObjectBody& obj, const Mat3& inv_inertia, const Vec3& p, const Vec3& dir) {
  const Vec3 rc = (p - obj.pose.position).cross(dir);
  return 1.0 / obj.mass() + rc.dot(inv_inertia * rc);
}

inline void integrate_pose(Pose6D& pose, const Twist6D& twist, double dt) {
  pose.position += twist.linear * dt;
  pose.orientation = canonical(exp_map(twist.angular * dt) * pose.orientation);
}

inline void follow_weld(SimState& s) {
  s.object.pose = compose(s.hand.wrist, *s.weld);
  s.object.twist.angular = s.hand.wrist_twist.angular;
  s.object.twist.linear =
      s.hand.wrist_twist.linear + s.hand.wrist_twist.angular.cross(s.object.pose.position - s.hand.wrist.position);
}

inline void enforce_limits(const HandModel& model, HandState& hand) {
  for (int j = 0; j < model.joint_count(); ++j) {
    const auto& lim = model.limits[j];
    if (hand.q[j] > lim.hi) {
      hand.q[j] = lim.hi;
      if (hand.qdot[j] > 0.0) hand.qdot[j] = 0.0;
    } else if (hand.q[j] < lim.lo) {
      hand.q[j] = lim.lo;
      if (hand.qdot[j] < 0.0) hand.qdot[j] = 0.0;
    }
  }
}

inline void check_finite(const SimState& s) {
  auto fail = [&](const char* what) {
    std::ostringstream os;
    os << "non-finite " << what << " after step " << s.step_count;
    throw SimulationError(os.str());
  };
  if (!s.hand.wrist.position.allFinite() || !s.hand.wrist.orientation.coeffs().allFinite()) fail("wrist pose");
  if (!s.hand.wrist_twist.finite()) fail("wrist twist");
  if (!s.hand.q.allFinite() || !s.hand.qdot.allFinite()) fail("joint state");
  if (!s.object.pose.position.allFinite() || !s.object.pose.orientation.coeffs().allFinite()) fail("object pose");
  if (!s.object.twist.finite()) fail("object twist");
}

// One semi-implicit Euler substep. Returns per-link hand-object normal force.
inline Eigen::VectorXd substep(const HandModel& model, const SimConfig& cfg, SimState& s, const HandAction& action) {
  const double dt = cfg.dt;
  const HandKinematics fk = forward_kinematics(model, s.hand.wrist, s.hand.q);
  s.contacts = detect_contacts(model, fk, s.object, s.surface, cfg.hand_surface_collision);
  HandBody hand{model, fk, s.hand};
  const bool welded = s.weld.has_value();

  Wrench wrist = wrist_pd_wrench(action.wrist_target, s.hand, model.wrist);
  if (cfg.hand_gravity) wrist.force += model.wrist.mass * cfg.gravity;
  Eigen::VectorXd tau = pd_torque(model, action.q_ref, s.hand.q, s.hand.qdot);
  Vec3 obj_force = s.object.mass() * cfg.gravity;
  Vec3 obj_torque = Vec3::Zero();
  Eigen::VectorXd link_force = Eigen::VectorXd::Zero(model.link_count());

  const double k = cfg.contact_stiffness;
  const double c = cfg.contact_damping;
  for (auto& cp : s.contacts) {
    if (welded && cp.pair != ContactPair::HandSurface) continue;
    Vec3 v_rel = Vec3::Zero();
    switch (cp.pair) {
      case ContactPair::HandObject:
        v_rel = s.object.point_velocity(cp.point) - hand.point_velocity(cp.hand_link, cp.point);
        break;
      case ContactPair::ObjectSurface: v_rel = s.object.point_velocity(cp.point); break;
      case ContactPair::HandSurface: v_rel = hand.point_velocity(cp.hand_link, cp.point); break;
    }
    const double closing = -v_rel.dot(cp.normal);
    cp.force = std::max(0.0, k * cp.depth + c * closing);
    const Vec3 f = cp.force * cp.normal;
    switch (cp.pair) {
      case ContactPair::HandObject:
        obj_force += f;
        obj_torque += (cp.point - s.object.pose.position).cross(f);
        hand.accumulate_force(cp.hand_link, cp.point, -f, wrist, tau);
        link_force[cp.hand_link] += cp.force;
        break;
      case ContactPair::ObjectSurface:
        obj_force += f;
        obj_torque += (cp.point - s.object.pose.position).cross(f);
        break;
      case ContactPair::HandSurface: hand.accumulate_force(cp.hand_link, cp.point, f, wrist, tau); break;
    }
  }

  // velocity update
  s.hand.wrist_twist.linear += wrist.force / model.wrist.mass * dt;
  s.hand.wrist_twist.angular += wrist.torque / model.wrist.inertia * dt;
  s.hand.qdot += tau / model.joint_inertia * dt;
  const Mat3 inv_inertia = s.object.inverse_inertia_world();
  if (!welded) {
    const Mat3 inertia = s.object.inertia_world();
    const Vec3& w = s.object.twist.angular;
    s.object.twist.linear += obj_force / s.object.mass() * dt;
    s.object.twist.angular += inv_inertia * (obj_torque - w.cross(inertia * w)) * dt;
  }

  // Coulomb friction as bounded tangential impulses, one Gauss-Seidel pass
  for (const auto& cp : s.contacts) {
    if (cp.force <= 0.0) continue;
    if (welded && cp.pair != ContactPair::HandSurface) continue;
    Vec3 v_rel;
    double mu = 0.0;
    double w_sum = 0.0;
    switch (cp.pair) {
      case ContactPair::HandObject:
        v_rel = s.object.point_velocity(cp.point) - hand.point_velocity(cp.hand_link, cp.point);
        mu = s.object.spec.friction;
        break;
      case ContactPair::ObjectSurface:
        v_rel = s.object.point_velocity(cp.point);
        mu = s.object.spec.friction;
        break;
      case ContactPair::HandSurface:
        v_rel = hand.point_velocity(cp.hand_link, cp.point);
        mu = cfg.surface_friction;
        break;
    }
    const Vec3 v_t = v_rel - v_rel.dot(cp.normal) * cp.normal;
    const double speed = v_t.norm();
    if (speed < 1e-12 || mu <= 0.0) continue;
    const Vec3 dir = v_t / speed;
    if (cp.pair != ContactPair::HandSurface) w_sum += object_inverse_mass(s.object, inv_inertia, cp.point, dir);
    if (cp.pair != ContactPair::ObjectSurface) w_sum += hand.inverse_mass(cp.hand_link, cp.point, dir);
    const double j = std::min(speed / w_sum, mu * cp.force * dt);
    const Vec3 impulse = -j * dir;
    switch (cp.pair) {
      case ContactPair::HandObject:
        apply_object_impulse(s.object, inv_inertia, cp.point, impulse);
        hand.apply_impulse(cp.hand_link, cp.point, -impulse);
        break;
      case ContactPair::ObjectSurface: apply_object_impulse(s.object, inv_inertia, cp.point, impulse); break;
      case ContactPair::HandSurface: hand.apply_impulse(cp.hand_link, cp.point, impulse); break;
    }
  }

  // rolling and spinning resistance against the support plane
  if (!welded && cfg.rolling_friction > 0.0) {
    for (const auto& cp : s.contacts) {
      if (cp.pair != ContactPair::ObjectSurface || cp.force <= 0.0) continue;
      Vec3& w = s.object.twist.angular;
      const double rate = w.norm();
      if (rate < 1e-12) break;
      const Vec3 axis = w / rate;
      const double k_inv = axis.dot(inv_inertia * axis);
      const double j = std::min(rate / k_inv, cfg.rolling_friction * cp.force * dt);
      w -= inv_inertia * (j * axis);
    }
  }

  // position update
  integrate_pose(s.hand.wrist, s.hand.wrist_twist, dt);
  s.hand.q += s.hand.qdot * dt;
  enforce_limits(model, s.hand);
  if (welded)
    follow_weld(s);
  else
    integrate_pose(s.object.pose, s.object.twist, dt);
  return link_force;
}

}  // namespace detail

/// Advances one control step (substeps_per_action x dt). Throws
/// SimulationError if the state becomes non-finite.
inline SimState step(const HandModel& model, const SimConfig& cfg, SimState s, const HandAction& action) {
  if (action.q_ref.size() != model.joint_count()) throw std::invalid_argument("step: q_ref length mismatch");
  if (cfg.kinematic) {
    s.hand.wrist = action.wrist_target;
    s.hand.wrist_twist = {};
    s.hand.q = clamp_to_limits(model, action.q_ref);
    s.hand.qdot.setZero();
    if (s.weld) detail::follow_weld(s);
    s.object.twist = {};
    const auto fk = forward_kinematics(model, s.hand.wrist, s.hand.q);
    s.contacts = detect_contacts(model, fk, s.object, s.surface, cfg.hand_surface_collision);
    s.link_force = Eigen::VectorXd::Zero(model.link_count());
    ++s.step_count;
    detail::check_finite(s);
    return s;
  }
  Eigen::VectorXd force_sum = Eigen::VectorXd::Zero(model.link_count());
  for (int i = 0; i < cfg.substeps_per_action; ++i) force_sum += detail::substep(model, cfg, s, action);
  s.link_force = force_sum / cfg.substeps_per_action;
  ++s.step_count;
  detail::check_finite(s);
  return s;
}

inline SimState set_surface(SimState s, SurfaceMode mode, double lowered_by = 1.0) {
  s.surface.mode = mode;
  s.surface.lowered_by = lowered_by;
  return s;
}

/// Kinetic + gravitational energy of object and hand, plus the elastic energy
/// stored in the penalty springs of the current geometry.
inline double mechanical_energy(const HandModel& model, const SimConfig& cfg, const SimState& s) {
  const auto& o = s.object;
  double e = 0.5 * o.mass() * o.twist.linear.squaredNorm() +
             0.5 * o.twist.angular.dot(o.inertia_world() * o.twist.angular) - o.mass() * cfg.gravity.dot(o.pose.position);
  e += 0.5 * model.wrist.mass * s.hand.wrist_twist.linear.squaredNorm() +
       0.5 * model.wrist.inertia * s.hand.wrist_twist.angular.squaredNorm() +
       0.5 * model.joint_inertia * s.hand.qdot.squaredNorm();
  if (cfg.hand_gravity) e -= model.wrist.mass * cfg.gravity.dot(s.hand.wrist.position);
  const auto fk = forward_kinematics(model, s.hand.wrist, s.hand.q);
  for (const auto& cp : detect_contacts(model, fk, s.object, s.surface, cfg.hand_surface_collision))
    e += 0.5 * cfg.contact_stiffness * cp.depth * cp.depth;
  return e;
}

// ---------------------------------------------------------------------------
// Scene config

struct SceneConfig {
  double surface_height = 0.0;
  std::map<std::string, ObjectSpec> objects;
  SimConfig sim;

  const ObjectSpec& object(const std::string& id) const {
    auto it = objects.find(id);
    if (it == objects.end()) throw std::invalid_argument("scene has no object '" + id + "'");
    return it->second;
  }
};

inline SceneConfig default_scene() {
  SceneConfig s;
  s.objects["sphere40"] = ObjectSpec{ObjectShape::sphere(0.04), 0.2, 0.8};
  return s;
}

inline ObjectSpec object_spec_from_json(const nlohmann::json& j, const std::string& where) {
  ObjectSpec o;
  const std::string kind = j.at("shape").get<std::string>();
  o.shape.kind = shape_kind_from_string(kind);
  const auto& d = j.at("dims");
  if (!d.is_array() || d.empty() || d.size() > 3) throw std::invalid_argument(where + ".dims: expected 1-3 numbers");
  o.shape.dims = Vec3::Zero();
  for (size_t i = 0; i < d.size(); ++i) o.shape.dims[static_cast<int>(i)] = d[i].get<double>();
  o.mass = j.value("mass", o.mass);
  o.friction = j.value("friction", o.friction);
  try {
    o.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(where + ": " + e.what());
  }
  return o;
}

inline nlohmann::json sim_config_to_json(const SimConfig& c) {
  return {{"dt", c.dt},
          {"substeps_per_action", c.substeps_per_action},
          {"gravity", vec3_to_json(c.gravity)},
          {"contact_stiffness", c.contact_stiffness},
          {"contact_damping", c.contact_damping},
          {"surface_friction", c.surface_friction},
          {"rolling_friction", c.rolling_friction},
          {"hand_surface_collision", c.hand_surface_collision},
          {"hand_gravity", c.hand_gravity},
          {"kinematic", c.kinematic}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  c.dt = j.value("dt", c.dt);
  c.substeps_per_action = j.value("substeps_per_action", c.substeps_per_action);
  if (j.contains("gravity")) c.gravity = vec3_from_json(j["gravity"], "sim.gravity");
  c.contact_stiffness = j.value("contact_stiffness", c.contact_stiffness);
  c.contact_damping = j.value("contact_damping", c.contact_damping);
  c.surface_friction = j.value("surface_friction", c.surface_friction);
  c.rolling_friction = j.value("rolling_friction", c.rolling_friction);
  c.hand_surface_collision = j.value("hand_surface_collision", c.hand_surface_collision);
  c.hand_gravity = j.value("hand_gravity", c.hand_gravity);
  c.kinematic = j.value("kinematic", c.kinematic);
  c.validate();
  return c;
}

/// Schema:
/// { "surface_height": 0.0, "hand_surface_collision": true,
///   "objects": { "<id>": {"shape": "sphere|box|cylinder", "dims": [..],
///                         "mass": kg, "friction": mu} },
///   "sim": { "dt": .., "substeps_per_action": .., "contact_stiffness": .., ... } }
inline SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig s;
  s.surface_height = j.value("surface_height", 0.0);
  if (j.contains("sim")) s.sim = sim_config_from_json(j["sim"]);
  if (j.contains("hand_surface_collision")) s.sim.hand_surface_collision = j["hand_surface_collision"].get<bool>();
  if (!j.contains("objects") || !j["objects"].is_object() || j["objects"].empty())
    throw std::invalid_argument("scene: 'objects' must be a non-empty object");
  for (const auto& [id, oj] : j["objects"].items()) s.objects[id] = object_spec_from_json(oj, "scene.objects." + id);
  return s;
}

inline nlohmann::json scene_to_json(const SceneConfig& s) {
  nlohmann::json objs = nlohmann::json::object();
  for (const auto& [id, o] : s.objects) {
    std::vector<double> dims;
    const int n = o.shape.kind == ShapeKind::Sphere ? 1 : o.shape.kind == ShapeKind::Cylinder ? 2 : 3;
    for (int i = 0; i < n; ++i) dims.push_back(o.shape.dims[i]);
    objs[id] = {{"shape", to_string(o.shape.kind)}, {"dims", dims}, {"mass", o.mass}, {"friction", o.friction}};
  }
  return {{"surface_height", s.surface_height},
          {"hand_surface_collision", s.sim.hand_surface_collision},
          {"objects", objs},
          {"sim", sim_config_to_json(s.sim)}};
}

inline SceneConfig load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene '" + path + "'");
  return scene_from_json(nlohmann::json::parse(in));
}

/// One JSONL-ready snapshot of the simulator state.
inline nlohmann::json state_to_json(const SimState& s) {
  auto contacts = nlohmann::json::array();
  for (const auto& c : s.contacts) {
    if (c.pair != ContactPair::HandObject) continue;
    contacts.push_back({{"link", c.hand_link}, {"point", vec3_to_json(c.point)}, {"force", c.force}});
  }
  return {{"step", s.step_count},
          {"T_h", pose_to_json(s.hand.wrist)},
          {"q_h", std::vector<double>(s.hand.q.data(), s.hand.q.data() + s.hand.q.size())},
          {"T_o", pose_to_json(s.object.pose)},
          {"contacts", contacts}};
}

}  // namespace dgrasp
