#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/geometry.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/se3.hpp"

namespace dgrasp {

inline constexpr double kContactThreshold = 0.015;  // m
inline constexpr int kObjectSurfacePoints = 512;
inline constexpr int kLinkSurfacePoints = 64;

/// Label file content that violates the schema; the message names the field.
class LabelSchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Points on an object's surface, expressed in the object frame.
struct SurfacePointSet {
  std::vector<Vec3> points;
};

inline SurfacePointSet sample_surface(const ObjectShape& shape, int n = kObjectSurfacePoints) {
  return {sample_shape_surface(shape, n)};
}

/// Static grasp reference plus the quantities derived from it.
struct GraspLabel {
  std::string object_id;
  Pose6D object_pose;  // T̄_o
  Pose6D hand_pose;    // T̄_h
  Eigen::VectorXd q;   // q̄_h

  // derived, never serialized
  std::vector<Vec3> target_positions;  // x̄_h: link origins in the label's object frame
  Eigen::VectorXi target_contacts;     // ḡ_c: one flag per link

  int desired_contact_count() const { return target_contacts.size() ? target_contacts.sum() : 0; }
};

/// Collider surface samples of one link, in world coordinates.
inline std::vector<Vec3> link_surface_points(const HandModel& model, const HandKinematics& fk, int link,
                                             int n = kLinkSurfacePoints) {
  const auto& col = model.links[link].collider;
  const Vec3 c = fk.collider_center(model, link);
  std::vector<Vec3> pts = fibonacci_sphere(n, col.radius);
  for (auto& p : pts) p += c;
  return pts;
}

/// Hand FK of the label expressed in the label's object frame.
inline HandKinematics label_kinematics_in_object_frame(const HandModel& model, const GraspLabel& label) {
  return forward_kinematics(model, relative_to(label.hand_pose, label.object_pose), label.q);
}

/// ḡ_c,j = 1 iff some collider sample of link j lies within `eps` of some
/// object surface point.
inline Eigen::VectorXi derive_target_contacts(const HandModel& model, const GraspLabel& label,
                                              const SurfacePointSet& object_points, double eps = kContactThreshold) {
  if (object_points.points.empty()) throw std::invalid_argument("derive_target_contacts: empty object point set");
  if (!(eps > 0.0)) throw std::invalid_argument("derive_target_contacts: eps must be > 0");
  const HandKinematics fk = label_kinematics_in_object_frame(model, label);
  const double eps2 = eps * eps;
  Eigen::VectorXi flags = Eigen::VectorXi::Zero(model.link_count());
  for (int l = 0; l < model.link_count(); ++l) {
    const Vec3 center = fk.collider_center(model, l);
    const double reach = model.links[l].collider.radius + eps;
    const auto samples = link_surface_points(model, fk, l);
    for (const Vec3& o : object_points.points) {
      // no sample on the collider sphere can be within eps of o
      if ((o - center).squaredNorm() >= reach * reach) continue;
      bool hit = false;
      for (const Vec3& v : samples) {
        if ((v - o).squaredNorm() < eps2) {
          hit = true;
          break;
        }
      }
      if (hit) {
        flags[l] = 1;
        break;
      }
    }
  }
  return flags;
}

/// g_c = (ḡ_c, 1[ḡ_c > 0])
inline Eigen::VectorXd contact_goal_vector(const Eigen::VectorXi& desired) {
  const auto n = desired.size();
  Eigen::VectorXd g(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g[i] = static_cast<double>(desired[i]);
    g[n + i] = desired[i] > 0 ? 1.0 : 0.0;
  }
  return g;
}

/// Checks the label against the model and fills the derived fields.
inline void finalize_label(const HandModel& model, GraspLabel& label, const SurfacePointSet& object_points,
                           double eps = kContactThreshold) {
  if (label.q.size() != model.joint_count())
    throw LabelSchemaError("q_hand: expected " + std::to_string(model.joint_count()) + " joint angles, got " +
                           std::to_string(label.q.size()));
  for (int j = 0; j < model.joint_count(); ++j) {
    const auto& lim = model.limits[j];
    if (label.q[j] < lim.lo - 1e-9 || label.q[j] > lim.hi + 1e-9)
      throw LabelSchemaError("q_hand[" + std::to_string(j) + "]: outside joint limits");
  }
  const HandKinematics fk = label_kinematics_in_object_frame(model, label);
  label.target_positions = fk.joint_positions;
  label.target_contacts = derive_target_contacts(model, label, object_points, eps);
}

// ---------------------------------------------------------------------------
// File I/O. One record per grasp:
//   {"object_id": str, "pose_object": [7], "pose_hand": [7], "q_hand": [J]}
// wrapped as {"meta": {...}, "labels": [records]}.

inline nlohmann::json label_to_json(const GraspLabel& l) {
  return {{"object_id", l.object_id},
          {"pose_object", pose_to_json(l.object_pose)},
          {"pose_hand", pose_to_json(l.hand_pose)},
          {"q_hand", std::vector<double>(l.q.data(), l.q.data() + l.q.size())}};
}

inline GraspLabel label_from_json(const nlohmann::json& j, const std::string& where) {
  auto require = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw LabelSchemaError(where + "." + key + ": missing field");
    return j[key];
  };
  GraspLabel l;
  const auto& id = require("object_id");
  if (!id.is_string()) throw LabelSchemaError(where + ".object_id: expected string");
  l.object_id = id.get<std::string>();
  for (const char* key : {"pose_object", "pose_hand"}) {
    const auto& pj = require(key);
    if (!pj.is_array() || pj.size() != 7) throw LabelSchemaError(where + "." + key + ": expected 7 numbers");
    std::array<double, 7> a{};
    for (int i = 0; i < 7; ++i) {
      if (!pj[i].is_number()) throw LabelSchemaError(where + "." + key + ": expected 7 numbers");
      a[i] = pj[i].get<double>();
    }
    try {
      (std::string(key) == "pose_object" ? l.object_pose : l.hand_pose) = Pose6D::from_array(a);
    } catch (const std::invalid_argument& e) {
      throw LabelSchemaError(where + "." + key + ": " + e.what());
    }
  }
  const auto& qj = require("q_hand");
  if (!qj.is_array()) throw LabelSchemaError(where + ".q_hand: expected array");
  l.q.resize(static_cast<Eigen::Index>(qj.size()));
  for (size_t i = 0; i < qj.size(); ++i) {
    if (!qj[i].is_number()) throw LabelSchemaError(where + ".q_hand: expected numbers");
    l.q[static_cast<Eigen::Index>(i)] = qj[i].get<double>();
  }
  return l;
}

inline nlohmann::json labels_to_json(const std::vector<GraspLabel>& labels, const nlohmann::json& meta = {}) {
  auto arr = nlohmann::json::array();
  for (const auto& l : labels) arr.push_back(label_to_json(l));
  nlohmann::json j;
  j["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  j["labels"] = arr;
  return j;
}

inline std::vector<GraspLabel> labels_from_json(const nlohmann::json& j) {
  if (!j.contains("labels") || !j["labels"].is_array()) throw LabelSchemaError("labels: missing array");
  std::vector<GraspLabel> out;
  for (size_t i = 0; i < j["labels"].size(); ++i)
    out.push_back(label_from_json(j["labels"][i], "labels[" + std::to_string(i) + "]"));
  return out;
}

inline void save_labels(const std::string& path, const std::vector<GraspLabel>& labels,
                        const nlohmann::json& meta = {}) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write label file '" + path + "'");
  out << labels_to_json(labels, meta).dump(2) << "\n";
}

/// Loads raw records. Call finalize_label per record to validate against a
/// hand model and recompute derived fields.
inline std::vector<GraspLabel> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw LabelSchemaError(path + ": " + e.what());
  }
  return labels_from_json(j);
}

}  // namespace dgrasp
