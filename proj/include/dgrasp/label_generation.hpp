#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgrasp/grasp_label.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/sim.hpp"

namespace dgrasp {

struct LabelGenOptions {
  double palm_gap = 0.002;      // target palm clearance, m
  double tip_gap = 0.001;       // target clearance of closed fingers, m
  double min_link_gap = 0.0005;  // every other link must stay at least this far out
  double max_tilt = 0.10;       // rad, random tilt of the approach axis
  int min_contacts = 2;
  int max_attempts = 50;
};

namespace detail {

// Clearance between a link collider and the object (negative = penetrating).
inline double link_clearance(const HandModel& model, const HandKinematics& fk, int link, const ObjectShape& shape) {
  return shape.closest(fk.collider_center(model, link)).signed_distance - model.links[link].collider.radius;
}

// Clearance above the support plane z = floor_z (object frame).
inline double floor_clearance(const HandModel& model, const HandKinematics& fk, int link, std::optional<double> floor_z) {
  if (!floor_z) return std::numeric_limits<double>::infinity();
  return fk.collider_center(model, link).z() - model.links[link].collider.radius - *floor_z;
}

inline double min_clearance(const HandModel& model, const HandKinematics& fk, const ObjectShape& shape,
                            std::optional<double> floor_z) {
  double best = std::numeric_limits<double>::infinity();
  for (int l = 0; l < model.link_count(); ++l)
    best = std::min({best, link_clearance(model, fk, l, shape), floor_clearance(model, fk, l, floor_z)});
  return best;
}

// Children of `link` in the kinematic tree, assumed a chain per finger.
inline std::vector<int> finger_chain(const HandModel& model, int tip) {
  std::vector<int> chain;
  for (int l = tip; l > 0; l = model.links[l].parent) chain.insert(chain.begin(), l);
  return chain;
}

}  // namespace detail

/// Heuristic enveloping grasp of `shape` (object frame at the origin): the
/// palm descends along a tilted approach axis until it nearly touches, then
/// every finger closes until its tip touches the surface. Returns the wrist
/// pose and joint angles in the object frame, or nullopt if no finger
/// configuration is feasible. `floor_z` is an optional support plane (object
/// frame, normal +z) that no collider may cross.
inline std::optional<std::pair<Pose6D, Eigen::VectorXd>> envelop_grasp(const HandModel& model,
                                                                        const ObjectShape& shape, const Quat& wrist_rot,
                                                                        const LabelGenOptions& opt,
                                                                        std::optional<double> floor_z = std::nullopt) {
  const Vec3 approach = wrist_rot * Vec3::UnitZ();  // palm faces -approach
  Eigen::VectorXd q = Eigen::VectorXd::Zero(model.joint_count());
  for (int j = 0; j < model.joint_count(); ++j) q[j] = std::clamp(0.0, model.limits[j].lo, model.limits[j].hi);

  auto palm_clearance = [&](double h) {
    const auto fk = forward_kinematics(model, Pose6D(approach * h, wrist_rot), q);
    return detail::link_clearance(model, fk, 0, shape);
  };
  double lo = 0.0;
  double hi = shape.bounding_radius() + 0.2;
  if (palm_clearance(hi) < opt.palm_gap) return std::nullopt;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (palm_clearance(mid) < opt.palm_gap ? lo : hi) = mid;
  }
  const Pose6D wrist(approach * hi, wrist_rot);

  for (int tip : model.fingertips) {
    const auto chain = detail::finger_chain(model, tip);
    if (chain.size() != 2) return std::nullopt;  // generator handles two-joint fingers
    const int j1 = model.links[chain[0]].joint;
    const int j2 = model.links[chain[1]].joint;
    const auto& l1 = model.limits[j1];
    const auto& l2 = model.limits[j2];
    double best_score = -std::numeric_limits<double>::infinity();
    std::optional<std::pair<double, double>> best;
    for (double a = std::max(0.0, l1.lo); a <= l1.hi; a += 0.02) {
      Eigen::VectorXd qq = q;
      qq[j1] = a;
      qq[j2] = std::max(0.0, l2.lo);
      auto clearance_at = [&](double b) {
        qq[j2] = b;
        const auto fk = forward_kinematics(model, wrist, qq);
        return detail::link_clearance(model, fk, tip, shape);
      };
      auto others_ok = [&](double b) {
        qq[j2] = b;
        const auto fk = forward_kinematics(model, wrist, qq);
        return detail::link_clearance(model, fk, chain[0], shape) >= opt.min_link_gap &&
               detail::floor_clearance(model, fk, chain[0], floor_z) >= opt.min_link_gap &&
               detail::floor_clearance(model, fk, tip, floor_z) >= opt.min_link_gap;
      };
      if (clearance_at(std::max(0.0, l2.lo)) < opt.tip_gap) continue;
      // first flexion where the tip reaches the target clearance
      double prev = std::max(0.0, l2.lo);
      std::optional<double> hit;
      for (double b = prev + 0.01; b <= l2.hi; b += 0.01) {
        if (clearance_at(b) < opt.tip_gap) {
          double blo = prev;
          double bhi = b;
          for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (blo + bhi);
            (clearance_at(mid) < opt.tip_gap ? bhi : blo) = mid;
          }
          hit = blo;
          break;
        }
        prev = b;
      }
      if (!hit || !others_ok(*hit)) continue;
      qq[j2] = *hit;
      const auto fk = forward_kinematics(model, wrist, qq);
      // deeper wrap (tip further past the centre along -approach) cages better
      const double score = -fk.collider_center(model, tip).dot(approach);
      if (score > best_score) {
        best_score = score;
        best = std::make_pair(a, *hit);
      }
    }
    if (!best) return std::nullopt;
    q[j1] = best->first;
    q[j2] = best->second;
  }
  const auto fk = forward_kinematics(model, wrist, q);
  if (detail::min_clearance(model, fk, shape, floor_z) < std::min(opt.min_link_gap, opt.tip_gap) - 1e-6)
    return std::nullopt;
  return std::make_pair(wrist, q);
}

/// Generates `count` labels for `object_id` resting on the scene surface.
/// Each label has at least `min_contacts` desired contacts.
inline std::vector<GraspLabel> generate_labels(const HandModel& model, const SceneConfig& scene,
                                               const std::string& object_id, int count, std::uint64_t seed,
                                               const LabelGenOptions& opt = {}) {
  const ObjectSpec& spec = scene.object(object_id);
  const SurfacePointSet pts = sample_surface(spec.shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<GraspLabel> labels;
  for (int i = 0; i < count; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < opt.max_attempts && !done; ++attempt) {
      const double yaw = 2.0 * std::numbers::pi * unit(rng);
      const double tilt = opt.max_tilt * unit(rng);
      const double tilt_dir = 2.0 * std::numbers::pi * unit(rng);
      const Vec3 tilt_axis(std::cos(tilt_dir), std::sin(tilt_dir), 0.0);
      const Quat rot = canonical(Quat(Eigen::AngleAxisd(tilt, tilt_axis)) * Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())));
      GraspLabel label;
      label.object_id = object_id;
      label.object_pose = resting_pose(spec, scene.surface_height);
      const double floor_z = scene.surface_height - label.object_pose.position.z();
      const auto grasp = envelop_grasp(model, spec.shape, rot, opt, floor_z);
      if (!grasp) continue;
      label.hand_pose = compose(label.object_pose, grasp->first);
      label.q = grasp->second;
      finalize_label(model, label, pts);
      if (label.desired_contact_count() < opt.min_contacts) continue;
      labels.push_back(std::move(label));
      done = true;
    }
    if (!done)
      throw std::runtime_error("label generation failed for label " + std::to_string(i) + " of object '" +
                               object_id + "'");
  }
  return labels;
}

}  // namespace dgrasp
