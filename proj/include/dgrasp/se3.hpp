#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Geometry>

namespace dgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Flips the quaternion so the scalar part is non-negative and renormalizes.
inline Quat canonical(Quat q) {
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

/// Rotation vector (axis * angle, angle in [0, pi]) of a unit quaternion.
inline Vec3 log_map(const Quat& q_in) {
  const Quat q = canonical(q_in);
  const Vec3 v = q.vec();
  const double n = v.norm();
  if (n < 1e-12) return 2.0 * v / q.w();
  return v * (2.0 * std::atan2(n, q.w()) / n);
}

inline Quat exp_map(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z());
    return canonical(q);
  }
  return canonical(Quat(Eigen::AngleAxisd(angle, rotvec / angle)));
}

/// Rigid transform: position in metres, orientation as a unit quaternion.
struct Pose6D {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  Pose6D() = default;
  Pose6D(const Vec3& p, const Quat& q) : position(p), orientation(canonical(q)) {}

  static Pose6D identity() { return {}; }
  static Pose6D translation(double x, double y, double z) { return {Vec3(x, y, z), Quat::Identity()}; }
  static Pose6D rotation(const Vec3& axis, double angle) {
    return {Vec3::Zero(), Quat(Eigen::AngleAxisd(angle, axis.normalized()))};
  }

  Mat3 rotation_matrix() const { return orientation.toRotationMatrix(); }
  Vec3 apply(const Vec3& x) const { return position + orientation * x; }

  /// [x, y, z, qw, qx, qy, qz]
  std::array<double, 7> to_array() const {
    return {position.x(), position.y(), position.z(), orientation.w(),
            orientation.x(), orientation.y(), orientation.z()};
  }

  /// Throws if the quaternion part is not unit length within `tol`.
  static Pose6D from_array(const std::array<double, 7>& a, double tol = 1e-6) {
    Quat q(a[3], a[4], a[5], a[6]);
    const double n = q.norm();
    if (!std::isfinite(n) || std::abs(n - 1.0) > tol)
      throw std::invalid_argument("pose quaternion is not unit length (norm " + std::to_string(n) + ")");
    return {Vec3(a[0], a[1], a[2]), q};
  }
};

/// Linear (m/s) and angular (rad/s) velocity, both in world axes.
struct Twist6D {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();

  bool finite() const { return linear.allFinite() && angular.allFinite(); }
};

/// Difference between two poses: translation plus world-frame rotation vector.
struct PoseDelta {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();
};

inline Pose6D compose(const Pose6D& a, const Pose6D& b) {
  return {a.position + a.orientation * b.position, a.orientation * b.orientation};
}

inline Pose6D inverse(const Pose6D& p) {
  const Quat qi = p.orientation.conjugate();
  return {-(qi * p.position), qi};
}

/// Expresses `world` in the coordinates of `frame`: frame^-1 * world.
inline Pose6D relative_to(const Pose6D& world, const Pose6D& frame) {
  return compose(inverse(frame), world);
}

/// Angle of the relative rotation a * b^T, with the acos argument clamped.
inline double geodesic_distance(const Mat3& a, const Mat3& b) {
  const Mat3 r = a * b.transpose();
  const Vec3 s(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * s.norm(), 0.5 * (r.trace() - 1.0));
}

inline double geodesic_distance(const Quat& a, const Quat& b) {
  const Quat d = a * b.conjugate();
  return 2.0 * std::atan2(d.vec().norm(), std::abs(d.w()));
}

/// Gap that carries `from` onto `to`: position difference and rotation
/// vector of to * from^-1.
inline PoseDelta pose_delta(const Pose6D& from, const Pose6D& to) {
  return {to.position - from.position, log_map(to.orientation * from.orientation.conjugate())};
}

/// Advances `current` by a fraction `beta` of `delta`: positions add linearly,
/// the orientation is rotated by beta * angle about the delta's axis.
inline Pose6D scaled_pose_step(const Pose6D& current, const PoseDelta& delta, double beta) {
  return {current.position + beta * delta.translation,
          exp_map(beta * delta.rotation) * current.orientation};
}

inline bool approx_equal(const Pose6D& a, const Pose6D& b, double tol = 1e-9) {
  return (a.position - b.position).norm() <= tol &&
         std::abs(std::abs(a.orientation.dot(b.orientation)) - 1.0) <= tol;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

/// Continuous 6-number encoding of a rotation: first two matrix columns.
inline std::array<double, 6> rotation_6d(const Quat& q) {
  const Mat3 r = q.toRotationMatrix();
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

}  // namespace dgrasp
