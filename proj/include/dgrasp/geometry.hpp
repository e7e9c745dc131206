#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgrasp/se3.hpp"

namespace dgrasp {

enum class ShapeKind { Sphere, Box, Cylinder };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Cylinder: return "cylinder";
  }
  return "?";
}

inline ShapeKind shape_kind_from_string(const std::string& s) {
  if (s == "sphere") return ShapeKind::Sphere;
  if (s == "box") return ShapeKind::Box;
  if (s == "cylinder") return ShapeKind::Cylinder;
  throw std::invalid_argument("unknown shape kind '" + s + "'");
}

/// Result of a closest-surface-point query in the shape's local frame.
struct SurfaceQuery {
  Vec3 point;            // closest point on the surface
  Vec3 normal;           // outward unit normal at `point`
  double signed_distance;  // negative inside
};

/// Convex primitive centred at its local origin. Cylinders run along local z.
///   sphere:   dims = (radius, -, -)
///   box:      dims = half extents
///   cylinder: dims = (radius, half height, -)
struct ObjectShape {
  ShapeKind kind = ShapeKind::Sphere;
  Vec3 dims = Vec3(0.04, 0.0, 0.0);

  static ObjectShape sphere(double r) { return {ShapeKind::Sphere, Vec3(r, 0, 0)}; }
  static ObjectShape box(double hx, double hy, double hz) { return {ShapeKind::Box, Vec3(hx, hy, hz)}; }
  static ObjectShape cylinder(double r, double half_height) {
    return {ShapeKind::Cylinder, Vec3(r, half_height, 0)};
  }

  void validate() const {
    const int n = kind == ShapeKind::Sphere ? 1 : kind == ShapeKind::Cylinder ? 2 : 3;
    for (int i = 0; i < n; ++i)
      if (!(dims[i] > 0.0) || !std::isfinite(dims[i]))
        throw std::invalid_argument("shape dimensions must be positive");
  }

  double volume() const {
    switch (kind) {
      case ShapeKind::Sphere: return 4.0 / 3.0 * std::numbers::pi * std::pow(dims.x(), 3);
      case ShapeKind::Box: return 8.0 * dims.x() * dims.y() * dims.z();
      case ShapeKind::Cylinder: return std::numbers::pi * dims.x() * dims.x() * 2.0 * dims.y();
    }
    return 0.0;
  }

  /// Radius of the smallest origin-centred sphere enclosing the shape.
  double bounding_radius() const {
    switch (kind) {
      case ShapeKind::Sphere: return dims.x();
      case ShapeKind::Box: return dims.norm();
      case ShapeKind::Cylinder: return std::hypot(dims.x(), dims.y());
    }
    return 0.0;
  }

  /// Diagonal of the body-frame inertia tensor for a solid of uniform density.
  Vec3 principal_inertia(double mass) const {
    switch (kind) {
      case ShapeKind::Sphere: {
        const double i = 0.4 * mass * dims.x() * dims.x();
        return Vec3::Constant(i);
      }
      case ShapeKind::Box: {
        const Vec3 e = 2.0 * dims;
        return mass / 12.0 * Vec3(e.y() * e.y() + e.z() * e.z(), e.x() * e.x() + e.z() * e.z(),
                                  e.x() * e.x() + e.y() * e.y());
      }
      case ShapeKind::Cylinder: {
        const double r2 = dims.x() * dims.x();
        const double h = 2.0 * dims.y();
        const double side = mass * (3.0 * r2 + h * h) / 12.0;
        return Vec3(side, side, 0.5 * mass * r2);
      }
    }
    return Vec3::Zero();
  }

  bool contains(const Vec3& p) const { return closest(p).signed_distance < 0.0; }

  SurfaceQuery closest(const Vec3& p) const {
    switch (kind) {
      case ShapeKind::Sphere: return closest_sphere(p);
      case ShapeKind::Box: return closest_box(p);
      case ShapeKind::Cylinder: return closest_cylinder(p);
    }
    throw std::logic_error("bad shape kind");
  }

  /// Points whose contact with a support plane is tested (box corners,
  /// cylinder rims). Spheres are handled analytically and return nothing.
  std::vector<Vec3> plane_probe_points() const {
    std::vector<Vec3> pts;
    if (kind == ShapeKind::Box) {
      for (int sx : {-1, 1})
        for (int sy : {-1, 1})
          for (int sz : {-1, 1}) pts.emplace_back(sx * dims.x(), sy * dims.y(), sz * dims.z());
    } else if (kind == ShapeKind::Cylinder) {
      constexpr int kRim = 16;
      for (int s : {-1, 1})
        for (int i = 0; i < kRim; ++i) {
          const double a = 2.0 * std::numbers::pi * i / kRim;
          pts.emplace_back(dims.x() * std::cos(a), dims.x() * std::sin(a), s * dims.y());
        }
    }
    return pts;
  }

 private:
  SurfaceQuery closest_sphere(const Vec3& p) const {
    const double r = dims.x();
    const double n = p.norm();
    const Vec3 dir = n > 1e-15 ? Vec3(p / n) : Vec3::UnitZ();
    return {dir * r, dir, n - r};
  }

  SurfaceQuery closest_box(const Vec3& p) const {
    const Vec3& h = dims;
    const Vec3 clamped = p.cwiseMax(-h).cwiseMin(h);
    const Vec3 diff = p - clamped;
    const double d = diff.norm();
    if (d > 0.0) return {clamped, diff / d, d};
    int axis = 0;
    double best = h.x() - std::abs(p.x());
    for (int i = 1; i < 3; ++i) {
      const double gap = h[i] - std::abs(p[i]);
      if (gap < best) {
        best = gap;
        axis = i;
      }
    }
    const double sign = p[axis] >= 0.0 ? 1.0 : -1.0;
    Vec3 point = p;
    point[axis] = sign * h[axis];
    Vec3 normal = Vec3::Zero();
    normal[axis] = sign;
    return {point, normal, -best};
  }

  SurfaceQuery closest_cylinder(const Vec3& p) const {
    const double radius = dims.x();
    const double half_h = dims.y();
    const double rxy = std::hypot(p.x(), p.y());
    const Eigen::Vector2d radial =
        rxy > 1e-15 ? Eigen::Vector2d(p.x() / rxy, p.y() / rxy) : Eigen::Vector2d(1.0, 0.0);
    const double dr = rxy - radius;
    const double dz = std::abs(p.z()) - half_h;
    const double zsign = p.z() >= 0.0 ? 1.0 : -1.0;
    if (dr <= 0.0 && dz <= 0.0) {
      if (dr > dz) {
        return {Vec3(radial.x() * radius, radial.y() * radius, p.z()), Vec3(radial.x(), radial.y(), 0.0), dr};
      }
      return {Vec3(p.x(), p.y(), zsign * half_h), Vec3(0, 0, zsign), dz};
    }
    const double r_clamped = std::min(rxy, radius);
    const Vec3 point(radial.x() * r_clamped, radial.y() * r_clamped, std::clamp(p.z(), -half_h, half_h));
    const Vec3 diff = p - point;
    const double d = diff.norm();
    return {point, diff / d, d};
  }
};

/// Quasi-uniform points on a sphere of radius `r` (Fibonacci lattice).
inline std::vector<Vec3> fibonacci_sphere(int n, double r) {
  std::vector<Vec3> pts;
  pts.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / n;
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * i;
    pts.emplace_back(r * rho * std::cos(a), r * rho * std::sin(a), r * z);
  }
  return pts;
}

namespace detail {

// R2 low-discrepancy sequence in the unit square.
inline Eigen::Vector2d r2_point(int i) {
  constexpr double g = 1.32471795724474602596;
  constexpr double a1 = 1.0 / g;
  constexpr double a2 = 1.0 / (g * g);
  double u = 0.5 + a1 * (i + 1);
  double v = 0.5 + a2 * (i + 1);
  return {u - std::floor(u), v - std::floor(v)};
}

// Splits `n` samples across regions proportionally to `areas` (largest remainder).
inline std::vector<int> apportion(int n, const std::vector<double>& areas) {
  double total = 0.0;
  for (double a : areas) total += a;
  std::vector<int> counts(areas.size());
  std::vector<std::pair<double, size_t>> rem;
  int used = 0;
  for (size_t i = 0; i < areas.size(); ++i) {
    const double exact = n * areas[i] / total;
    counts[i] = static_cast<int>(std::floor(exact));
    used += counts[i];
    rem.emplace_back(exact - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (int k = 0; used < n; ++k, ++used) counts[rem[k % rem.size()].second]++;
  return counts;
}

}  // namespace detail

/// Quasi-uniform surface samples of a primitive, in its local frame.
inline std::vector<Vec3> sample_shape_surface(const ObjectShape& shape, int n) {
  shape.validate();
  if (n <= 0) return {};
  const Vec3& d = shape.dims;
  switch (shape.kind) {
    case ShapeKind::Sphere: return fibonacci_sphere(n, d.x());
    case ShapeKind::Box: {
      // faces: +-x (area y*z), +-y, +-z
      const std::vector<double> areas = {d.y() * d.z(), d.y() * d.z(), d.x() * d.z(),
                                         d.x() * d.z(), d.x() * d.y(), d.x() * d.y()};
      const auto counts = detail::apportion(n, areas);
      std::vector<Vec3> pts;
      pts.reserve(n);
      for (int f = 0; f < 6; ++f) {
        const int axis = f / 2;
        const double sign = (f % 2 == 0) ? 1.0 : -1.0;
        const int u_axis = (axis + 1) % 3;
        const int v_axis = (axis + 2) % 3;
        for (int i = 0; i < counts[f]; ++i) {
          const auto uv = detail::r2_point(i);
          Vec3 p;
          p[axis] = sign * d[axis];
          p[u_axis] = (2.0 * uv.x() - 1.0) * d[u_axis];
          p[v_axis] = (2.0 * uv.y() - 1.0) * d[v_axis];
          pts.push_back(p);
        }
      }
      return pts;
    }
    case ShapeKind::Cylinder: {
      const double r = d.x();
      const double h = d.y();
      const double cap = std::numbers::pi * r * r;
      const auto counts = detail::apportion(n, {2.0 * std::numbers::pi * r * 2.0 * h, cap, cap});
      std::vector<Vec3> pts;
      pts.reserve(n);
      for (int i = 0; i < counts[0]; ++i) {
        const auto uv = detail::r2_point(i);
        const double a = 2.0 * std::numbers::pi * uv.x();
        pts.emplace_back(r * std::cos(a), r * std::sin(a), (2.0 * uv.y() - 1.0) * h);
      }
      const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
      for (int c = 1; c <= 2; ++c) {
        const double z = c == 1 ? h : -h;
        for (int i = 0; i < counts[c]; ++i) {
          const double rho = r * std::sqrt((i + 0.5) / counts[c]);
          const double a = golden * i;
          pts.emplace_back(rho * std::cos(a), rho * std::sin(a), z);
        }
      }
      return pts;
    }
  }
  return {};
}

}  // namespace dgrasp
