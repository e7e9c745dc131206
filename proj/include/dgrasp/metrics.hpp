#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/control.hpp"
#include "dgrasp/geometry.hpp"
#include "dgrasp/grasp_label.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/se3.hpp"

namespace dgrasp {

inline constexpr int kInterpenetrationSamples = 100000;

// ---------------------------------------------------------------------------
// Pose errors

/// Position error in mm.
inline double mpe(const Pose6D& object, const Pose6D& goal) { return 1000.0 * (object.position - goal.position).norm(); }

inline double geodesic_err(const Pose6D& object, const Pose6D& goal) {
  return geodesic_distance(object.orientation, goal.orientation);
}

// ---------------------------------------------------------------------------
// Post-grasp window

/// Steps after the grasp phase (hold or motion), at most `max_steps`, plus the
/// object height they are measured against: the last grasp-phase step, or the
/// first window step when the rollout has no grasp phase.
struct PostGraspWindow {
  std::vector<const RolloutStep*> steps;
  const RolloutStep* start = nullptr;
};

inline PostGraspWindow post_grasp_window(const RolloutRecord& r, int max_steps) {
  PostGraspWindow w;
  for (const auto& s : r.steps) {
    if (s.phase == Phase::Grasp) {
      if (w.steps.empty()) w.start = &s;
      continue;
    }
    if (static_cast<int>(w.steps.size()) < max_steps) w.steps.push_back(&s);
  }
  if (w.steps.empty()) throw std::invalid_argument("rollout has no post-grasp window");
  if (!w.start) w.start = w.steps.front();
  return w;
}

/// Largest drop of the object center below its window-start height.
inline double max_drop(const RolloutRecord& r, int window_steps = kHoldWindowSteps) {
  const PostGraspWindow w = post_grasp_window(r, window_steps);
  const double z0 = w.start->object.position.z();
  double drop = 0.0;
  for (const auto* s : w.steps) drop = std::max(drop, z0 - s->object.position.z());
  return drop;
}

inline bool rollout_success(const RolloutRecord& r, int window_steps = kHoldWindowSteps,
                            double fall_threshold = kFallThreshold) {
  return max_drop(r, window_steps) <= fall_threshold;
}

inline double success_rate(const std::vector<RolloutRecord>& rollouts, int window_steps = kHoldWindowSteps,
                           double fall_threshold = kFallThreshold) {
  if (rollouts.empty()) throw std::invalid_argument("success_rate: no rollouts");
  int ok = 0;
  for (const auto& r : rollouts) ok += rollout_success(r, window_steps, fall_threshold) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(rollouts.size());
}

// ---------------------------------------------------------------------------
// SimDist

struct SimDist {
  double mean = 0.0;  // mm/s
  double std = 0.0;   // mm/s
  std::vector<double> speeds;  // per-step relative speed, mm/s
};

/// Object position in the wrist frame.
inline Vec3 object_in_wrist(const RolloutStep& s) { return s.hand.orientation.conjugate() * (s.object.position - s.hand.position); }

/// Per-step change of the wrist-to-object translation over the post-grasp
/// window, as a speed in mm/s. Stops once the object has fallen.
inline SimDist sim_dist(const RolloutRecord& r, int window_steps = kHoldWindowSteps,
                        double fall_threshold = kFallThreshold) {
  if (!(r.control_dt > 0.0)) throw std::invalid_argument("sim_dist: rollout control_dt must be > 0");
  const PostGraspWindow w = post_grasp_window(r, window_steps);
  const double z0 = w.start->object.position.z();
  SimDist out;
  Vec3 prev = object_in_wrist(*w.start);
  for (const auto* s : w.steps) {
    const Vec3 cur = object_in_wrist(*s);
    out.speeds.push_back(1000.0 * (cur - prev).norm() / r.control_dt);
    prev = cur;
    if (z0 - s->object.position.z() > fall_threshold) break;
  }
  double sum = 0.0;
  for (double v : out.speeds) sum += v;
  out.mean = sum / static_cast<double>(out.speeds.size());
  double sq = 0.0;
  for (double v : out.speeds) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(out.speeds.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Contact ratio

/// Mean over steps of the share of desired contacts that carry force.
inline double contact_ratio(const RolloutRecord& r, const Eigen::VectorXi& desired) {
  const int want = desired.sum();
  if (want <= 0) throw std::invalid_argument("contact_ratio: label has no desired contacts");
  if (r.steps.empty()) throw std::invalid_argument("contact_ratio: empty rollout");
  double total = 0.0;
  for (const auto& s : r.steps) {
    if (s.link_force.size() != desired.size()) throw std::invalid_argument("contact_ratio: link count mismatch");
    int hit = 0;
    for (Eigen::Index j = 0; j < desired.size(); ++j) hit += (desired[j] != 0 && s.link_force[j] > 0.0) ? 1 : 0;
    total += static_cast<double>(hit) / want;
  }
  return total / static_cast<double>(r.steps.size());
}

// ---------------------------------------------------------------------------
// Interpenetration

struct Ball {
  Vec3 center;
  double radius;
};

struct VolumeEstimate {
  double volume = 0.0;          // cm^3
  double standard_error = 0.0;  // cm^3
};

/// Monte Carlo volume of the union of `balls` inside the region `inside`.
/// Samples are drawn uniformly in each ball, in proportion to its volume; a
/// sample counts for ball i only if no lower-index ball contains it, so
/// overlaps are counted once.
inline VolumeEstimate union_volume_inside(const std::vector<Ball>& balls,
                                          const std::function<bool(const Vec3&)>& inside, int samples,
                                          std::uint64_t seed) {
  if (samples < 1) throw std::invalid_argument("interpenetration: samples must be >= 1");
  double total_volume = 0.0;
  for (const auto& b : balls) {
    if (!(b.radius > 0.0) || !b.center.allFinite()) throw std::invalid_argument("interpenetration: degenerate collider");
    total_volume += 4.0 / 3.0 * std::numbers::pi * b.radius * b.radius * b.radius;
  }
  VolumeEstimate est;
  if (balls.empty()) return est;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  double variance = 0.0;
  for (size_t i = 0; i < balls.size(); ++i) {
    const Ball& b = balls[i];
    const double vol = 4.0 / 3.0 * std::numbers::pi * b.radius * b.radius * b.radius;
    const int n = std::max(1, static_cast<int>(std::ceil(samples * vol / total_volume)));
    int hits = 0;
    for (int k = 0; k < n; ++k) {
      Vec3 d(normal(rng), normal(rng), normal(rng));
      while (d.squaredNorm() < 1e-24) d = Vec3(normal(rng), normal(rng), normal(rng));
      const Vec3 p = b.center + b.radius * std::cbrt(uniform(rng)) * d.normalized();
      bool counted_before = false;
      for (size_t m = 0; m < i && !counted_before; ++m)
        counted_before = (p - balls[m].center).squaredNorm() <= balls[m].radius * balls[m].radius;
      if (!counted_before && inside(p)) ++hits;
    }
    const double frac = static_cast<double>(hits) / n;
    est.volume += vol * frac;
    variance += vol * vol * frac * (1.0 - frac) / n;
  }
  constexpr double kM3ToCm3 = 1e6;
  est.volume *= kM3ToCm3;
  est.standard_error = std::sqrt(variance) * kM3ToCm3;
  return est;
}

/// Hand collider volume inside the object for the given hand configuration.
inline VolumeEstimate interpenetration(const HandModel& model, const Pose6D& wrist, const Eigen::VectorXd& q,
                                       const ObjectShape& shape, const Pose6D& object_pose,
                                       int samples = kInterpenetrationSamples, std::uint64_t seed = 0) {
  const HandKinematics fk = forward_kinematics(model, wrist, q);
  std::vector<Ball> balls;
  for (int l = 0; l < model.link_count(); ++l) balls.push_back({fk.collider_center(model, l), model.links[l].collider.radius});
  const Pose6D to_object = inverse(object_pose);
  return union_volume_inside(
      balls, [&](const Vec3& p) { return shape.contains(to_object.apply(p)); }, samples, seed);
}

/// Evaluated at the last step of the grasp phase, or the first step when the
/// rollout has none.
inline VolumeEstimate rollout_interpenetration(const HandModel& model, const ObjectShape& shape,
                                               const RolloutRecord& r, int samples = kInterpenetrationSamples,
                                               std::uint64_t seed = 0) {
  if (r.steps.empty()) throw std::invalid_argument("interpenetration: empty rollout");
  const RolloutStep* at = &r.steps.front();
  for (const auto& s : r.steps)
    if (s.phase == Phase::Grasp) at = &s;
  return interpenetration(model, at->hand, at->q, shape, at->object, samples, seed);
}

// ---------------------------------------------------------------------------
// Per-rollout metrics and reports

struct RolloutMetrics {
  bool success = false;
  SimDist sim_dist;
  VolumeEstimate interpenetration;
  double contact_ratio = 0.0;
  double mpe = std::numeric_limits<double>::quiet_NaN();       // mm, rollouts with a goal
  double geodesic = std::numeric_limits<double>::quiet_NaN();  // rad
};

struct MetricOptions {
  int window_steps = kHoldWindowSteps;
  double fall_threshold = kFallThreshold;
  int interpenetration_samples = kInterpenetrationSamples;
  std::uint64_t seed = 0;
};

inline RolloutMetrics evaluate_rollout(const HandModel& model, const ObjectShape& shape, const RolloutRecord& r,
                                       const GraspLabel& label, const MetricOptions& opt = {}) {
  RolloutMetrics m;
  m.success = rollout_success(r, opt.window_steps, opt.fall_threshold);
  m.sim_dist = sim_dist(r, opt.window_steps, opt.fall_threshold);
  m.interpenetration = rollout_interpenetration(model, shape, r, opt.interpenetration_samples, opt.seed);
  m.contact_ratio = contact_ratio(r, label.target_contacts);
  if (r.goal && !r.steps.empty()) {
    m.mpe = mpe(r.steps.back().object, *r.goal);
    m.geodesic = geodesic_err(r.steps.back().object, *r.goal);
  }
  return m;
}

struct ReportRow {
  std::string object;
  double simdist_mean = 0.0;
  double simdist_std = 0.0;
  double success = 0.0;
  double interpenetration = 0.0;
  double interpenetration_se = 0.0;
  double contact_ratio = 0.0;
  double mpe = std::numeric_limits<double>::quiet_NaN();
  double geodesic = std::numeric_limits<double>::quiet_NaN();
  int rollouts = 0;
};

struct MetricsReport {
  std::vector<ReportRow> rows;  // sorted by object
  ReportRow average;            // unweighted mean of the rows
};

namespace detail {

/// Mean of the finite values, NaN if there are none.
inline double finite_mean(const std::vector<double>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    sum += x;
    ++n;
  }
  return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

/// One row per object. simdist_mean and simdist_std pool the per-step speeds
/// of all rollouts of that object.
inline MetricsReport build_report(const std::map<std::string, std::vector<RolloutMetrics>>& by_object) {
  if (by_object.empty()) throw std::invalid_argument("build_report: no rollouts");
  MetricsReport rep;
  for (const auto& [object, ms] : by_object) {
    if (ms.empty()) throw std::invalid_argument("build_report: object '" + object + "' has no rollouts");
    ReportRow row;
    row.object = object;
    row.rollouts = static_cast<int>(ms.size());
    std::vector<double> speeds, success, interp, contact, mpes, geos;
    double se2 = 0.0;
    for (const auto& m : ms) {
      speeds.insert(speeds.end(), m.sim_dist.speeds.begin(), m.sim_dist.speeds.end());
      success.push_back(m.success ? 1.0 : 0.0);
      interp.push_back(m.interpenetration.volume);
      se2 += m.interpenetration.standard_error * m.interpenetration.standard_error;
      contact.push_back(m.contact_ratio);
      mpes.push_back(m.mpe);
      geos.push_back(m.geodesic);
    }
    row.simdist_mean = detail::finite_mean(speeds);
    double sq = 0.0;
    for (double v : speeds) sq += (v - row.simdist_mean) * (v - row.simdist_mean);
    row.simdist_std = speeds.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(speeds.size()));
    row.success = detail::finite_mean(success);
    row.interpenetration = detail::finite_mean(interp);
    row.interpenetration_se = std::sqrt(se2) / static_cast<double>(ms.size());
    row.contact_ratio = detail::finite_mean(contact);
    row.mpe = detail::finite_mean(mpes);
    row.geodesic = detail::finite_mean(geos);
    rep.rows.push_back(row);
  }
  auto column_mean = [&](double ReportRow::*field) {
    std::vector<double> v;
    for (const auto& r : rep.rows) v.push_back(r.*field);
    return detail::finite_mean(v);
  };
  ReportRow& a = rep.average;
  a.object = "average";
  a.simdist_mean = column_mean(&ReportRow::simdist_mean);
  a.simdist_std = column_mean(&ReportRow::simdist_std);
  a.success = column_mean(&ReportRow::success);
  a.interpenetration = column_mean(&ReportRow::interpenetration);
  a.interpenetration_se = column_mean(&ReportRow::interpenetration_se);
  a.contact_ratio = column_mean(&ReportRow::contact_ratio);
  a.mpe = column_mean(&ReportRow::mpe);
  a.geodesic = column_mean(&ReportRow::geodesic);
  for (const auto& r : rep.rows) a.rollouts += r.rollouts;
  return rep;
}

// ---------------------------------------------------------------------------
// Report files

inline constexpr const char* kReportColumns = "object,simdist_mean,simdist_std,success,interpenetration";
inline constexpr const char* kExtraColumns =
    "object,contact_ratio,mpe,geodesic,interpenetration_se,rollouts";

/// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::invalid_argument(where + ": not a number: '" + s + "'");
  return v;
}

namespace detail {

inline std::string comment_header(const nlohmann::json& config, const std::string& version) {
  return "# version: " + version + "\n# config: " + config.dump() + "\n";
}

inline std::vector<ReportRow> all_rows(const MetricsReport& rep) {
  std::vector<ReportRow> rows = rep.rows;
  rows.push_back(rep.average);
  return rows;
}

}  // namespace detail

/// Main report: the appendix-table columns, one row per object plus the
/// average row.
inline std::string report_csv(const MetricsReport& rep, const nlohmann::json& config, const std::string& version) {
  std::string out = detail::comment_header(config, version) + kReportColumns + "\n";
  for (const auto& r : detail::all_rows(rep))
    out += r.object + "," + format_number(r.simdist_mean) + "," + format_number(r.simdist_std) + "," +
           format_number(r.success) + "," + format_number(r.interpenetration) + "\n";
  return out;
}

inline std::string extra_metrics_csv(const MetricsReport& rep, const nlohmann::json& config,
                                     const std::string& version) {
  std::string out = detail::comment_header(config, version) + kExtraColumns + "\n";
  for (const auto& r : detail::all_rows(rep))
    out += r.object + "," + format_number(r.contact_ratio) + "," + format_number(r.mpe) + "," +
           format_number(r.geodesic) + "," + format_number(r.interpenetration_se) + "," + std::to_string(r.rollouts) +
           "\n";
  return out;
}

/// Fixed-width table of every metric.
inline std::string report_table(const MetricsReport& rep) {
  const std::vector<std::string> head = {"object",      "simdist_mean", "simdist_std", "success",
                                         "interp_cm3", "interp_se",    "contact",     "mpe_mm",
                                         "geodesic"};
  std::vector<std::vector<std::string>> cells;
  auto fixed = [](double v, int prec) {
    if (std::isnan(v)) return std::string("-");
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  for (const auto& r : detail::all_rows(rep))
    cells.push_back({r.object, fixed(r.simdist_mean, 2), fixed(r.simdist_std, 2), fixed(r.success, 2),
                     fixed(r.interpenetration, 3), fixed(r.interpenetration_se, 3), fixed(r.contact_ratio, 2),
                     fixed(r.mpe, 2), fixed(r.geodesic, 3)});
  std::vector<size_t> width(head.size());
  for (size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& row) {
    std::string s;
    for (size_t c = 0; c < row.size(); ++c) {
      if (c == 0)
        s += row[c] + std::string(width[c] - row[c].size(), ' ');
      else
        s += "  " + std::string(width[c] - row[c].size(), ' ') + row[c];
    }
    return s + "\n";
  };
  std::string out = line(head);
  size_t total = 0;
  for (size_t w : width) total += w;
  out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i + 1 == cells.size()) out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    out += line(cells[i]);
  }
  return out;
}

/// Reads a main report CSV. Comment lines start with '#'. The last row must
/// be the average row.
inline MetricsReport read_report_csv(std::istream& in) {
  MetricsReport rep;
  std::string line;
  bool header = false;
  std::vector<ReportRow> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kReportColumns) throw std::invalid_argument("report: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = "report line " + std::to_string(line_no);
    if (f.size() != 5) throw std::invalid_argument(where + ": expected 5 fields");
    ReportRow r;
    r.object = f[0];
    r.simdist_mean = parse_number(f[1], where);
    r.simdist_std = parse_number(f[2], where);
    r.success = parse_number(f[3], where);
    r.interpenetration = parse_number(f[4], where);
    rows.push_back(r);
  }
  if (!header) throw std::invalid_argument("report: missing header");
  if (rows.empty() || rows.back().object != "average") throw std::invalid_argument("report: missing average row");
  rep.average = rows.back();
  rows.pop_back();
  rep.rows = rows;
  return rep;
}

inline MetricsReport read_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report '" + path + "'");
  return read_report_csv(in);
}

}  // namespace dgrasp
