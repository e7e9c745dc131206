#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "dgrasp/grasp_label.hpp"
#include "dgrasp/label_generation.hpp"
#include "test_util.hpp"

using namespace dgrasp;
using namespace dgrasp::testing;

namespace {

const HandModel& hand() {
  static const HandModel m = default_desk_hand();
  return m;
}

// One palm sphere of radius 0.01 and no joints.
HandModel single_sphere_hand() {
  HandModel m;
  HandLink root;
  root.name = "tip";
  root.collider = {0.01, Vec3::Zero()};
  m.links.push_back(root);
  m.fingertips = {0};
  m.finalize();
  return m;
}

GraspLabel label_at(const Pose6D& hand_pose, const Eigen::VectorXd& q) {
  GraspLabel l;
  l.object_id = "obj";
  l.hand_pose = hand_pose;
  l.q = q;
  return l;
}

Eigen::VectorXi brute_force_contacts(const HandModel& m, const GraspLabel& label, const SurfacePointSet& pts,
                                     double eps) {
  const HandKinematics fk = forward_kinematics(m, relative_to(label.hand_pose, label.object_pose), label.q);
  Eigen::VectorXi out = Eigen::VectorXi::Zero(m.link_count());
  for (int l = 0; l < m.link_count(); ++l)
    for (const Vec3& v : link_surface_points(m, fk, l))
      for (const Vec3& o : pts.points)
        if ((v - o).norm() < eps) out[l] = 1;
  return out;
}

GraspLabel random_label(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GraspLabel l;
  l.object_id = "sphere40";
  l.object_pose = random_pose(rng, 0.5);
  const Vec3 offset = random_vec(rng).normalized() * (0.03 + 0.06 * u(rng));
  l.hand_pose = compose(l.object_pose, Pose6D(offset, random_quat(rng)));
  l.q.resize(hand().joint_count());
  for (int j = 0; j < l.q.size(); ++j) l.q[j] = hand().limits[j].lo + u(rng) * (hand().limits[j].hi - hand().limits[j].lo);
  return l;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dgrasp_" + name)).string();
}

}  // namespace

TEST(TargetContacts, ThresholdOnSurfaceDistance) {
  const HandModel m = single_sphere_hand();
  const SurfacePointSet pts{{Vec3::Zero()}};
  // collider surface 10 mm from the object point
  const GraspLabel near = label_at(Pose6D::translation(0.02, 0, 0), Eigen::VectorXd());
  EXPECT_EQ(derive_target_contacts(m, near, pts, 0.015)[0], 1);
  const GraspLabel far = label_at(Pose6D::translation(0.03, 0, 0), Eigen::VectorXd());
  EXPECT_EQ(derive_target_contacts(m, far, pts, 0.015)[0], 0);
}

TEST(TargetContacts, MatchesAllPairsOracle) {
  const SurfacePointSet pts = sample_surface(ObjectShape::sphere(0.04));
  std::mt19937_64 rng(21);
  int ones = 0;
  for (int i = 0; i < 100; ++i) {
    const GraspLabel l = random_label(rng);
    const Eigen::VectorXi flags = derive_target_contacts(hand(), l, pts, 0.015);
    EXPECT_EQ(flags, brute_force_contacts(hand(), l, pts, 0.015)) << "label " << i;
    ones += flags.sum();
  }
  EXPECT_GT(ones, 0);
}

TEST(TargetContacts, MonotoneInThreshold) {
  const SurfacePointSet pts = sample_surface(ObjectShape::sphere(0.04));
  std::mt19937_64 rng(22);
  for (int i = 0; i < 30; ++i) {
    const GraspLabel l = random_label(rng);
    Eigen::VectorXi prev = derive_target_contacts(hand(), l, pts, 0.002);
    for (double eps : {0.005, 0.01, 0.015, 0.03}) {
      const Eigen::VectorXi cur = derive_target_contacts(hand(), l, pts, eps);
      EXPECT_TRUE((cur.array() >= prev.array()).all());
      prev = cur;
    }
  }
}

TEST(TargetContacts, InvariantUnderJointRigidTransform) {
  const SurfacePointSet pts = sample_surface(ObjectShape::sphere(0.04));
  std::mt19937_64 rng(23);
  for (int i = 0; i < 30; ++i) {
    GraspLabel l = random_label(rng);
    const Eigen::VectorXi a = derive_target_contacts(hand(), l, pts);
    const Pose6D g = random_pose(rng, 2.0);
    l.object_pose = compose(g, l.object_pose);
    l.hand_pose = compose(g, l.hand_pose);
    EXPECT_EQ(derive_target_contacts(hand(), l, pts), a);
  }
}

TEST(ContactGoal, Layout) {
  Eigen::VectorXi c(3);
  c << 1, 0, 1;
  Eigen::VectorXd expect(6);
  expect << 1, 0, 1, 1, 0, 1;
  EXPECT_EQ(contact_goal_vector(c), expect);
  EXPECT_EQ(contact_goal_vector(Eigen::VectorXi::Zero(4)), Eigen::VectorXd::Zero(8));
  EXPECT_EQ(contact_goal_vector(Eigen::VectorXi::Ones(4)), Eigen::VectorXd::Ones(8));
}

TEST(SurfaceSamples, SphereBoxAndCount) {
  const SurfacePointSet s = sample_surface(ObjectShape::sphere(1.0));
  EXPECT_EQ(s.points.size(), 512u);
  for (const Vec3& p : s.points) EXPECT_NEAR(p.norm(), 1.0, 1e-9);
  const Vec3 h(0.03, 0.05, 0.02);
  for (const Vec3& p : sample_surface(ObjectShape::box(h.x(), h.y(), h.z())).points) {
    bool on_face = false;
    for (int a = 0; a < 3; ++a) on_face |= std::abs(std::abs(p[a]) - h[a]) < 1e-12;
    EXPECT_TRUE(on_face);
    EXPECT_TRUE((p.cwiseAbs().array() <= h.array() + 1e-12).all());
  }
  for (const Vec3& p : sample_surface(ObjectShape::cylinder(0.02, 0.05)).points) {
    const double r = std::hypot(p.x(), p.y());
    EXPECT_TRUE(std::abs(r - 0.02) < 1e-12 || std::abs(std::abs(p.z()) - 0.05) < 1e-12);
  }
}

TEST(LabelFile, SaveLoadRoundTrip) {
  std::mt19937_64 rng(24);
  std::vector<GraspLabel> labels{random_label(rng), random_label(rng)};
  const std::string path = temp_path("labels_roundtrip.json");
  save_labels(path, labels, {{"note", "x"}});
  const auto back = load_labels(path);
  ASSERT_EQ(back.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].object_id, labels[i].object_id);
    EXPECT_TRUE(approx_equal(back[i].hand_pose, labels[i].hand_pose, 1e-15));
    EXPECT_TRUE(approx_equal(back[i].object_pose, labels[i].object_pose, 1e-15));
    EXPECT_EQ(back[i].q, labels[i].q);
  }
  std::remove(path.c_str());
}

TEST(LabelFile, MissingJointAnglesNamesTheField) {
  nlohmann::json j{{"labels",
                    {{{"object_id", "a"}, {"pose_object", {0, 0, 0, 1, 0, 0, 0}}, {"pose_hand", {0, 0, 0, 1, 0, 0, 0}}}}}};
  try {
    labels_from_json(j);
    FAIL() << "expected a schema error";
  } catch (const LabelSchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("q_h"), std::string::npos);
  }
}

TEST(LabelFile, NonUnitQuaternionRejected) {
  nlohmann::json j{{"labels",
                    {{{"object_id", "a"},
                      {"pose_object", {0, 0, 0, 0.9, 0, 0, 0}},
                      {"pose_hand", {0, 0, 0, 1, 0, 0, 0}},
                      {"q_hand", {0, 0, 0, 0, 0, 0}}}}}};
  EXPECT_THROW(labels_from_json(j), LabelSchemaError);
}

TEST(LabelFile, FinalizeChecksJointCountAndLimits) {
  const SurfacePointSet pts = sample_surface(ObjectShape::sphere(0.04));
  GraspLabel l = label_at(Pose6D::identity(), Eigen::VectorXd::Zero(5));
  EXPECT_THROW(finalize_label(hand(), l, pts), LabelSchemaError);
  l.q = Eigen::VectorXd::Constant(6, 5.0);
  EXPECT_THROW(finalize_label(hand(), l, pts), LabelSchemaError);
}

TEST(LabelGeneration, SphereLabelsHaveContacts) {
  const SceneConfig scene = default_scene();
  const auto labels = generate_labels(hand(), scene, "sphere40", 4, 7);
  ASSERT_EQ(labels.size(), 4u);
  const SurfacePointSet pts = sample_surface(ObjectShape::sphere(0.04));
  for (const auto& l : labels) {
    EXPECT_GE(derive_target_contacts(hand(), l, pts).sum(), 2);
    EXPECT_EQ(l.target_contacts, derive_target_contacts(hand(), l, pts));
  }
}

TEST(LabelGeneration, DeterministicAndEmpty) {
  const SceneConfig scene = default_scene();
  const auto a = generate_labels(hand(), scene, "sphere40", 2, 3);
  const auto b = generate_labels(hand(), scene, "sphere40", 2, 3);
  EXPECT_EQ(labels_to_json(a).dump(), labels_to_json(b).dump());
  const auto none = generate_labels(hand(), scene, "sphere40", 0, 3);
  EXPECT_TRUE(none.empty());
  EXPECT_EQ(labels_to_json(none)["labels"].size(), 0u);
}

TEST(LabelGeneration, BoxAndCylinderObjects) {
  SceneConfig scene = default_scene();
  scene.objects["box"] = ObjectSpec{ObjectShape::box(0.025, 0.025, 0.05), 0.2, 0.8};
  scene.objects["can"] = ObjectSpec{ObjectShape::cylinder(0.03, 0.04), 0.2, 0.8};
  for (const std::string id : {"box", "can"}) {
    const auto labels = generate_labels(hand(), scene, id, 2, 5);
    ASSERT_EQ(labels.size(), 2u);
    for (const auto& l : labels) EXPECT_GE(l.desired_contact_count(), 2);
  }
}

TEST(LabelGeneration, UngraspableObjectReportsFailure) {
  SceneConfig scene = default_scene();
  // too flat to wrap without the fingers hitting the support plane
  scene.objects["slab"] = ObjectSpec{ObjectShape::box(0.03, 0.03, 0.03), 0.2, 0.8};
  LabelGenOptions opt;
  opt.max_attempts = 3;
  try {
    generate_labels(hand(), scene, "slab", 1, 5, opt);
    FAIL() << "expected a generation failure";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("slab"), std::string::npos);
  }
}
