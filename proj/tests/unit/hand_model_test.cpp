#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "dgrasp/hand_model.hpp"
#include "test_util.hpp"

using namespace dgrasp;
using namespace dgrasp::testing;

namespace {

Eigen::Matrix4d homogeneous(const Pose6D& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation_matrix();
  m.topRightCorner<3, 1>() = p.position;
  return m;
}

Eigen::Matrix4d revolute(const Vec3& axis, double angle) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  return m;
}

// Chain multiplication with 4x4 matrices, independent of Pose6D composition.
std::vector<Vec3> matrix_fk(const HandModel& m, const Pose6D& wrist, const Eigen::VectorXd& q) {
  std::vector<Eigen::Matrix4d> t;
  std::vector<Vec3> out;
  for (const auto& link : m.links) {
    Eigen::Matrix4d parent = link.parent < 0 ? homogeneous(wrist) : t[link.parent];
    Eigen::Matrix4d x = parent * homogeneous(link.offset);
    if (link.axis) x = x * revolute(*link.axis, q[link.joint]);
    t.push_back(x);
    out.push_back(x.topRightCorner<3, 1>());
  }
  return out;
}

Eigen::VectorXd random_q(const HandModel& m, std::mt19937_64& rng) {
  Eigen::VectorXd q(m.joint_count());
  for (int j = 0; j < q.size(); ++j) q[j] = std::uniform_real_distribution<double>(m.limits[j].lo, m.limits[j].hi)(rng);
  return q;
}

}  // namespace

TEST(HandModel, DefaultDeskHandShape) {
  const HandModel m = default_desk_hand();
  EXPECT_EQ(m.joint_count(), 6);
  EXPECT_EQ(m.fingertips.size(), 3u);
  for (const auto& lim : m.limits) EXPECT_LT(lim.lo, lim.hi);
}

TEST(HandModel, LimitsIncludeTenPercentSlack) {
  const HandModel m = default_desk_hand();
  EXPECT_NEAR(m.limits[0].lo, -0.16, 1e-12);
  EXPECT_NEAR(m.limits[0].hi, 1.76, 1e-12);
}

TEST(HandModel, ReferenceConfigurationIsCumulativeOffsets) {
  const HandModel m = default_desk_hand();
  const HandKinematics fk = forward_kinematics(m, Pose6D::identity(), Eigen::VectorXd::Zero(6));
  for (int l = 0; l < m.link_count(); ++l) {
    Pose6D acc;
    std::vector<int> chain;
    for (int i = l; i >= 0; i = m.links[i].parent) chain.insert(chain.begin(), i);
    for (int i : chain) acc = compose(acc, m.links[i].offset);
    EXPECT_LT((fk.joint_positions[l] - acc.position).norm(), 1e-12) << "link " << l;
  }
}

TEST(HandModel, SingleJointQuarterTurn) {
  HandModel m;
  HandLink root;
  root.name = "root";
  m.links.push_back(root);
  HandLink a;
  a.name = "a";
  a.parent = 0;
  a.axis = Vec3::UnitZ();
  m.links.push_back(a);
  HandLink b;
  b.name = "b";
  b.parent = 1;
  b.axis = Vec3::UnitZ();
  b.offset = Pose6D::translation(1, 0, 0);
  m.links.push_back(b);
  m.limits = {{-3, 3}, {-3, 3}};
  m.gains = {{1, 0}, {1, 0}};
  m.bias = {0, 0};
  m.finalize();
  Eigen::VectorXd q(2);
  q << std::numbers::pi / 2, 0.0;
  const HandKinematics fk = forward_kinematics(m, Pose6D::identity(), q);
  EXPECT_LT((fk.joint_positions[2] - Vec3(0, 1, 0)).norm(), 1e-12);
}

TEST(HandModel, MatchesHomogeneousMatrixOracle) {
  const HandModel m = default_desk_hand();
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Pose6D wrist = random_pose(rng);
    const Eigen::VectorXd q = random_q(m, rng);
    const HandKinematics fk = forward_kinematics(m, wrist, q);
    const auto oracle = matrix_fk(m, wrist, q);
    for (int l = 0; l < m.link_count(); ++l) EXPECT_LT((fk.joint_positions[l] - oracle[l]).norm(), 1e-10);
  }
}

TEST(HandModel, FkIsEquivariant) {
  const HandModel m = default_desk_hand();
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const Pose6D g = random_pose(rng), w = random_pose(rng);
    const Eigen::VectorXd q = random_q(m, rng);
    const HandKinematics a = forward_kinematics(m, compose(g, w), q);
    const HandKinematics b = forward_kinematics(m, w, q);
    for (int l = 0; l < m.link_count(); ++l) EXPECT_LT((a.joint_positions[l] - g.apply(b.joint_positions[l])).norm(), 1e-10);
  }
}

TEST(HandModel, FkIsLipschitzInEachJoint) {
  const HandModel m = default_desk_hand();
  const double lip = m.chain_length();
  std::mt19937_64 rng(13);
  for (int i = 0; i < 100; ++i) {
    const Eigen::VectorXd q = random_q(m, rng);
    const int j = static_cast<int>(rng() % m.joint_count());
    const double delta = 0.05;
    Eigen::VectorXd q2 = q;
    q2[j] += delta;
    const auto a = forward_kinematics(m, Pose6D::identity(), q);
    const auto b = forward_kinematics(m, Pose6D::identity(), q2);
    for (int l = 0; l < m.link_count(); ++l) {
      EXPECT_LE((a.joint_positions[l] - b.joint_positions[l]).norm(), lip * delta);
      EXPECT_LE((a.collider_center(m, l) - b.collider_center(m, l)).norm(), lip * delta);
    }
  }
}

TEST(HandModel, ClampToLimits) {
  const HandModel m = default_desk_hand();
  Eigen::VectorXd q = Eigen::VectorXd::Constant(6, 0.5);
  EXPECT_EQ(clamp_to_limits(m, q), q);
  q[1] = m.limits[1].hi + 0.2;
  q[2] = m.limits[2].lo - 0.1;
  const Eigen::VectorXd c = clamp_to_limits(m, q);
  EXPECT_EQ(c[1], m.limits[1].hi);
  EXPECT_EQ(c[2], m.limits[2].lo);
}

TEST(HandModel, WrongJointCountThrows) {
  const HandModel m = default_desk_hand();
  EXPECT_THROW(forward_kinematics(m, Pose6D::identity(), Eigen::VectorXd::Zero(5)), std::invalid_argument);
}

TEST(HandModel, JsonRoundTrip) {
  const HandModel m = default_desk_hand();
  const HandModel back = hand_model_from_json(hand_model_to_json(m));
  ASSERT_EQ(back.link_count(), m.link_count());
  for (int j = 0; j < m.joint_count(); ++j) {
    EXPECT_NEAR(back.limits[j].lo, m.limits[j].lo, 1e-12);
    EXPECT_NEAR(back.limits[j].hi, m.limits[j].hi, 1e-12);
  }
  std::mt19937_64 rng(14);
  const Eigen::VectorXd q = random_q(m, rng);
  const auto a = forward_kinematics(m, Pose6D::identity(), q);
  const auto b = forward_kinematics(back, Pose6D::identity(), q);
  for (int l = 0; l < m.link_count(); ++l) EXPECT_LT((a.joint_positions[l] - b.joint_positions[l]).norm(), 1e-12);
}

TEST(HandModel, FinalizeRejectsBadModels) {
  HandModel m = default_desk_hand();
  m.limits[0] = {1.0, 0.5};
  EXPECT_THROW(m.finalize(), std::invalid_argument);
  HandModel n = default_desk_hand();
  n.links[1].parent = 5;
  EXPECT_THROW(n.finalize(), std::invalid_argument);
}
