#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "dgrasp/features.hpp"
#include "dgrasp/hand_model.hpp"

namespace dgrasp {

struct RewardWeights {
  double w_x = -2.0;
  double w_q = -0.1;
  double w_c = 1.0;
  double w_reg_h = 0.5;
  double w_reg_o = 1.0;
  double w_x_j = 1.0;
  double w_x_tip = 4.0;
  double lambda = 5.0;  // contact force saturation rate, 1/N
  double alpha_x = -2.0;
  double alpha_q = -0.25;
};

inline nlohmann::json to_json_value(const RewardWeights& w) {
  return {{"w_x", w.w_x},         {"w_q", w.w_q},         {"w_c", w.w_c},     {"w_reg_h", w.w_reg_h},
          {"w_reg_o", w.w_reg_o}, {"w_x_j", w.w_x_j},     {"w_x_tip", w.w_x_tip}, {"lambda", w.lambda},
          {"alpha_x", w.alpha_x}, {"alpha_q", w.alpha_q}};
}

inline RewardWeights reward_weights_from_json(const nlohmann::json& j, RewardWeights w = {}) {
  const std::pair<const char*, double*> fields[] = {
      {"w_x", &w.w_x},         {"w_q", &w.w_q},         {"w_c", &w.w_c},         {"w_reg_h", &w.w_reg_h},
      {"w_reg_o", &w.w_reg_o}, {"w_x_j", &w.w_x_j},     {"w_x_tip", &w.w_x_tip}, {"lambda", &w.lambda},
      {"alpha_x", &w.alpha_x}, {"alpha_q", &w.alpha_q}};
  if (!j.is_object()) throw std::invalid_argument("rewards: expected an object");
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const auto& [name, ptr] : fields) {
      if (key != name) continue;
      if (!value.is_number()) throw std::invalid_argument("rewards." + key + ": expected a number");
      *ptr = value.get<double>();
      found = true;
    }
    if (!found) throw std::invalid_argument("rewards." + key + ": unknown key");
  }
  return w;
}

struct GraspRewardTerms {
  double position = 0.0;  // r_x
  double rotation = 0.0;  // r_q
  double contact = 0.0;   // r_c in [0, 1]
  double regularizer = 0.0;  // r_reg, already weighted
  double total = 0.0;
};

/// r = w_x r_x + w_q r_q + w_c r_c + r_reg
///   r_x   = sum_j c_j |g̃_x,j|, c_j = w_x_tip on fingertips else w_x_j
///   r_q   = mean |g̃_q| component
///   r_c   = mean over desired contacts of (1 - exp(-lambda f_j)), 0 if none
///   r_reg = -(w_reg_h |action rate|^2 + w_reg_o m_o |v_o|^2)
inline GraspRewardTerms grasp_reward_terms(const HandModel& model, const GraspObservation& obs,
                                           const Eigen::VectorXd& action_rate, double object_mass,
                                           const RewardWeights& w) {
  GraspRewardTerms t;
  for (int l = 0; l < static_cast<int>(obs.goals.positions.size()); ++l)
    t.position += (model.is_fingertip(l) ? w.w_x_tip : w.w_x_j) * obs.goals.positions[l].norm();

  const auto nj = obs.goals.joint_angles.size();
  double abs_sum = obs.goals.joint_angles.cwiseAbs().sum() + obs.goals.wrist_rotation.cwiseAbs().sum();
  t.rotation = abs_sum / static_cast<double>(nj + 3);

  const auto links = obs.link_force.size();
  int desired = 0;
  double sat = 0.0;
  for (Eigen::Index l = 0; l < links; ++l) {
    if (obs.goals.contacts[l] > 0.5) {
      ++desired;
      sat += 1.0 - std::exp(-w.lambda * std::max(0.0, obs.link_force[l]));
    }
  }
  t.contact = desired > 0 ? sat / desired : 0.0;

  t.regularizer =
      -(w.w_reg_h * action_rate.squaredNorm() + w.w_reg_o * object_mass * obs.object_twist.linear.squaredNorm());
  t.total = w.w_x * t.position + w.w_q * t.rotation + w.w_c * t.contact + t.regularizer;
  return t;
}

inline double grasp_reward(const HandModel& model, const GraspObservation& obs, const Eigen::VectorXd& action_rate,
                           double object_mass, const RewardWeights& w) {
  return grasp_reward_terms(model, obs, action_rate, object_mass, w).total;
}

/// r_m = alpha_x |g_o,x| + alpha_q e_geo
inline double motion_reward(const MotionObservation& obs, const RewardWeights& w) {
  return w.alpha_x * obs.position_gap.norm() + w.alpha_q * obs.rotation_gap.norm();
}

inline double flat_reward(const HandModel& model, const GraspObservation& grasp_obs, const MotionObservation& motion_obs,
                          const Eigen::VectorXd& action_rate, double object_mass, const RewardWeights& w) {
  return grasp_reward(model, grasp_obs, action_rate, object_mass, w) + motion_reward(motion_obs, w);
}

}  // namespace dgrasp
