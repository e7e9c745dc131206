#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgrasp/control.hpp"
#include "dgrasp/grasp_label.hpp"
#include "dgrasp/hand_model.hpp"
#include "dgrasp/json_util.hpp"
#include "dgrasp/metrics.hpp"
#include "dgrasp/ppo.hpp"
#include "dgrasp/sim.hpp"

namespace dgrasp {

// ---------------------------------------------------------------------------
// Run configuration

enum class EvalMode { Grasp, Motion };

inline std::string to_string(EvalMode m) { return m == EvalMode::Grasp ? "grasp" : "motion"; }

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "grasp") return EvalMode::Grasp;
  if (s == "motion") return EvalMode::Motion;
  throw std::invalid_argument("eval.mode: unknown value '" + s + "' (expected grasp or motion)");
}

struct EvalConfig {
  EvalMode mode = EvalMode::Grasp;
  int goals_per_label = 1;     // motion mode
  double label_noise = 0.0;    // m, label corruption before evaluation
  int interpenetration_samples = kInterpenetrationSamples;
  bool weld_object = false;    // debug: baselines hold the object rigidly

  void validate() const {
    if (goals_per_label < 1) throw std::invalid_argument("eval.goals_per_label must be >= 1");
    if (label_noise < 0.0) throw std::invalid_argument("eval.label_noise must be >= 0");
    if (interpenetration_samples < 1) throw std::invalid_argument("eval.interpenetration_samples must be >= 1");
  }
};

/// Paths are resolved against the directory of the config file. Empty hand
/// and scene paths select the built-in desk hand and scene.
struct RunConfig {
  std::string hand_path;
  std::string scene_path;
  std::string labels_path;
  std::string output_dir = "out";
  // checkpoints may contain "{object}", replaced by the object id in per-object mode
  std::string grasp_checkpoint;
  std::string motion_checkpoint;
  std::string flat_checkpoint;
  std::uint64_t seed = 1;
  ControllerKind controller = ControllerKind::OursPdMotion;
  bool per_object = false;
  PpoConfig ppo;
  TaskConfig task;
  EvalConfig eval;

  void validate() const {
    ppo.validate();
    task.validate();
    eval.validate();
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"paths",
           {{"hand", c.hand_path}, {"scene", c.scene_path}, {"labels", c.labels_path},
            {"output_dir", c.output_dir},
            {"grasp_checkpoint", c.grasp_checkpoint},
            {"motion_checkpoint", c.motion_checkpoint},
            {"flat_checkpoint", c.flat_checkpoint}}},
          {"seed", c.seed},
          {"controller", to_string(c.controller)},
          {"per_object", c.per_object},
          {"ppo", to_json_value(c.ppo)},
          {"rewards", to_json_value(c.task.rewards)},
          {"task", task_config_to_json(c.task)},
          {"goals", goal_sampler_to_json(c.task.goals)},
          {"eval",
           {{"mode", to_string(c.eval.mode)},
            {"goals_per_label", c.eval.goals_per_label},
            {"label_noise", c.eval.label_noise},
            {"interpenetration_samples", c.eval.interpenetration_samples},
            {"weld_object", c.eval.weld_object}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw std::invalid_argument("config: expected an object");
  detail::reject_unknown_keys(j, {"paths", "seed", "controller", "per_object", "ppo", "rewards", "task", "goals", "eval"},
                              "config");
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (base_dir / p).lexically_normal().string();
  };
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::reject_unknown_keys(
        p, {"hand", "scene", "labels", "output_dir", "grasp_checkpoint", "motion_checkpoint", "flat_checkpoint"}, "paths");
    detail::read_field(p, "hand", c.hand_path, "paths");
    detail::read_field(p, "scene", c.scene_path, "paths");
    detail::read_field(p, "labels", c.labels_path, "paths");
    detail::read_field(p, "output_dir", c.output_dir, "paths");
    detail::read_field(p, "grasp_checkpoint", c.grasp_checkpoint, "paths");
    detail::read_field(p, "motion_checkpoint", c.motion_checkpoint, "paths");
    detail::read_field(p, "flat_checkpoint", c.flat_checkpoint, "paths");
    c.hand_path = resolve(c.hand_path);
    c.scene_path = resolve(c.scene_path);
    c.labels_path = resolve(c.labels_path);
    c.output_dir = resolve(c.output_dir);
    c.grasp_checkpoint = resolve(c.grasp_checkpoint);
    c.motion_checkpoint = resolve(c.motion_checkpoint);
    c.flat_checkpoint = resolve(c.flat_checkpoint);
  }
  detail::read_field(j, "seed", c.seed, "config");
  if (j.contains("controller")) {
    if (!j["controller"].is_string()) throw std::invalid_argument("config.controller: wrong type");
    c.controller = controller_from_string(j["controller"].get<std::string>());
  }
  detail::read_field(j, "per_object", c.per_object, "config");
  if (j.contains("ppo")) c.ppo = ppo_config_from_json(j["ppo"], c.ppo);
  if (j.contains("rewards")) c.task.rewards = reward_weights_from_json(j["rewards"], c.task.rewards);
  if (j.contains("task")) {
    const RewardWeights w = c.task.rewards;
    c.task = task_config_from_json(j["task"], c.task);
    c.task.rewards = w;
  }
  if (j.contains("goals")) c.task.goals = goal_sampler_from_json(j["goals"]);
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    detail::reject_unknown_keys(e, {"mode", "goals_per_label", "label_noise", "interpenetration_samples", "weld_object"},
                                "eval");
    std::string mode = to_string(c.eval.mode);
    detail::read_field(e, "mode", mode, "eval");
    c.eval.mode = eval_mode_from_string(mode);
    detail::read_field(e, "goals_per_label", c.eval.goals_per_label, "eval");
    detail::read_field(e, "label_noise", c.eval.label_noise, "eval");
    detail::read_field(e, "interpenetration_samples", c.eval.interpenetration_samples, "eval");
    detail::read_field(e, "weld_object", c.eval.weld_object, "eval");
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j, std::filesystem::path(path).parent_path());
}

/// Checkpoint path for an object; "{object}" is replaced by its id.
inline std::string checkpoint_for(const std::string& pattern, const std::string& object_id) {
  std::string out = pattern;
  const std::string key = "{object}";
  for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + object_id.size()))
    out.replace(pos, key.size(), object_id);
  return out;
}

inline HandModel resolve_hand(const RunConfig& c) {
  return c.hand_path.empty() ? default_desk_hand() : load_hand_model(c.hand_path);
}

inline SceneConfig resolve_scene(const RunConfig& c) {
  return c.scene_path.empty() ? default_scene() : load_scene(c.scene_path);
}

// ---------------------------------------------------------------------------
// Rollout logs

/// First line: header with rollout metadata and `meta`; then one line per
/// control step.
inline void write_rollout_jsonl(std::ostream& out, const RolloutRecord& r, const nlohmann::json& meta) {
  nlohmann::json head{{"header", true},
                      {"object_id", r.object_id},
                      {"label_index", r.label_index},
                      {"controller", r.controller},
                      {"control_dt", r.control_dt},
                      {"goal", r.goal ? pose_to_json(*r.goal) : nlohmann::json(nullptr)},
                      {"meta", meta}};
  out << head.dump() << "\n";
  for (const auto& s : r.steps) out << rollout_step_to_json(s).dump() << "\n";
}

inline std::string rollout_jsonl(const RolloutRecord& r, const nlohmann::json& meta) {
  std::ostringstream s;
  write_rollout_jsonl(s, r, meta);
  return s.str();
}

/// Parses a rollout log; the header's meta object is stored in `meta` when given.
inline RolloutRecord read_rollout_jsonl(std::istream& in, int links, nlohmann::json* meta = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("rollout: empty log");
  const auto head = nlohmann::json::parse(line);
  if (!head.is_object() || !head.value("header", false)) throw std::invalid_argument("rollout: missing header line");
  if (meta) *meta = head.value("meta", nlohmann::json::object());
  RolloutRecord r;
  r.object_id = head.at("object_id").get<std::string>();
  r.label_index = head.at("label_index").get<int>();
  r.controller = head.at("controller").get<std::string>();
  r.control_dt = head.at("control_dt").get<double>();
  if (!head.at("goal").is_null()) r.goal = pose_from_json(head.at("goal"), "goal");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    r.steps.push_back(rollout_step_from_json(nlohmann::json::parse(line), links));
  }
  return r;
}

inline RolloutRecord read_rollout_jsonl(const std::string& path, int links, nlohmann::json* meta = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open rollout '" + path + "'");
  return read_rollout_jsonl(in, links, meta);
}

// ---------------------------------------------------------------------------
// Training

/// Label subsets keyed by object id, in label order.
inline std::map<std::string, std::vector<GraspLabel>> labels_by_object(const std::vector<GraspLabel>& labels) {
  std::map<std::string, std::vector<GraspLabel>> out;
  for (const auto& l : labels) out[l.object_id].push_back(l);
  return out;
}

/// One worker per grasp label.
inline TrainResult train_grasp_policy(const HandModel& model, const SceneConfig& scene,
                                      const std::vector<GraspLabel>& labels, const RunConfig& cfg,
                                      const EpochCallback& on_epoch = {}) {
  if (labels.empty()) throw std::invalid_argument("train: no labels");
  return train([&](int w) { return std::make_unique<GraspEnv>(model, scene, labels[w], cfg.task); },
               static_cast<int>(labels.size()), cfg.ppo, cfg.seed, on_epoch);
}

/// Motion policy over a frozen grasp policy, one worker per label.
inline TrainResult train_motion_policy(const HandModel& model, const SceneConfig& scene,
                                       const std::vector<GraspLabel>& labels, const ActorCritic& policy_g,
                                       const RunConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (labels.empty()) throw std::invalid_argument("train: no labels");
  return train([&](int w) { return std::make_unique<MotionEnv>(model, scene, labels[w], cfg.task, policy_g); },
               static_cast<int>(labels.size()), cfg.ppo, cfg.seed, on_epoch);
}

inline TrainResult train_flat_policy(const HandModel& model, const SceneConfig& scene,
                                     const std::vector<GraspLabel>& labels, const RunConfig& cfg,
                                     const EpochCallback& on_epoch = {}) {
  if (labels.empty()) throw std::invalid_argument("train: no labels");
  return train([&](int w) { return std::make_unique<FlatEnv>(model, scene, labels[w], cfg.task); },
               static_cast<int>(labels.size()), cfg.ppo, cfg.seed, on_epoch);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Policies {
  const ActorCritic* grasp = nullptr;   // ours-*
  const ActorCritic* motion = nullptr;  // ours-learned
  const ActorCritic* flat = nullptr;    // flat-rl
};

struct EvaluatedRollout {
  GraspLabel label;  // label the controller was given
  RolloutRecord rollout;
  RolloutMetrics metrics;
};

/// Goal for the k-th motion episode of a label.
inline Pose6D eval_goal(const RunConfig& cfg, const GraspLabel& label, int label_index, int k) {
  std::mt19937_64 rng(mix_seed(cfg.seed, 1000 + label_index, k));
  return cfg.task.goals.sample(label.object_pose, rng);
}

/// One episode of the configured controller. With a goal, the hierarchical
/// and flat controllers move the object; baselines always hold.
inline RolloutRecord run_episode(const HandModel& model, const SceneConfig& scene, const GraspLabel& label,
                                 const std::optional<Pose6D>& goal,
                                 const RunConfig& cfg, const Policies& policies) {
  auto need = [&](const ActorCritic* p, const char* what) -> const ActorCritic& {
    if (!p)
      throw std::invalid_argument(std::string("controller '") + to_string(cfg.controller) + "' needs a " + what);
    return *p;
  };
  BaselineOptions base;
  base.hold_steps = cfg.task.hold_steps;
  base.weld_object = cfg.eval.weld_object;
  switch (cfg.controller) {
    case ControllerKind::OursPdMotion:
    case ControllerKind::OursLearnedMotion: {
      EpisodePlan plan;
      plan.grasp_steps = cfg.task.grasp_steps;
      plan.total_steps = cfg.task.total_steps;
      plan.hold_steps = cfg.task.hold_steps;
      plan.goal = goal;
      MotionModule mm;
      mm.beta = cfg.task.motion_beta;
      mm.scale = cfg.task.action;
      if (cfg.controller == ControllerKind::OursLearnedMotion) mm.policy = &need(policies.motion, "motion policy");
      return run_hierarchical(model, scene, need(policies.grasp, "grasp policy"), mm, label, plan, cfg.task);
    }
    case ControllerKind::BaselinePd: return baseline_pd(model, scene, label, base);
    case ControllerKind::BaselineIk: return baseline_ik(model, scene, label, base);
    case ControllerKind::FlatRl: {
      const Pose6D g = goal ? *goal : label.object_pose;
      return run_flat(model, scene, need(policies.flat, "flat policy"), label, g, cfg.task);
    }
  }
  throw std::logic_error("unhandled controller");
}

/// Label handed to the controller: the stored label, corrupted when
/// eval.label_noise is set.
inline GraspLabel eval_label(const HandModel& model, const GraspLabel& label, int label_index,
                             const SurfacePointSet& points, const RunConfig& cfg) {
  if (cfg.eval.label_noise <= 0.0) return label;
  std::mt19937_64 rng(mix_seed(cfg.seed, 2000 + label_index, 0));
  return corrupt_label(model, label, cfg.eval.label_noise, rng, points);
}

/// Runs every label through the configured controller. Grasp mode holds the
/// object after the grasp phase; motion mode moves it to sampled goals.
using PolicyLookup = std::function<Policies(const std::string& object_id)>;

inline std::vector<EvaluatedRollout> evaluate_labels(const HandModel& model, const SceneConfig& scene,
                                                     const std::vector<GraspLabel>& labels, const RunConfig& cfg,
                                                     const PolicyLookup& policies) {
  cfg.validate();
  std::vector<EvaluatedRollout> out;
  const bool motion = cfg.eval.mode == EvalMode::Motion;
  const int episodes = motion ? cfg.eval.goals_per_label : 1;
  const MetricOptions mopt{cfg.task.hold_steps, cfg.task.fall_threshold, cfg.eval.interpenetration_samples, cfg.seed};
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const ObjectSpec& spec = scene.object(labels[i].object_id);
    const SurfacePointSet points = sample_surface(spec.shape);
    const GraspLabel label = eval_label(model, labels[i], i, points, cfg);
    for (int k = 0; k < episodes; ++k) {
      std::optional<Pose6D> goal;
      if (motion) goal = eval_goal(cfg, labels[i], i, k);
      RolloutRecord rec = run_episode(model, scene, label, goal, cfg, policies(label.object_id));
      rec.label_index = i;
      EvaluatedRollout e{label, std::move(rec), {}};
      e.metrics = evaluate_rollout(model, spec.shape, e.rollout, e.label, mopt);
      out.push_back(std::move(e));
    }
  }
  return out;
}

inline std::vector<EvaluatedRollout> evaluate_labels(const HandModel& model, const SceneConfig& scene,
                                                     const std::vector<GraspLabel>& labels, const RunConfig& cfg,
                                                     const Policies& policies) {
  return evaluate_labels(model, scene, labels, cfg, [&](const std::string&) { return policies; });
}

inline MetricsReport report_from(const std::vector<EvaluatedRollout>& rollouts) {
  std::map<std::string, std::vector<RolloutMetrics>> by_object;
  for (const auto& r : rollouts) by_object[r.rollout.object_id].push_back(r.metrics);
  return build_report(by_object);
}

}  // namespace dgrasp
