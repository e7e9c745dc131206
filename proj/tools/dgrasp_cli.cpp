#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dgrasp/label_generation.hpp"
#include "dgrasp/pipeline.hpp"
#include "dgrasp/version.hpp"

namespace fs = std::filesystem;
using namespace dgrasp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  bool quiet = false;
};

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_run_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  cfg.validate();
  return cfg;
}

nlohmann::json artifact_meta(const RunConfig& cfg) {
  return {{"version", version_string()}, {"config", run_config_to_json(cfg)}};
}

std::string config_line(const RunConfig& cfg) { return run_config_to_json(cfg).dump(); }

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::invalid_argument(what + " path is not set");
  if (!fs::exists(path)) throw std::invalid_argument(what + " not found: '" + path + "'");
}

std::vector<GraspLabel> load_finalized_labels(const HandModel& model, const SceneConfig& scene,
                                              const RunConfig& cfg) {
  require_file(cfg.labels_path, "label file");
  std::vector<GraspLabel> labels = load_labels(cfg.labels_path);
  for (auto& l : labels) finalize_label(model, l, sample_surface(scene.object(l.object_id).shape));
  return labels;
}

std::string default_checkpoint(const RunConfig& cfg, const std::string& stage) {
  const std::string name = cfg.per_object ? stage + "_{object}.ckpt" : stage + ".ckpt";
  return (fs::path(cfg.output_dir) / name).string();
}

std::string checkpoint_pattern(const RunConfig& cfg, const std::string& stage) {
  const std::string& set = stage == "grasp" ? cfg.grasp_checkpoint
                           : stage == "motion" ? cfg.motion_checkpoint
                                               : cfg.flat_checkpoint;
  return set.empty() ? default_checkpoint(cfg, stage) : set;
}

/// Policies for one object, loaded on demand from the configured checkpoints.
class PolicyCache {
 public:
  explicit PolicyCache(const RunConfig& cfg) : cfg_(cfg) {}

  Policies for_object(const std::string& object_id) {
    Policies p;
    switch (cfg_.controller) {
      case ControllerKind::OursLearnedMotion:
        p.motion = &get("motion", object_id);
        [[fallthrough]];
      case ControllerKind::OursPdMotion: p.grasp = &get("grasp", object_id); break;
      case ControllerKind::FlatRl: p.flat = &get("flat", object_id); break;
      default: break;
    }
    return p;
  }

 private:
  const ActorCritic& get(const std::string& stage, const std::string& object_id) {
    const std::string path = checkpoint_for(checkpoint_pattern(cfg_, stage), object_id);
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    require_file(path, stage + " checkpoint");
    return cache_.emplace(path, load_checkpoint(path).net).first->second;
  }

  const RunConfig& cfg_;
  std::map<std::string, ActorCritic> cache_;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_make_labels(const Common& common, int count, const std::string& object, const std::string& out_path) {
  const RunConfig cfg = load_config(common);
  const HandModel model = resolve_hand(cfg);
  const SceneConfig scene = resolve_scene(cfg);
  const std::string path = out_path.empty() ? cfg.labels_path : out_path;
  if (path.empty()) throw std::invalid_argument("no label output path (set paths.labels or --out)");
  if (count < 0) throw std::invalid_argument("--count must be >= 0");
  std::vector<std::string> objects;
  if (!object.empty()) {
    scene.object(object);
    objects.push_back(object);
  } else {
    for (const auto& [id, spec] : scene.objects) objects.push_back(id);
  }
  std::vector<GraspLabel> labels;
  for (const auto& id : objects) {
    auto batch = generate_labels(model, scene, id, count, cfg.seed);
    labels.insert(labels.end(), batch.begin(), batch.end());
  }
  nlohmann::json meta = artifact_meta(cfg);
  meta["count_per_object"] = count;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  save_labels(path, labels, meta);
  if (!common.quiet) std::cout << "wrote " << labels.size() << " labels to " << path << "\n";
  return kExitOk;
}

int cmd_train(const Common& common, const std::string& stage, std::optional<int> epochs) {
  RunConfig cfg = load_config(common);
  if (epochs) cfg.ppo.epochs = *epochs;
  cfg.validate();
  if (stage != "grasp" && stage != "motion" && stage != "flat")
    throw std::invalid_argument("--stage must be grasp, motion or flat");
  const HandModel model = resolve_hand(cfg);
  const SceneConfig scene = resolve_scene(cfg);
  const std::vector<GraspLabel> labels = load_finalized_labels(model, scene, cfg);
  if (labels.empty()) throw std::invalid_argument("label file '" + cfg.labels_path + "' has no labels");

  std::vector<std::pair<std::string, std::vector<GraspLabel>>> groups;
  if (cfg.per_object) {
    for (auto& [id, subset] : labels_by_object(labels)) groups.emplace_back(id, subset);
  } else {
    groups.emplace_back("", labels);
  }

  fs::create_directories(cfg.output_dir);
  const nlohmann::json meta = artifact_meta(cfg);
  for (const auto& [object_id, subset] : groups) {
    const std::string tag = object_id.empty() ? stage : stage + "_" + object_id;
    const fs::path log_path = fs::path(cfg.output_dir) / ("train_" + tag + ".csv");
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw std::runtime_error("cannot write '" + log_path.string() + "'");
    log << "# version: " << version_string() << "\n# config: " << config_line(cfg) << "\n"
        << training_log_header() << "\n";
    const EpochCallback on_epoch = [&](const EpochStats& e) {
      log << training_log_row(e) << "\n";
      if (!common.quiet && (e.epoch % 10 == 0 || e.epoch + 1 == cfg.ppo.epochs))
        std::cout << tag << " epoch " << e.epoch << " reward " << e.reward_mean << " success " << e.success
                  << std::endl;
    };
    TrainResult result;
    if (stage == "grasp") {
      result = train_grasp_policy(model, scene, subset, cfg, on_epoch);
    } else if (stage == "flat") {
      result = train_flat_policy(model, scene, subset, cfg, on_epoch);
    } else {
      const std::string grasp_path = checkpoint_for(checkpoint_pattern(cfg, "grasp"), object_id);
      require_file(grasp_path, "grasp checkpoint");
      const ActorCritic policy_g = load_checkpoint(grasp_path).net;
      result = train_motion_policy(model, scene, subset, policy_g, cfg, on_epoch);
    }
    const std::string ckpt = checkpoint_for(checkpoint_pattern(cfg, stage), object_id);
    if (fs::path(ckpt).has_parent_path()) fs::create_directories(fs::path(ckpt).parent_path());
    nlohmann::json ckpt_meta = meta;
    ckpt_meta["stage"] = stage;
    ckpt_meta["object"] = object_id;
    save_checkpoint(ckpt, result.net, ckpt_meta);
    if (!common.quiet) std::cout << "wrote " << ckpt << " and " << log_path.string() << "\n";
  }
  return kExitOk;
}

Pose6D parse_goal(const std::vector<double>& v) {
  if (v.size() != 6) throw std::invalid_argument("--goal takes 6 numbers: x y z rx ry rz");
  Pose6D p;
  p.position = Vec3(v[0], v[1], v[2]);
  p.orientation = exp_map(Vec3(v[3], v[4], v[5]));
  return p;
}

int cmd_rollout(const Common& common, int label_index, const std::vector<double>& goal_values, bool hold,
                const std::string& out_path) {
  const RunConfig cfg = load_config(common);
  const HandModel model = resolve_hand(cfg);
  const SceneConfig scene = resolve_scene(cfg);
  const std::vector<GraspLabel> labels = load_finalized_labels(model, scene, cfg);
  if (label_index < 0 || label_index >= static_cast<int>(labels.size()))
    throw std::invalid_argument("--label out of range (have " + std::to_string(labels.size()) + " labels)");
  const GraspLabel& stored = labels[label_index];
  const SurfacePointSet points = sample_surface(scene.object(stored.object_id).shape);
  const GraspLabel label = eval_label(model, stored, label_index, points, cfg);
  std::optional<Pose6D> goal;
  if (!hold) goal = goal_values.empty() ? eval_goal(cfg, stored, label_index, 0) : parse_goal(goal_values);
  PolicyCache policies(cfg);
  RolloutRecord rec = run_episode(model, scene, label, goal, cfg, policies.for_object(stored.object_id));
  rec.label_index = label_index;
  nlohmann::json meta = artifact_meta(cfg);
  meta["label"] = label_to_json(label);
  const std::string path = out_path.empty()
                               ? (fs::path(cfg.output_dir) / ("rollout_" + std::to_string(label_index) + ".jsonl")).string()
                               : out_path;
  write_text(path, rollout_jsonl(rec, meta));
  if (!common.quiet) std::cout << "wrote " << rec.steps.size() << " steps to " << path << "\n";
  return kExitOk;
}

void write_reports(const fs::path& dir, const MetricsReport& report, const RunConfig& cfg) {
  const nlohmann::json config = run_config_to_json(cfg);
  write_text(dir / "report.csv", report_csv(report, config, version_string()));
  write_text(dir / "report_extra.csv", extra_metrics_csv(report, config, version_string()));
  write_text(dir / "report.txt", report_table(report));
}

int cmd_eval(const Common& common, const std::string& controller, const std::string& mode) {
  RunConfig cfg = load_config(common);
  if (!controller.empty()) cfg.controller = controller_from_string(controller);
  if (!mode.empty()) cfg.eval.mode = eval_mode_from_string(mode);
  const HandModel model = resolve_hand(cfg);
  const SceneConfig scene = resolve_scene(cfg);
  const std::vector<GraspLabel> labels = load_finalized_labels(model, scene, cfg);

  PolicyCache cache(cfg);
  for (const auto& [object_id, subset] : labels_by_object(labels)) cache.for_object(object_id);
  const std::vector<EvaluatedRollout> all =
      evaluate_labels(model, scene, labels, cfg, [&](const std::string& id) { return cache.for_object(id); });

  const fs::path dir(cfg.output_dir);
  const nlohmann::json meta = artifact_meta(cfg);
  int k = 0, last = -1;
  for (const auto& e : all) {
    k = e.rollout.label_index == last ? k + 1 : 0;
    last = e.rollout.label_index;
    nlohmann::json m = meta;
    m["label"] = label_to_json(e.label);
    m["episode"] = k;
    const std::string name = to_string(cfg.controller) + "_" + std::to_string(e.rollout.label_index) + "_" +
                             std::to_string(k) + ".jsonl";
    write_text(dir / "rollouts" / name, rollout_jsonl(e.rollout, m));
  }
  const MetricsReport report = report_from(all);
  write_reports(dir, report, cfg);
  if (!common.quiet) std::cout << report_table(report);
  return kExitOk;
}

int cmd_report(const Common& common, const std::vector<std::string>& inputs) {
  const RunConfig cfg = load_config(common);
  const HandModel model = resolve_hand(cfg);
  const SceneConfig scene = resolve_scene(cfg);
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::directory_iterator(in))
        if (entry.path().extension() == ".jsonl") files.push_back(entry.path().string());
    } else {
      require_file(in, "rollout");
      files.push_back(in);
    }
  }
  if (files.empty()) throw std::invalid_argument("report: no rollout files");
  std::sort(files.begin(), files.end());
  const MetricOptions mopt{cfg.task.hold_steps, cfg.task.fall_threshold, cfg.eval.interpenetration_samples, cfg.seed};
  std::map<std::string, std::vector<std::pair<std::pair<int, int>, RolloutMetrics>>> keyed;
  for (const auto& f : files) {
    nlohmann::json meta;
    const RolloutRecord rec = read_rollout_jsonl(f, model.link_count(), &meta);
    if (!meta.contains("label")) throw std::invalid_argument(f + ": header has no label");
    GraspLabel label = label_from_json(meta.at("label"), f);
    finalize_label(model, label, sample_surface(scene.object(label.object_id).shape));
    const int episode = meta.value("episode", 0);
    keyed[rec.object_id].push_back(
        {{rec.label_index, episode}, evaluate_rollout(model, scene.object(rec.object_id).shape, rec, label, mopt)});
  }
  std::map<std::string, std::vector<RolloutMetrics>> by_object;
  for (auto& [id, items] : keyed) {
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [key, m] : items) by_object[id].push_back(m);
  }
  const MetricsReport report = build_report(by_object);
  write_reports(fs::path(cfg.output_dir), report, cfg);
  if (!common.quiet) std::cout << report_table(report);
  return kExitOk;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Run config (JSON)");
  cmd->add_option("--seed", c.seed, "Override the config seed");
  cmd->add_option("-o,--output-dir", c.output_dir, "Override paths.output_dir");
  cmd->add_flag("-q,--quiet", c.quiet, "No progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic grasp synthesis toolkit"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  Common common;
  int count = 4;
  std::string object, out_path, stage = "grasp", controller, mode;
  std::optional<int> epochs;
  int label_index = 0;
  std::vector<double> goal;
  bool hold = false;
  std::vector<std::string> inputs;

  auto* make = app.add_subcommand("make-labels", "Generate heuristic grasp labels for the scene objects");
  add_common(make, common);
  make->add_option("-n,--count", count, "Labels per object")->capture_default_str();
  make->add_option("--object", object, "Only this object id");
  make->add_option("--out", out_path, "Label file (default paths.labels)");

  auto* trn = app.add_subcommand("train", "Train a policy; writes a checkpoint and a per-epoch CSV log");
  add_common(trn, common);
  trn->add_option("--stage", stage, "grasp, motion or flat")->capture_default_str();
  trn->add_option("--epochs", epochs, "Override ppo.epochs");

  auto* roll = app.add_subcommand("rollout", "Run one episode and write it as JSONL");
  add_common(roll, common);
  roll->add_option("--label", label_index, "Label index")->capture_default_str();
  roll->add_option("--goal", goal, "Object goal: x y z rx ry rz (rotation vector)")->expected(6);
  roll->add_flag("--hold", hold, "Hold after the grasp phase instead of moving");
  roll->add_option("--out", out_path, "Output file (default <output_dir>/rollout_<label>.jsonl)");

  auto* ev = app.add_subcommand("eval", "Evaluate every label and write report files");
  add_common(ev, common);
  ev->add_option("--controller", controller, "ours-pd, ours-learned, baseline-pd, baseline-ik or flat-rl");
  ev->add_option("--mode", mode, "grasp or motion");

  auto* rep = app.add_subcommand("report", "Recompute report files from rollout logs");
  add_common(rep, common);
  rep->add_option("inputs", inputs, "Rollout files or directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*make) return cmd_make_labels(common, count, object, out_path);
    if (*trn) return cmd_train(common, stage, epochs);
    if (*roll) return cmd_rollout(common, label_index, goal, hold, out_path);
    if (*ev) return cmd_eval(common, controller, mode);
    if (*rep) return cmd_report(common, inputs);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
