#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xdistill/anchors.hpp"
#include "xdistill/eval.hpp"
#include "xdistill/scene.hpp"
#include "xdistill/teacher.hpp"
#include "xdistill/train.hpp"

namespace xdistill {

struct ClassSpec {
  std::string name;
  ClassTemplate anchor;
  int min_count = 0;
  int max_count = 0;
  ClassThresholds thresholds;
  std::vector<double> eval_iou;  // AP thresholds reported for this class
};

struct ArmSpec {
  std::string name;
  XgdMode xgd = XgdMode::kNone;
  CldMode cld = CldMode::kNone;
};

struct ExperimentConfig {
  std::string experiment = "default";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int train_scenes = 16;
  int val_scenes = 16;
  AnchorGridConfig grid;
  std::vector<ClassSpec> classes;
  SceneConfig scene;
  TeacherConfig teacher;
  NoiseProfile replace_teacher_noise;  // teacher used by the replacement study
  AssignConfig assign;
  TrainConfig train;
  NmsConfig nms;
  int recall_positions = 40;
  std::vector<ArmSpec> arms;
  std::vector<ArmSpec> ablation_arms;
  std::string output_dir = "results";
};

/// Raised for schema violations; the message starts with the JSON key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Defaults: three classes (car, pedestrian, cyclist), the default grid and
/// the standard arm matrices.
ExperimentConfig default_config();

/// Keys missing from `j` keep their default value; unknown keys are errors.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Fully expanded config, suitable for hashing and reports.
nlohmann::json to_json(const ExperimentConfig& config);

/// FNV-1a 64 of the compact dump of to_json(config), as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Derived runtime objects.
AnchorGrid make_grid(const ExperimentConfig& config);

}  // namespace xdistill
