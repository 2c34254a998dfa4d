#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/detector.hpp"
#include "xdistill/losses.hpp"
#include "xdistill/scene.hpp"
#include "xdistill/teacher.hpp"

namespace xdistill {

struct OptimizerConfig {
  double lr = 0.003;
  double weight_decay = 0.01;  // decoupled, applied to weights but not biases
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 30;
  std::size_t batch = 4;
  double init_prior = 0.01;
  double init_sigma = 0.01;
};

enum class RegateSchedule { kEveryStep, kEveryEpoch };

struct TrainConfig {
  OptimizerConfig optimizer{};
  LossConfig loss{};
  RegateSchedule regate = RegateSchedule::kEveryStep;
  std::uint64_t seed = 0;  // initialization and shuffling
};

/// One training or validation scene with everything derived from it.
struct SceneData {
  Scene scene;
  SceneTargets targets;
};

SceneData make_scene_data(std::uint64_t seed, const SceneConfig& scene_config, const AnchorGrid& grid,
                          const TeacherConfig& teacher, const AssignConfig& assign);

struct EpochRecord {
  int epoch = 0;
  double cls = 0.0, reg = 0.0, ori = 0.0, xgd = 0.0, cld = 0.0, total = 0.0;
  GateStats gate;
  std::size_t non_smooth = 0;
  double n_pos_mean = 0.0;
};

struct TrainResult {
  DetectorParams params;
  std::vector<EpochRecord> history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mini-batch Adam over total_loss. Scenes are shuffled every epoch from
/// `config.seed`; epochs = 0 returns the initialized model.
TrainResult train(std::span<const SceneData> scenes, const AnchorGrid& grid, const TrainConfig& config);

/// Mean total_loss breakdown of `params` over `scenes` (no update).
EpochRecord evaluate_loss(const DetectorParams& params, std::span<const SceneData> scenes, const AnchorGrid& grid,
                          const LossConfig& loss);

}  // namespace xdistill
