#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xdistill/config.hpp"
#include "xdistill/detector.hpp"
#include "xdistill/eval.hpp"
#include "xdistill/train.hpp"

namespace xdistill {

/// One CSV row; the column order is fixed by kCsvHeader.
struct MetricRow {
  std::string experiment;
  std::string arm;
  std::string class_name;
  double iou_thr = 0.0;
  std::uint64_t seed = 0;
  double ap3d = 0.0;
  double ap_bev = 0.0;
  double n_pos_mean = 0.0;
  double keep_center = 0.0;
  double keep_size = 0.0;
  double keep_angle = 0.0;
};

inline constexpr const char* kCsvHeader =
    "experiment,arm,class,iou_thr,seed,ap3d,ap_bev,n_pos_mean,gate_keep_rate_center,gate_keep_rate_size,"
    "gate_keep_rate_angle";

struct RunRecord {
  std::string arm;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
  nlohmann::json ap;  // per class and threshold, with PR samples and counts
};

struct ExperimentReport {
  std::string experiment;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricRow> rows;
  std::vector<RunRecord> runs;
};

/// Training and validation scenes of one seed. Scene seeds are derived from
/// the experiment seed, so every arm of a seed sees the same data.
struct SeedData {
  std::vector<SceneData> train;
  std::vector<SceneData> val;
};

SeedData make_seed_data(const ExperimentConfig& config, const AnchorGrid& grid, std::uint64_t seed);

/// Validation-set AP for every configured (class, threshold) of a set of
/// per-scene outputs.
struct ClassAp {
  std::string class_name;
  double iou_thr = 0.0;
  ApResult ap3d;
  ApResult ap_bev;
};

std::vector<ClassAp> evaluate_outputs(const std::vector<ModelOutputs>& outputs, const std::vector<SceneData>& val,
                                      const AnchorGrid& grid, const ExperimentConfig& config);

using ProgressFn = std::function<void(const std::string&)>;

/// Trains every arm on every seed and evaluates on the held-out scenes.
ExperimentReport run_arms(const ExperimentConfig& config, const std::vector<ArmSpec>& arms,
                          const std::string& experiment, const ProgressFn& progress = {});

ExperimentReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});
ExperimentReport run_ablations(const ExperimentConfig& config, const ProgressFn& progress = {});

/// Trains the baseline student per seed and evaluates it with its heads
/// swapped for those of a teacher with config.replace_teacher_noise.
ExperimentReport run_replacement(const ExperimentConfig& config, const std::vector<ReplaceMode>& modes,
                                 const ProgressFn& progress = {});

std::string to_csv(const std::vector<MetricRow>& rows);

/// Per-seed AP3D differences of every arm against `reference`, by class and
/// threshold, with their mean and sample standard deviation.
nlohmann::json paired_deltas(const ExperimentReport& report, const std::string& reference);

/// Seed mean and sample standard deviation of AP3D and AP_BEV per arm, class and threshold.
nlohmann::json aggregate(const ExperimentReport& report);

nlohmann::json to_json(const ExperimentReport& report);

/// Writes <dir>/<stem>.csv and <dir>/<stem>.json, creating `dir` if needed.
void write_report(const ExperimentReport& report, const std::string& dir, const std::string& stem);

}  // namespace xdistill
