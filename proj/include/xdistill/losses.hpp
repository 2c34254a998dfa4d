#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/cld.hpp"
#include "xdistill/detector.hpp"
#include "xdistill/xgd.hpp"

namespace xdistill {

struct BaseLossConfig {
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double smooth_l1_beta = 1.0 / 9.0;
};

struct BaseLoss {
  double cls = 0.0;
  double reg = 0.0;
};

/// Everything the losses need from one scene that does not depend on the
/// student: assignment, encoded GT, and the teacher's outputs. Per-positive
/// vectors follow `assignment.positives`.
struct SceneTargets {
  Assignment assignment;
  std::vector<std::size_t> positives;        // anchor indices
  std::vector<int> positive_class;           // GT class of each positive
  std::vector<Box3D> anchors;                // anchor box of each positive
  std::vector<Box3D> gt_boxes;               // assigned GT, heading aligned to the anchor
  std::vector<BoxDelta> gt_deltas;           // encode(gt_boxes[j], anchors[j])
  std::vector<Box3D> teacher_boxes;          // teacher's decoded box at each positive
  std::vector<double> teacher_confidence;    // max class sigmoid of the teacher at each positive
  std::vector<std::size_t> fore_positions;   // foreground positions, ascending
  std::vector<std::size_t> pos_positions;    // positions that hold a positive, ascending
  ModelOutputs teacher;
};

SceneTargets prepare_targets(const AnchorGrid& grid, std::span<const GroundTruth> gts,
                             const ModelOutputs& teacher, const AssignConfig& assign);

/// Focal loss over every non-ignored (anchor, class) entry plus smooth-L1 on
/// the deltas of positive anchors; both divided by max(1, N_pos).
BaseLoss base_loss(const ModelOutputs& student, const SceneTargets& targets, const BaseLossConfig& config);

/// Adds d(cls + reg)/d(outputs) to `grad`.
void base_loss_grad(const ModelOutputs& student, const SceneTargets& targets, const BaseLossConfig& config,
                    OutputGrad& grad);

enum class XgdMode { kNone, kFull, kCenter, kSize, kAngle, kHighQuality };
enum class CldMode { kNone, kForeground, kPositive, kClassical };

XgdMode parse_xgd_mode(std::string_view name);
CldMode parse_cld_mode(std::string_view name);
std::string_view to_string(XgdMode mode);
std::string_view to_string(CldMode mode);

struct LossConfig {
  BaseLossConfig base{};
  XgdMode xgd = XgdMode::kNone;
  CldMode cld = CldMode::kNone;
  double lambda_xgd = 1.0;
  double lambda_cld = 1.0;
  XgdNormalization xgd_norm = XgdNormalization::kSum;
  double gate_eps = 1e-9;
  bool force_open = false;
  double hq_threshold = 0.3;
  double tau = 1.0;
  KlOrder kl_order = KlOrder::kTeacherStudent;
  FdSteps fd_steps{};
};

struct GateStats {
  std::size_t evaluated = 0;
  std::size_t kept_center = 0;
  std::size_t kept_size = 0;
  std::size_t kept_angle = 0;

  GateStats& operator+=(const GateStats& o);
};

/// Detached XGD targets for one scene. `pairs` indexes into the per-positive
/// vectors of SceneTargets; a positive may be absent (high-quality selection).
struct XgdTargets {
  std::vector<std::size_t> pairs;
  std::vector<Box3D> boxes;
  GateStats gate;
};

/// Runs the gate on the student's current boxes (Algorithm-1 modes) or the
/// confidence filter (high-quality mode). Gate statistics are always filled
/// in, whatever the mode, so that arms can be compared on them.
XgdTargets prepare_xgd_targets(const ModelOutputs& student, const SceneTargets& targets, const LossConfig& config);

struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double ori = 0.0;
  double xgd = 0.0;
  double cld = 0.0;
  double total = 0.0;
  GateStats gate;
  std::size_t non_smooth = 0;
};

/// L_ori + lambda_xgd * L_xgd + lambda_cld * L_cld. A term whose mode is none
/// or whose weight is zero is not evaluated at all. When `frozen` is null the
/// XGD targets are derived from `student`.
LossBreakdown total_loss(const ModelOutputs& student, const SceneTargets& targets, const LossConfig& config,
                         const XgdTargets* frozen = nullptr);

/// Gradient of total_loss with respect to the student outputs. The breakdown
/// of the same evaluation is written to `breakdown` when given.
OutputGrad total_loss_grad(const ModelOutputs& student, const SceneTargets& targets, const LossConfig& config,
                           const XgdTargets* frozen = nullptr, LossBreakdown* breakdown = nullptr);

}  // namespace xdistill
