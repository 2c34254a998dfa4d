#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/geometry.hpp"

namespace xdistill {

/// Centre / size / angle split of a box.
struct BoxComponents {
  std::array<double, 3> center{};
  std::array<double, 3> size{};  // (l, w, h), raw metres
  double angle = 0.0;

  static BoxComponents from_box(const Box3D& box);
  Box3D to_box() const;
};

struct GateEntry {
  bool kept = false;
  std::optional<double> cos_beta;  // empty when a difference vector is degenerate
};

struct GateDecision {
  GateEntry center;
  GateEntry size;
  GateEntry angle;
};

/// Cosine gate on precomputed differences (teacher - student, gt - student).
/// Kept iff the cosine is strictly positive. A vanishing teacher difference
/// is kept (the substitution is a no-op); a vanishing GT difference with a
/// non-vanishing teacher difference is rejected.
GateEntry gate_from_differences(std::span<const double> teacher_minus_student,
                                std::span<const double> gt_minus_student, double eps = 1e-9);

/// Gate for a vector component. Throws std::invalid_argument on size mismatch
/// or non-finite input.
GateEntry component_gate(std::span<const double> student, std::span<const double> teacher,
                         std::span<const double> gt, double eps = 1e-9);

/// Gate for the yaw component, using wrapped scalar differences.
GateEntry angle_gate(double student, double teacher, double gt, double eps = 1e-9);

struct ComponentMask {
  bool center = true;
  bool size = true;
  bool angle = true;
};

struct ComponentUpdateOptions {
  double eps = 1e-9;
  ComponentMask enabled{};  // disabled components always fall back to the student
  bool force_open = false;  // keep every enabled component regardless of the gate
};

struct ComponentUpdate {
  std::vector<Box3D> targets;
  std::vector<GateDecision> decisions;
};

/// Per box and per component: take the teacher's component when the gate
/// keeps it, otherwise the student's current value.
ComponentUpdate positive_component_update(std::span<const Box3D> teacher,
                                          std::span<const Box3D> student,
                                          std::span<const Box3D> gt,
                                          const ComponentUpdateOptions& options = {});

enum class XgdNormalization { kSum, kMean };

/// Sum (or mean) over pairs of 1 - IoU3D(student, target).
double xgd_loss(std::span<const Box3D> student, std::span<const Box3D> targets,
                XgdNormalization norm = XgdNormalization::kSum);

struct XgdGradient {
  std::vector<std::array<double, 7>> d_delta;  // one per pair
  std::size_t non_smooth = 0;
  std::size_t clipped = 0;
  std::size_t size_clamped = 0;
};

/// Gradient of xgd_loss with respect to the student's regression deltas.
/// Targets are constants; IoU derivatives come from central differences and
/// are chained through the decode Jacobian.
XgdGradient xgd_loss_grad(std::span<const BoxDelta> student_deltas, std::span<const Box3D> anchors,
                          std::span<const Box3D> targets,
                          XgdNormalization norm = XgdNormalization::kSum,
                          const FdSteps& steps = {});

}  // namespace xdistill
