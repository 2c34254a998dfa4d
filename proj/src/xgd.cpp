#include "xdistill/xgd.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <stdexcept>

namespace xdistill {
namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite input");
  }
}

}  // namespace

BoxComponents BoxComponents::from_box(const Box3D& box) {
  return {{box.cx, box.cy, box.cz}, {box.l, box.w, box.h}, wrap_angle(box.yaw)};
}

Box3D BoxComponents::to_box() const {
  return {center[0], center[1], center[2], size[0], size[1], size[2], angle};
}

GateEntry gate_from_differences(std::span<const double> t_minus_s, std::span<const double> g_minus_s,
                                double eps) {
  if (t_minus_s.size() != g_minus_s.size()) {
    throw std::invalid_argument("gate: component dimension mismatch");
  }
  require_finite(t_minus_s, "gate");
  require_finite(g_minus_s, "gate");
  const double nt = norm2(t_minus_s);
  const double ng = norm2(g_minus_s);
  if (nt < eps) return {true, std::nullopt};
  if (ng < eps) return {false, std::nullopt};
  double dot = 0.0;
  for (std::size_t i = 0; i < t_minus_s.size(); ++i) dot += t_minus_s[i] * g_minus_s[i];
  const double cos_beta = std::clamp(dot / (nt * ng), -1.0, 1.0);
  // Decide on the sign of the dot product itself so that "kept" never
  // disagrees with it through rounding in the normalisation.
  return {dot > 0.0, cos_beta};
}

GateEntry component_gate(std::span<const double> student, std::span<const double> teacher,
                         std::span<const double> gt, double eps) {
  if (student.size() != teacher.size() || student.size() != gt.size()) {
    throw std::invalid_argument("component_gate: component dimension mismatch");
  }
  require_finite(student, "component_gate");
  require_finite(teacher, "component_gate");
  require_finite(gt, "component_gate");
  std::array<double, 3> dt{}, dg{};
  if (student.size() > dt.size()) throw std::invalid_argument("component_gate: at most 3 dimensions");
  for (std::size_t i = 0; i < student.size(); ++i) {
    dt[i] = teacher[i] - student[i];
    dg[i] = gt[i] - student[i];
  }
  const std::size_t k = student.size();
  return gate_from_differences(std::span<const double>(dt.data(), k), std::span<const double>(dg.data(), k),
                               eps);
}

GateEntry angle_gate(double student, double teacher, double gt, double eps) {
  const double dt = wrap_angle(teacher - student);
  const double dg = wrap_angle(gt - student);
  return gate_from_differences(std::span<const double>(&dt, 1), std::span<const double>(&dg, 1), eps);
}

ComponentUpdate positive_component_update(std::span<const Box3D> teacher,
                                          std::span<const Box3D> student,
                                          std::span<const Box3D> gt,
                                          const ComponentUpdateOptions& options) {
  if (teacher.size() != student.size() || teacher.size() != gt.size()) {
    throw std::invalid_argument("positive_component_update: list length mismatch");
  }
  ComponentUpdate out;
  out.targets.reserve(teacher.size());
  out.decisions.reserve(teacher.size());
  for (std::size_t j = 0; j < teacher.size(); ++j) {
    const BoxComponents t = BoxComponents::from_box(teacher[j]);
    const BoxComponents s = BoxComponents::from_box(student[j]);
    const BoxComponents g = BoxComponents::from_box(gt[j]);

    GateDecision d;
    d.center = component_gate(s.center, t.center, g.center, options.eps);
    d.size = component_gate(s.size, t.size, g.size, options.eps);
    d.angle = angle_gate(s.angle, t.angle, g.angle, options.eps);
    if (options.force_open) d.center.kept = d.size.kept = d.angle.kept = true;
    if (!options.enabled.center) d.center.kept = false;
    if (!options.enabled.size) d.size.kept = false;
    if (!options.enabled.angle) d.angle.kept = false;

    BoxComponents target = s;
    if (d.center.kept) target.center = t.center;
    if (d.size.kept) target.size = t.size;
    if (d.angle.kept) target.angle = t.angle;
    out.targets.push_back(target.to_box());
    out.decisions.push_back(d);
  }
  return out;
}

double xgd_loss(std::span<const Box3D> student, std::span<const Box3D> targets, XgdNormalization norm) {
  if (student.size() != targets.size()) throw std::invalid_argument("xgd_loss: list length mismatch");
  if (student.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t j = 0; j < student.size(); ++j) sum += 1.0 - iou3d(student[j], targets[j]);
  return norm == XgdNormalization::kMean ? sum / static_cast<double>(student.size()) : sum;
}

XgdGradient xgd_loss_grad(std::span<const BoxDelta> student_deltas, std::span<const Box3D> anchors,
                          std::span<const Box3D> targets, XgdNormalization norm,
                          const FdSteps& steps) {
  if (student_deltas.size() != anchors.size() || student_deltas.size() != targets.size()) {
    throw std::invalid_argument("xgd_loss_grad: list length mismatch");
  }
  XgdGradient out;
  out.d_delta.resize(student_deltas.size());
  const double scale =
      (norm == XgdNormalization::kMean && !student_deltas.empty()) ? 1.0 / static_cast<double>(student_deltas.size()) : 1.0;
  for (std::size_t j = 0; j < student_deltas.size(); ++j) {
    const Box3D box = decode_box(student_deltas[j], anchors[j]);
    const IouGradient g = iou3d_grad_fd(box, targets[j], steps);
    const auto jac = decode_jacobian_diagonal(student_deltas[j], anchors[j]);
    for (std::size_t k = 0; k < 7; ++k) out.d_delta[j][k] = -scale * g.grad[k] * jac[k];
    out.non_smooth += g.non_smooth ? 1 : 0;
    out.clipped += g.clipped ? 1 : 0;
    out.size_clamped += g.size_clamped ? 1 : 0;
  }
  return out;
}

}  // namespace xdistill
