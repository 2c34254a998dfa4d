#include "xdistill/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "xdistill/teacher.hpp"

namespace xdistill {
namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double power(double base, double gamma) {
  if (gamma == 2.0) return base * base;
  if (gamma == 0.0) return 1.0;
  return std::pow(base, gamma);
}

// Binary focal loss of one logit and its derivative.
struct FocalTerm {
  double loss;
  double grad;
};

FocalTerm focal(double x, bool positive, double gamma, double alpha) {
  const double p = sigmoid(x);
  if (positive) {
    const double log_p = -softplus(-x);
    const double w = power(1.0 - p, gamma);
    return {-alpha * w * log_p, alpha * w * (gamma * p * log_p - (1.0 - p))};
  }
  const double log_q = -softplus(x);
  const double w = power(p, gamma);
  return {-(1.0 - alpha) * w * log_q, (1.0 - alpha) * w * (p - gamma * (1.0 - p) * log_q)};
}

double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0.0 ? 1.0 : -1.0;
}

double normalizer(const SceneTargets& t) { return std::max<double>(1.0, static_cast<double>(t.assignment.n_pos)); }

BaseLoss base_terms(const ModelOutputs& student, const SceneTargets& t, const BaseLossConfig& c,
                    OutputGrad* grad) {
  const std::size_t n = student.logits.num_anchors;
  const std::size_t k_c = student.logits.num_classes;
  if (t.assignment.labels.size() != n || student.deltas.size() != n) {
    throw std::invalid_argument("base_loss: outputs do not match the assignment");
  }
  const double inv = 1.0 / normalizer(t);
  BaseLoss out;
  // Positions away from every object share their logits, so the last value
  // seen per head output is usually a hit.
  const std::size_t width = student.logits.position_width();
  std::vector<double> last_x(width, std::numeric_limits<double>::quiet_NaN());
  std::vector<FocalTerm> last_f(width);
  for (std::size_t a = 0; a < n; ++a) {
    if (t.assignment.labels[a] == AnchorLabel::kIgnore) continue;
    const std::size_t slot = (a % student.logits.anchors_per_position) * k_c;
    for (std::size_t k = 0; k < k_c; ++k) {
      const double x = student.logits.at(a, k);
      if (x != last_x[slot + k]) {
        last_x[slot + k] = x;
        last_f[slot + k] = focal(x, false, c.focal_gamma, c.focal_alpha);
      }
      const FocalTerm& f = last_f[slot + k];
      out.cls += f.loss;
      if (grad) grad->d_logits[a * k_c + k] += f.grad * inv;
    }
  }
  for (std::size_t j = 0; j < t.positives.size(); ++j) {
    const std::size_t a = t.positives[j];
    const std::size_t k = static_cast<std::size_t>(t.positive_class[j]);
    const double x = student.logits.at(a, k);
    const FocalTerm neg = focal(x, false, c.focal_gamma, c.focal_alpha);
    const FocalTerm pos = focal(x, true, c.focal_gamma, c.focal_alpha);
    out.cls += pos.loss - neg.loss;
    if (grad) grad->d_logits[a * k_c + k] += (pos.grad - neg.grad) * inv;

    const auto s = student.deltas[a].to_array();
    const auto g = t.gt_deltas[j].to_array();
    for (std::size_t i = 0; i < 7; ++i) {
      out.reg += smooth_l1(s[i] - g[i], c.smooth_l1_beta);
      if (grad) grad->d_deltas[a][i] += smooth_l1_grad(s[i] - g[i], c.smooth_l1_beta) * inv;
    }
  }
  out.cls *= inv;
  out.reg *= inv;
  return out;
}

const std::vector<std::size_t>& cld_positions(const SceneTargets& t, CldMode mode) {
  return mode == CldMode::kPositive ? t.pos_positions : t.fore_positions;
}

double cld_term(const ModelOutputs& student, const SceneTargets& t, const LossConfig& c, OutputGrad* grad) {
  const auto& positions = cld_positions(t, c.cld);
  const LogitMap teacher = select_positions(t.teacher.logits, positions);
  const LogitMap stud = select_positions(student.logits, positions);
  double loss = 0.0;
  LogitMap g;
  if (c.cld == CldMode::kClassical) {
    loss = classical_logit_distill(teacher, stud, c.tau);
    if (grad) g = classical_logit_distill_grad(teacher, stud, c.tau);
  } else {
    const UnifiedDistribution pt = unified_distribution(teacher, c.tau);
    loss = cld_loss(pt, unified_distribution(stud, c.tau), c.kl_order);
    if (grad) g = cld_grad(pt, stud, c.tau, c.kl_order);
  }
  if (grad) {
    const std::size_t width = stud.position_width();
    for (std::size_t i = 0; i < positions.size(); ++i) {
      double* dst = grad->d_logits.data() + positions[i] * width;
      const double* src = g.values.data() + i * width;
      for (std::size_t k = 0; k < width; ++k) dst[k] += c.lambda_cld * src[k];
    }
  }
  return loss;
}

LossBreakdown evaluate(const ModelOutputs& student, const SceneTargets& t, const LossConfig& c,
                       const XgdTargets* frozen, OutputGrad* grad) {
  LossBreakdown b;
  const BaseLoss base = base_terms(student, t, c.base, grad);
  b.cls = base.cls;
  b.reg = base.reg;
  b.ori = b.cls + b.reg;
  b.total = b.ori;

  XgdTargets local;
  const XgdTargets* xt = frozen;
  if (!xt) {
    local = prepare_xgd_targets(student, t, c);
    xt = &local;
  }
  b.gate = xt->gate;

  if (c.xgd != XgdMode::kNone && c.lambda_xgd != 0.0) {
    std::vector<Box3D> boxes, anchors;
    std::vector<BoxDelta> deltas;
    for (std::size_t j : xt->pairs) {
      const std::size_t a = t.positives[j];
      deltas.push_back(student.deltas[a]);
      anchors.push_back(t.anchors[j]);
      boxes.push_back(decode_box(student.deltas[a], t.anchors[j]));
    }
    b.xgd = xgd_loss(boxes, xt->boxes, c.xgd_norm);
    b.total += c.lambda_xgd * b.xgd;
    if (grad) {
      const XgdGradient g = xgd_loss_grad(deltas, anchors, xt->boxes, c.xgd_norm, c.fd_steps);
      b.non_smooth = g.non_smooth;
      for (std::size_t i = 0; i < xt->pairs.size(); ++i) {
        const std::size_t a = t.positives[xt->pairs[i]];
        for (std::size_t k = 0; k < 7; ++k) grad->d_deltas[a][k] += c.lambda_xgd * g.d_delta[i][k];
      }
    }
  }

  if (c.cld != CldMode::kNone && c.lambda_cld != 0.0) {
    b.cld = cld_term(student, t, c, grad);
    b.total += c.lambda_cld * b.cld;
  }
  return b;
}

}  // namespace

SceneTargets prepare_targets(const AnchorGrid& grid, std::span<const GroundTruth> gts,
                             const ModelOutputs& teacher, const AssignConfig& assign) {
  if (teacher.deltas.size() != grid.num_anchors() || teacher.logits.num_anchors != grid.num_anchors()) {
    throw std::invalid_argument("prepare_targets: teacher outputs do not match the anchor grid");
  }
  SceneTargets t;
  t.assignment = assign_targets(grid, gts, assign);
  t.teacher = teacher;
  t.positives = t.assignment.positives;
  const std::size_t k_c = teacher.logits.num_classes;
  for (std::size_t a : t.positives) {
    const GroundTruth& g = gts[static_cast<std::size_t>(t.assignment.gt_index[a])];
    const Box3D anchor = grid.anchor_box(a);
    const Box3D aligned = align_heading(g.box, anchor.yaw);
    t.positive_class.push_back(g.class_id);
    t.anchors.push_back(anchor);
    t.gt_boxes.push_back(aligned);
    t.gt_deltas.push_back(encode_box(aligned, anchor));
    t.teacher_boxes.push_back(decode_box(teacher.deltas[a], anchor));
    double conf = 0.0;
    for (std::size_t k = 0; k < k_c; ++k) conf = std::max(conf, sigmoid(teacher.logits.at(a, k)));
    t.teacher_confidence.push_back(conf);
    const std::size_t p = grid.position_of(a);
    if (t.pos_positions.empty() || t.pos_positions.back() != p) t.pos_positions.push_back(p);
  }
  for (std::size_t p = 0; p < t.assignment.foreground.size(); ++p) {
    if (t.assignment.foreground[p]) t.fore_positions.push_back(p);
  }
  return t;
}

BaseLoss base_loss(const ModelOutputs& student, const SceneTargets& targets, const BaseLossConfig& config) {
  return base_terms(student, targets, config, nullptr);
}

void base_loss_grad(const ModelOutputs& student, const SceneTargets& targets, const BaseLossConfig& config,
                    OutputGrad& grad) {
  base_terms(student, targets, config, &grad);
}

XgdMode parse_xgd_mode(std::string_view name) {
  if (name == "none") return XgdMode::kNone;
  if (name == "full") return XgdMode::kFull;
  if (name == "center") return XgdMode::kCenter;
  if (name == "size") return XgdMode::kSize;
  if (name == "angle") return XgdMode::kAngle;
  if (name == "hq") return XgdMode::kHighQuality;
  throw std::invalid_argument("unknown xgd mode '" + std::string(name) + "'");
}

CldMode parse_cld_mode(std::string_view name) {
  if (name == "none") return CldMode::kNone;
  if (name == "foreground") return CldMode::kForeground;
  if (name == "positive") return CldMode::kPositive;
  if (name == "classical") return CldMode::kClassical;
  throw std::invalid_argument("unknown cld mode '" + std::string(name) + "'");
}

std::string_view to_string(XgdMode mode) {
  switch (mode) {
    case XgdMode::kNone: return "none";
    case XgdMode::kFull: return "full";
    case XgdMode::kCenter: return "center";
    case XgdMode::kSize: return "size";
    case XgdMode::kAngle: return "angle";
    case XgdMode::kHighQuality: return "hq";
  }
  return "none";
}

std::string_view to_string(CldMode mode) {
  switch (mode) {
    case CldMode::kNone: return "none";
    case CldMode::kForeground: return "foreground";
    case CldMode::kPositive: return "positive";
    case CldMode::kClassical: return "classical";
  }
  return "none";
}

GateStats& GateStats::operator+=(const GateStats& o) {
  evaluated += o.evaluated;
  kept_center += o.kept_center;
  kept_size += o.kept_size;
  kept_angle += o.kept_angle;
  return *this;
}

XgdTargets prepare_xgd_targets(const ModelOutputs& student, const SceneTargets& t, const LossConfig& c) {
  const std::size_t n = t.positives.size();
  std::vector<Box3D> student_boxes(n);
  for (std::size_t j = 0; j < n; ++j) student_boxes[j] = decode_box(student.deltas[t.positives[j]], t.anchors[j]);

  XgdTargets out;
  ComponentUpdateOptions options;
  options.eps = c.gate_eps;
  const ComponentUpdate plain = positive_component_update(t.teacher_boxes, student_boxes, t.gt_boxes, options);
  out.gate.evaluated = n;
  for (const GateDecision& d : plain.decisions) {
    out.gate.kept_center += d.center.kept;
    out.gate.kept_size += d.size.kept;
    out.gate.kept_angle += d.angle.kept;
  }

  switch (c.xgd) {
    case XgdMode::kNone:
      return out;
    case XgdMode::kHighQuality:
      for (std::size_t j = 0; j < n; ++j) {
        if (t.teacher_confidence[j] > c.hq_threshold) {
          out.pairs.push_back(j);
          out.boxes.push_back(t.teacher_boxes[j]);
        }
      }
      return out;
    default:
      break;
  }
  options.force_open = c.force_open;
  options.enabled = {c.xgd == XgdMode::kFull || c.xgd == XgdMode::kCenter,
                     c.xgd == XgdMode::kFull || c.xgd == XgdMode::kSize,
                     c.xgd == XgdMode::kFull || c.xgd == XgdMode::kAngle};
  ComponentUpdate update = (c.xgd == XgdMode::kFull && !c.force_open)
                               ? plain
                               : positive_component_update(t.teacher_boxes, student_boxes, t.gt_boxes, options);
  out.boxes = std::move(update.targets);
  out.pairs.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.pairs[j] = j;
  return out;
}

LossBreakdown total_loss(const ModelOutputs& student, const SceneTargets& targets, const LossConfig& config,
                         const XgdTargets* frozen) {
  return evaluate(student, targets, config, frozen, nullptr);
}

OutputGrad total_loss_grad(const ModelOutputs& student, const SceneTargets& targets, const LossConfig& config,
                           const XgdTargets* frozen, LossBreakdown* breakdown) {
  OutputGrad grad(student.logits.num_anchors, student.logits.num_classes);
  const LossBreakdown b = evaluate(student, targets, config, frozen, &grad);
  if (breakdown) *breakdown = b;
  return grad;
}

}  // namespace xdistill
