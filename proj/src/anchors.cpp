#include "xdistill/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace xdistill {
namespace {

constexpr double kMaxDecodedSize = 1e6;

std::size_t cell_count(double lo, double hi, double cell, const char* axis) {
  if (!(hi > lo)) throw std::invalid_argument(std::string("anchor grid: ") + axis + " range is not ordered");
  if (!(cell > 0.0)) throw std::invalid_argument(std::string("anchor grid: ") + axis + " cell must be positive");
  const double n = std::floor((hi - lo) / cell + 1e-9);
  if (n < 1.0) throw std::invalid_argument(std::string("anchor grid: no cells along ") + axis);
  return static_cast<std::size_t>(n);
}

double anchor_diagonal(const Box3D& anchor) { return std::hypot(anchor.l, anchor.w); }

}  // namespace

AnchorGrid::AnchorGrid(double x0, double z0, double dx, double dz, std::size_t nx, std::size_t nz,
                       std::vector<AnchorTemplate> templates, int num_classes)
    : x0_(x0), z0_(z0), dx_(dx), dz_(dz), nx_(nx), nz_(nz), templates_(std::move(templates)),
      num_classes_(num_classes) {}

Vec2 AnchorGrid::position_center(std::size_t position) const {
  const std::size_t ix = position % nx_;
  const std::size_t iz = position / nx_;
  return {x0_ + (static_cast<double>(ix) + 0.5) * dx_, z0_ + (static_cast<double>(iz) + 0.5) * dz_};
}

Box3D AnchorGrid::anchor_box(std::size_t anchor) const {
  return anchor_box(position_of(anchor), template_of(anchor));
}

Box3D AnchorGrid::anchor_box(std::size_t position, std::size_t a) const {
  const Vec2 c = position_center(position);
  const AnchorTemplate& t = templates_[a];
  return {c.x, t.cy, c.z, t.l, t.w, t.h, t.yaw};
}

AnchorGrid build_anchor_grid(const AnchorGridConfig& config) {
  const std::size_t nx = cell_count(config.x_range[0], config.x_range[1], config.cell[0], "x");
  const std::size_t nz = cell_count(config.z_range[0], config.z_range[1], config.cell[1], "z");
  if (config.classes.empty()) throw std::invalid_argument("anchor grid: no class templates");
  if (config.n_rotations < 1) throw std::invalid_argument("anchor grid: n_rotations must be >= 1");

  std::vector<AnchorTemplate> templates;
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    const ClassTemplate& ct = config.classes[c];
    if (!(ct.l > 0.0 && ct.w > 0.0 && ct.h > 0.0)) {
      throw std::invalid_argument("anchor grid: template sizes must be positive");
    }
    for (int r = 0; r < config.n_rotations; ++r) {
      const double yaw = static_cast<double>(r) * std::numbers::pi / config.n_rotations;
      templates.push_back({static_cast<int>(c), ct.l, ct.w, ct.h, yaw, ct.cy});
    }
  }
  return AnchorGrid(config.x_range[0], config.z_range[0], config.cell[0], config.cell[1], nx, nz,
                    std::move(templates), static_cast<int>(config.classes.size()));
}

BoxDelta encode_box(const Box3D& box, const Box3D& anchor) {
  validate_box(box);
  validate_box(anchor);
  const double d = anchor_diagonal(anchor);
  return {(box.cx - anchor.cx) / d,
          (box.cy - anchor.cy) / anchor.h,
          (box.cz - anchor.cz) / d,
          std::log(box.l / anchor.l),
          std::log(box.w / anchor.w),
          std::log(box.h / anchor.h),
          wrap_angle(box.yaw - anchor.yaw)};
}

Box3D align_heading(const Box3D& box, double ref_yaw) {
  Box3D out = box;
  const double d = wrap_angle(box.yaw - ref_yaw);
  if (d > 0.5 * std::numbers::pi) {
    out.yaw = wrap_angle(box.yaw - std::numbers::pi);
  } else if (d <= -0.5 * std::numbers::pi) {
    out.yaw = wrap_angle(box.yaw + std::numbers::pi);
  }
  return out;
}

Box3D decode_box(const BoxDelta& delta, const Box3D& anchor) {
  DecodeFlags flags;
  return decode_box(delta, anchor, flags);
}

Box3D decode_box(const BoxDelta& delta, const Box3D& anchor, DecodeFlags& flags) {
  const double d = anchor_diagonal(anchor);
  auto size = [&](double base, double log_ratio) {
    const double v = base * std::exp(log_ratio);
    if (!(v <= kMaxDecodedSize)) {
      flags.size_clamped = true;
      return kMaxDecodedSize;
    }
    return v;
  };
  Box3D out;
  out.cx = anchor.cx + delta.dx * d;
  out.cy = anchor.cy + delta.dy * anchor.h;
  out.cz = anchor.cz + delta.dz * d;
  out.l = size(anchor.l, delta.dl);
  out.w = size(anchor.w, delta.dw);
  out.h = size(anchor.h, delta.dh);
  out.yaw = wrap_angle(anchor.yaw + delta.dyaw);
  return out;
}

std::array<double, 7> decode_jacobian_diagonal(const BoxDelta& delta, const Box3D& anchor) {
  const double d = anchor_diagonal(anchor);
  auto dsize = [](double base, double log_ratio) {
    const double v = base * std::exp(log_ratio);
    return v <= kMaxDecodedSize ? v : 0.0;
  };
  return {d, anchor.h, d, dsize(anchor.l, delta.dl), dsize(anchor.w, delta.dw),
          dsize(anchor.h, delta.dh), 1.0};
}

Assignment assign_targets(const AnchorGrid& grid, std::span<const GroundTruth> gts,
                          const AssignConfig& config) {
  const std::size_t n_anchors = grid.num_anchors();
  const std::size_t k_a = grid.anchors_per_position();
  Assignment out;
  out.labels.assign(n_anchors, AnchorLabel::kNegative);
  out.gt_index.assign(n_anchors, -1);
  out.max_iou.assign(n_anchors, 0.0);
  std::vector<int> best_gt(n_anchors, -1);

  auto thresholds_for = [&](int cls) {
    if (cls >= 0 && static_cast<std::size_t>(cls) < config.thresholds.size()) {
      return config.thresholds[cls];
    }
    return ClassThresholds{};
  };

  std::vector<std::size_t> forced(gts.size(), n_anchors);
  std::vector<double> forced_iou(gts.size(), 0.0);

  for (std::size_t g = 0; g < gts.size(); ++g) {
    const GroundTruth& gt = gts[g];
    double template_reach = 0.0;
    for (const AnchorTemplate& t : grid.templates()) {
      if (t.class_id == gt.class_id) template_reach = std::max(template_reach, 0.5 * std::hypot(t.l, t.w));
    }
    const double reach = 0.5 * std::hypot(gt.box.l, gt.box.w) + template_reach;
    const Vec2 origin = grid.position_center(0);
    const auto lo_x = static_cast<long>(std::floor((gt.box.cx - reach - origin.x) / grid.cell_dx()));
    const auto hi_x = static_cast<long>(std::ceil((gt.box.cx + reach - origin.x) / grid.cell_dx()));
    const auto lo_z = static_cast<long>(std::floor((gt.box.cz - reach - origin.z) / grid.cell_dz()));
    const auto hi_z = static_cast<long>(std::ceil((gt.box.cz + reach - origin.z) / grid.cell_dz()));
    const long nx = static_cast<long>(grid.nx());
    const long nz = static_cast<long>(grid.nz());

    for (long iz = std::max(0L, lo_z); iz <= std::min(nz - 1, hi_z); ++iz) {
      for (long ix = std::max(0L, lo_x); ix <= std::min(nx - 1, hi_x); ++ix) {
        const std::size_t pos = static_cast<std::size_t>(iz * nx + ix);
        for (std::size_t a = 0; a < k_a; ++a) {
          if (grid.templates()[a].class_id != gt.class_id) continue;
          const std::size_t idx = pos * k_a + a;
          const double iou = iou_bev(grid.anchor_box(pos, a), gt.box);
          if (iou > out.max_iou[idx]) {
            out.max_iou[idx] = iou;
            best_gt[idx] = static_cast<int>(g);
          }
          // Strict comparison keeps the lowest anchor index among ties because
          // indices are visited in ascending order.
          if (iou > forced_iou[g]) {
            forced_iou[g] = iou;
            forced[g] = idx;
          }
        }
      }
    }
  }

  for (std::size_t i = 0; i < n_anchors; ++i) {
    if (best_gt[i] < 0) continue;
    const ClassThresholds th = thresholds_for(gts[best_gt[i]].class_id);
    if (out.max_iou[i] >= th.pos) {
      out.labels[i] = AnchorLabel::kPositive;
      out.gt_index[i] = best_gt[i];
    } else if (out.max_iou[i] >= th.neg) {
      out.labels[i] = AnchorLabel::kIgnore;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (forced[g] == n_anchors) continue;
    const std::size_t idx = forced[g];
    // An anchor that is the best match of several GTs keeps the one it overlaps most.
    if (out.labels[idx] == AnchorLabel::kPositive && out.gt_index[idx] != static_cast<int>(g) &&
        out.gt_index[idx] >= 0) {
      const double current = iou_bev(grid.anchor_box(idx), gts[out.gt_index[idx]].box);
      if (current >= forced_iou[g]) continue;
    }
    out.labels[idx] = AnchorLabel::kPositive;
    out.gt_index[idx] = static_cast<int>(g);
  }

  for (std::size_t i = 0; i < n_anchors; ++i) {
    if (out.labels[i] == AnchorLabel::kPositive) out.positives.push_back(i);
  }
  out.n_pos = out.positives.size();
  out.foreground = foreground_mask(grid, gts, config.fg_dilation);
  out.m_fore = static_cast<std::size_t>(std::count(out.foreground.begin(), out.foreground.end(), 1));
  return out;
}

std::vector<std::uint8_t> foreground_mask(const AnchorGrid& grid, std::span<const GroundTruth> gts,
                                          double dilation) {
  if (!(dilation >= 0.0)) throw std::invalid_argument("foreground_mask: dilation must be >= 0");
  std::vector<std::uint8_t> mask(grid.num_positions(), 0);
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const Vec2 c = grid.position_center(p);
    for (const GroundTruth& gt : gts) {
      if (footprint_contains(gt.box, c.x, c.z, dilation)) {
        mask[p] = 1;
        break;
      }
    }
  }
  return mask;
}

}  // namespace xdistill
