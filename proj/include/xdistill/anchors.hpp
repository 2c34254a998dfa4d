#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xdistill/geometry.hpp"

namespace xdistill {

/// Per-class anchor shape. `cy` is the vertical centre of the template.
struct ClassTemplate {
  double l = 1.0, w = 1.0, h = 1.0;
  double cy = 0.0;
};

struct AnchorGridConfig {
  std::array<double, 2> x_range{-30.0, 30.0};
  std::array<double, 2> z_range{2.0, 59.6};
  std::array<double, 2> cell{0.8, 0.8};
  std::vector<ClassTemplate> classes;
  int n_rotations = 2;
};

struct AnchorTemplate {
  int class_id = 0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;
  double cy = 0.0;
};

/// Row-major anchor layout: anchor index = (iz * nx + ix) * K_a + a.
class AnchorGrid {
 public:
  AnchorGrid() = default;
  AnchorGrid(double x0, double z0, double dx, double dz, std::size_t nx, std::size_t nz,
             std::vector<AnchorTemplate> templates, int num_classes);

  std::size_t nx() const { return nx_; }
  std::size_t nz() const { return nz_; }
  std::size_t num_positions() const { return nx_ * nz_; }
  std::size_t anchors_per_position() const { return templates_.size(); }
  std::size_t num_anchors() const { return num_positions() * templates_.size(); }
  int num_classes() const { return num_classes_; }
  double cell_dx() const { return dx_; }
  double cell_dz() const { return dz_; }
  const std::vector<AnchorTemplate>& templates() const { return templates_; }

  Vec2 position_center(std::size_t position) const;
  std::size_t position_of(std::size_t anchor) const { return anchor / templates_.size(); }
  std::size_t template_of(std::size_t anchor) const { return anchor % templates_.size(); }
  Box3D anchor_box(std::size_t anchor) const;
  /// Template `a` placed at `position`.
  Box3D anchor_box(std::size_t position, std::size_t a) const;

 private:
  double x0_ = 0.0, z0_ = 0.0, dx_ = 1.0, dz_ = 1.0;
  std::size_t nx_ = 0, nz_ = 0;
  std::vector<AnchorTemplate> templates_;
  int num_classes_ = 0;
};

/// Throws std::invalid_argument for empty grids, unordered ranges or
/// non-positive cells. Templates are class-major: a = class * n_rotations + r.
AnchorGrid build_anchor_grid(const AnchorGridConfig& config);

struct BoxDelta {
  double dx = 0.0, dy = 0.0, dz = 0.0;
  double dl = 0.0, dw = 0.0, dh = 0.0;
  double dyaw = 0.0;

  std::array<double, 7> to_array() const { return {dx, dy, dz, dl, dw, dh, dyaw}; }
  static BoxDelta from_array(const std::array<double, 7>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }
};

BoxDelta encode_box(const Box3D& box, const Box3D& anchor);

/// Same box with yaw shifted by pi if needed so that it lies within pi/2 of
/// `ref_yaw`. The footprint and IoU are unchanged.
Box3D align_heading(const Box3D& box, double ref_yaw);

struct DecodeFlags {
  bool size_clamped = false;
};

/// Inverse of encode_box. Sizes that would exceed 1e6 m are clamped.
Box3D decode_box(const BoxDelta& delta, const Box3D& anchor);
Box3D decode_box(const BoxDelta& delta, const Box3D& anchor, DecodeFlags& flags);

/// Diagonal of d(box params) / d(delta); each box parameter depends on exactly
/// one delta entry.
std::array<double, 7> decode_jacobian_diagonal(const BoxDelta& delta, const Box3D& anchor);

struct GroundTruth {
  Box3D box;
  int class_id = 0;
};

struct ClassThresholds {
  double pos = 0.6;
  double neg = 0.45;
};

struct AssignConfig {
  std::vector<ClassThresholds> thresholds;  // indexed by class; missing entries use defaults
  double fg_dilation = 0.5;
};

enum class AnchorLabel : std::int8_t { kNegative = 0, kPositive = 1, kIgnore = 2 };

struct Assignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> gt_index;  // assigned GT for positives, -1 otherwise
  std::vector<double> max_iou;
  std::vector<std::size_t> positives;  // ascending anchor indices
  std::vector<std::uint8_t> foreground;  // per position
  std::size_t n_pos = 0;
  std::size_t m_fore = 0;

  bool operator==(const Assignment&) const = default;
};

/// SECOND-style matching on rotated BEV IoU against same-class GTs, with every
/// GT force-matched to its best anchor (ties to the lowest index).
Assignment assign_targets(const AnchorGrid& grid, std::span<const GroundTruth> gts,
                          const AssignConfig& config);

/// Positions whose centre lies inside some GT footprint grown by `dilation`.
std::vector<std::uint8_t> foreground_mask(const AnchorGrid& grid, std::span<const GroundTruth> gts,
                                          double dilation);

}  // namespace xdistill
