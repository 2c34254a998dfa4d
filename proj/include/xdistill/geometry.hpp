#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace xdistill {

/// Oriented 3D box in camera coordinates: x right, y down, z forward.
/// The footprint lives in the (x, z) plane; `yaw` rotates it about y.
struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;

  static constexpr std::size_t kNumParams = 7;

  std::array<double, kNumParams> to_array() const { return {cx, cy, cz, l, w, h, yaw}; }
  static Box3D from_array(const std::array<double, kNumParams>& p) {
    return {p[0], p[1], p[2], p[3], p[4], p[5], p[6]};
  }
  double volume() const { return l * w * h; }

  bool operator==(const Box3D&) const = default;
};

/// Throws std::invalid_argument unless every size is positive and all fields are finite.
void validate_box(const Box3D& box);

struct Vec2 {
  double x = 0.0;
  double z = 0.0;
};

/// Fixed-capacity convex polygon in the BEV plane, counter-clockwise.
class ConvexPolygon2D {
 public:
  static constexpr std::size_t kCapacity = 16;

  ConvexPolygon2D() = default;
  ConvexPolygon2D(std::initializer_list<Vec2> pts);

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  const Vec2& operator[](std::size_t i) const { return pts_[i]; }
  Vec2& operator[](std::size_t i) { return pts_[i]; }
  const Vec2* begin() const { return pts_.data(); }
  const Vec2* end() const { return pts_.data() + size_; }

  void push_back(const Vec2& p);
  void clear() { size_ = 0; }

 private:
  std::array<Vec2, kCapacity> pts_{};
  std::size_t size_ = 0;
};

/// Maps theta into (-pi, pi]. Throws std::invalid_argument on non-finite input.
double wrap_angle(double theta);

/// Footprint rectangle (l along the heading, w across it), CCW.
ConvexPolygon2D bev_polygon(const Box3D& box);

/// Sutherland-Hodgman clip of `subject` against convex `clip`. Vertices closer
/// than 1e-9 m are merged and collinear vertices dropped; fewer than three
/// surviving vertices yields the empty polygon.
ConvexPolygon2D convex_clip(const ConvexPolygon2D& subject, const ConvexPolygon2D& clip);

/// Shoelace area; 0 for fewer than three vertices.
double polygon_area(const ConvexPolygon2D& poly);

/// True when (x, z) lies inside the footprint of `box` grown by `margin` on every side.
bool footprint_contains(const Box3D& box, double x, double z, double margin = 0.0);

struct IouResult {
  double iou = 0.0;
  double intersection = 0.0;
  double union_volume = 0.0;
  bool degenerate = false;  // union below 1e-12, iou reported as 0
};

/// Exact rotated 3D IoU (BEV polygon overlap times vertical interval overlap).
IouResult iou3d_detailed(const Box3D& a, const Box3D& b);
double iou3d(const Box3D& a, const Box3D& b);

/// Rotated IoU of the footprints only.
double iou_bev(const Box3D& a, const Box3D& b);

struct MonteCarloIou {
  double iou = 0.0;
  double std_error = 0.0;
  std::size_t union_hits = 0;
  std::size_t samples = 0;
};

/// Independent estimate by uniform sampling in the axis-aligned bounds of both
/// boxes with point-in-oriented-box tests. Deterministic in `seed`.
MonteCarloIou iou3d_mc_oracle(const Box3D& a, const Box3D& b, std::size_t n_samples,
                              std::uint64_t seed);

struct FdSteps {
  double center = 1e-3;  // meters
  double size = 1e-3;    // meters
  double yaw = 1e-3;     // radians

  double for_param(std::size_t i) const { return i < 3 ? center : (i < 6 ? size : yaw); }
};

struct IouGradient {
  std::array<double, Box3D::kNumParams> grad{};
  bool size_clamped = false;  // a perturbed size hit the 1e-6 m floor
  bool clipped = false;       // a component exceeded 10 / step and was clipped
  bool non_smooth = false;    // one-sided differences disagree (contact or kink)
};

/// Central differences of iou3d(a, b) with respect to the seven parameters of
/// `a`; `b` is held constant.
IouGradient iou3d_grad_fd(const Box3D& a, const Box3D& b, const FdSteps& steps = {});

}  // namespace xdistill
