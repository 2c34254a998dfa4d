#include "xdistill/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace xdistill {
namespace {

constexpr double kMergeTol = 1e-9;
constexpr double kDegenerateUnion = 1e-12;
constexpr double kMinSize = 1e-6;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.z - o.z) - (a.z - o.z) * (b.x - o.x);
}

Vec2 lerp_on_edge(const Vec2& p, const Vec2& q, double dp, double dq) {
  const double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.z + t * (q.z - p.z)};
}

// Drops near-duplicate and collinear vertices; collapses to empty below a triangle.
ConvexPolygon2D cleanup(const ConvexPolygon2D& in) {
  ConvexPolygon2D dedup;
  for (const Vec2& p : in) {
    if (!dedup.empty()) {
      const Vec2& last = dedup[dedup.size() - 1];
      if (std::hypot(p.x - last.x, p.z - last.z) < kMergeTol) continue;
    }
    dedup.push_back(p);
  }
  while (dedup.size() > 1) {
    const Vec2& first = dedup[0];
    const Vec2& last = dedup[dedup.size() - 1];
    if (std::hypot(first.x - last.x, first.z - last.z) >= kMergeTol) break;
    ConvexPolygon2D trimmed;
    for (std::size_t i = 0; i + 1 < dedup.size(); ++i) trimmed.push_back(dedup[i]);
    dedup = trimmed;
  }
  if (dedup.size() < 3) return {};

  ConvexPolygon2D out;
  const std::size_t n = dedup.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& prev = dedup[(i + n - 1) % n];
    const Vec2& cur = dedup[i];
    const Vec2& next = dedup[(i + 1) % n];
    const double base = std::hypot(next.x - prev.x, next.z - prev.z);
    if (base > 0.0 && std::abs(cross(prev, cur, next)) / base < kMergeTol) continue;
    out.push_back(cur);
  }
  if (out.size() < 3) return {};
  return out;
}

bool lexicographically_less(const Box3D& a, const Box3D& b) {
  const auto pa = a.to_array();
  const auto pb = b.to_array();
  return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
}

double vertical_overlap(const Box3D& a, const Box3D& b) {
  const double top = std::min(a.cy + 0.5 * a.h, b.cy + 0.5 * b.h);
  const double bottom = std::max(a.cy - 0.5 * a.h, b.cy - 0.5 * b.h);
  return std::max(0.0, top - bottom);
}

// Footprint intersection area, evaluated in a frame centred between the boxes.
double footprint_intersection(const Box3D& a, const Box3D& b) {
  const double dx = a.cx - b.cx;
  const double dz = a.cz - b.cz;
  const double reach = 0.5 * (std::hypot(a.l, a.w) + std::hypot(b.l, b.w));
  if (dx * dx + dz * dz >= reach * reach) return 0.0;

  const double ox = 0.5 * (a.cx + b.cx);
  const double oz = 0.5 * (a.cz + b.cz);
  Box3D la = a;
  Box3D lb = b;
  la.cx -= ox;
  la.cz -= oz;
  lb.cx -= ox;
  lb.cz -= oz;
  return polygon_area(convex_clip(bev_polygon(la), bev_polygon(lb)));
}

}  // namespace

void validate_box(const Box3D& box) {
  for (double v : box.to_array()) {
    if (!std::isfinite(v)) throw std::invalid_argument("box has a non-finite field");
  }
  if (!(box.l > 0.0 && box.w > 0.0 && box.h > 0.0)) {
    throw std::invalid_argument("box sizes must be positive");
  }
}

ConvexPolygon2D::ConvexPolygon2D(std::initializer_list<Vec2> pts) {
  for (const Vec2& p : pts) push_back(p);
}

void ConvexPolygon2D::push_back(const Vec2& p) {
  if (size_ == kCapacity) throw std::length_error("ConvexPolygon2D capacity exceeded");
  pts_[size_++] = p;
}

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("wrap_angle: non-finite angle");
  constexpr double kPi = std::numbers::pi;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  if (theta > -kPi && theta <= kPi) return theta;
  double r = std::fmod(theta + kPi, kTwoPi);
  if (r <= 0.0) r += kTwoPi;
  return r - kPi;
}

ConvexPolygon2D bev_polygon(const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = 0.5 * box.l;
  const double hw = 0.5 * box.w;
  // Local corners in CCW order; the map (u, v) -> (c u + s v, -s u + c v) has
  // determinant +1, so orientation is preserved.
  const std::array<std::array<double, 2>, 4> local = {{{hl, -hw}, {hl, hw}, {-hl, hw}, {-hl, -hw}}};
  ConvexPolygon2D poly;
  for (const auto& [u, v] : local) {
    poly.push_back({box.cx + c * u + s * v, box.cz - s * u + c * v});
  }
  return poly;
}

ConvexPolygon2D convex_clip(const ConvexPolygon2D& subject, const ConvexPolygon2D& clip) {
  if (subject.size() < 3 || clip.size() < 3) return {};
  ConvexPolygon2D current = subject;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !current.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % m];
    ConvexPolygon2D next;
    const std::size_t n = current.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& prev = current[(i + n - 1) % n];
      const Vec2& cur = current[i];
      const double d_prev = cross(a, b, prev);
      const double d_cur = cross(a, b, cur);
      if (d_cur >= 0.0) {
        if (d_prev < 0.0) next.push_back(lerp_on_edge(prev, cur, d_prev, d_cur));
        next.push_back(cur);
      } else if (d_prev >= 0.0) {
        next.push_back(lerp_on_edge(prev, cur, d_prev, d_cur));
      }
    }
    current = cleanup(next);
  }
  return current;
}

double polygon_area(const ConvexPolygon2D& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    twice += p.x * q.z - q.x * p.z;
  }
  return std::max(0.0, 0.5 * twice);
}

bool footprint_contains(const Box3D& box, double x, double z, double margin) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double dx = x - box.cx;
  const double dz = z - box.cz;
  const double u = c * dx - s * dz;
  const double v = s * dx + c * dz;
  return std::abs(u) <= 0.5 * box.l + margin && std::abs(v) <= 0.5 * box.w + margin;
}

IouResult iou3d_detailed(const Box3D& a_in, const Box3D& b_in) {
  validate_box(a_in);
  validate_box(b_in);
  IouResult r;
  if (a_in == b_in) {
    r.iou = 1.0;
    r.intersection = r.union_volume = a_in.volume();
    return r;
  }
  // Canonical argument order makes the result bit-identical under swapping.
  const bool swap = lexicographically_less(b_in, a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;

  const double dy = vertical_overlap(a, b);
  const double inter = dy > 0.0 ? footprint_intersection(a, b) * dy : 0.0;
  const double uni = a.volume() + b.volume() - inter;
  r.intersection = inter;
  r.union_volume = uni;
  if (uni < kDegenerateUnion) {
    r.degenerate = true;
    return r;
  }
  r.iou = std::clamp(inter / uni, 0.0, 1.0);
  return r;
}

double iou3d(const Box3D& a, const Box3D& b) { return iou3d_detailed(a, b).iou; }

double iou_bev(const Box3D& a_in, const Box3D& b_in) {
  validate_box(a_in);
  validate_box(b_in);
  if (a_in.cx == b_in.cx && a_in.cz == b_in.cz && a_in.l == b_in.l && a_in.w == b_in.w &&
      a_in.yaw == b_in.yaw) {
    return 1.0;
  }
  const bool swap = lexicographically_less(b_in, a_in);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  const double inter = footprint_intersection(a, b);
  const double uni = a.l * a.w + b.l * b.w - inter;
  if (uni < kDegenerateUnion) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

MonteCarloIou iou3d_mc_oracle(const Box3D& a, const Box3D& b, std::size_t n_samples,
                              std::uint64_t seed) {
  if (n_samples == 0) throw std::invalid_argument("iou3d_mc_oracle: n_samples must be >= 1");
  validate_box(a);
  validate_box(b);

  double x0 = INFINITY, x1 = -INFINITY, z0 = INFINITY, z1 = -INFINITY;
  for (const Box3D* box : {&a, &b}) {
    const double c = std::cos(box->yaw);
    const double s = std::sin(box->yaw);
    for (double su : {-0.5, 0.5}) {
      for (double sv : {-0.5, 0.5}) {
        const double u = su * box->l;
        const double v = sv * box->w;
        const double x = box->cx + c * u + s * v;
        const double z = box->cz - s * u + c * v;
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
        z0 = std::min(z0, z);
        z1 = std::max(z1, z);
      }
    }
  }
  const double y0 = std::min(a.cy - 0.5 * a.h, b.cy - 0.5 * b.h);
  const double y1 = std::max(a.cy + 0.5 * a.h, b.cy + 0.5 * b.h);

  auto inside = [](const Box3D& box, double x, double y, double z) {
    if (std::abs(y - box.cy) > 0.5 * box.h) return false;
    return footprint_contains(box, x, z);
  };

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1), uz(z0, z1);
  std::size_t both = 0, any = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x = ux(rng), y = uy(rng), z = uz(rng);
    const bool in_a = inside(a, x, y, z);
    const bool in_b = inside(b, x, y, z);
    both += (in_a && in_b) ? 1 : 0;
    any += (in_a || in_b) ? 1 : 0;
  }
  MonteCarloIou out;
  out.samples = n_samples;
  out.union_hits = any;
  if (any > 0) {
    out.iou = static_cast<double>(both) / static_cast<double>(any);
    out.std_error = std::sqrt(out.iou * (1.0 - out.iou) / static_cast<double>(any));
  }
  return out;
}

IouGradient iou3d_grad_fd(const Box3D& a, const Box3D& b, const FdSteps& steps) {
  validate_box(a);
  validate_box(b);
  IouGradient out;
  const double f0 = iou3d(a, b);
  const auto base = a.to_array();
  for (std::size_t i = 0; i < Box3D::kNumParams; ++i) {
    const double step = steps.for_param(i);
    if (!(step > 0.0)) throw std::invalid_argument("iou3d_grad_fd: steps must be positive");
    auto plus = base;
    auto minus = base;
    plus[i] += step;
    minus[i] -= step;
    if (i >= 3 && i < 6 && minus[i] < kMinSize) {
      minus[i] = kMinSize;
      out.size_clamped = true;
    }
    const double fp = iou3d(Box3D::from_array(plus), b);
    const double fm = iou3d(Box3D::from_array(minus), b);
    double g = (fp - fm) / (plus[i] - minus[i]);

    const double fwd = (fp - f0) / (plus[i] - base[i]);
    const double bwd = (f0 - fm) / (base[i] - minus[i]);
    if (std::abs(fwd - bwd) > std::max(0.1 * std::max(std::abs(fwd), std::abs(bwd)), 0.05)) {
      out.non_smooth = true;
    }
    const double limit = 10.0 / step;
    if (std::abs(g) > limit) {
      g = std::copysign(limit, g);
      out.clipped = true;
    }
    out.grad[i] = g;
  }
  return out;
}

}  // namespace xdistill
