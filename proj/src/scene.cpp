#include "xdistill/scene.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace xdistill {
namespace {

constexpr std::uint64_t kLayoutStream = 1;
constexpr int kMaxRejections = 10000;

struct GridBounds {
  double x0, x1, z0, z1;
};

GridBounds bounds_of(const AnchorGrid& grid) {
  const Vec2 first = grid.position_center(0);
  const double x0 = first.x - 0.5 * grid.cell_dx();
  const double z0 = first.z - 0.5 * grid.cell_dz();
  return {x0, x0 + grid.cell_dx() * static_cast<double>(grid.nx()), z0,
          z0 + grid.cell_dz() * static_cast<double>(grid.nz())};
}

const AnchorTemplate& template_for_class(const AnchorGrid& grid, int cls) {
  for (const AnchorTemplate& t : grid.templates()) {
    if (t.class_id == cls) return t;
  }
  throw std::invalid_argument("no anchor template for class " + std::to_string(cls));
}

bool footprints_overlap(const Box3D& a, const Box3D& b, double gap) {
  Box3D ga = a, gb = b;
  ga.l += gap;
  ga.w += gap;
  gb.l += gap;
  gb.w += gap;
  const double reach = 0.5 * (std::hypot(ga.l, ga.w) + std::hypot(gb.l, gb.w));
  if (std::hypot(a.cx - b.cx, a.cz - b.cz) >= reach) return false;
  return polygon_area(convex_clip(bev_polygon(ga), bev_polygon(gb))) > 0.0;
}

}  // namespace

void NoiseProfile::validate() const {
  for (double v : {center_sigma, size_sigma, yaw_sigma, score_corruption, depth_bias}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("noise profile entries must be >= 0");
  }
  if (score_corruption > 1.0) throw std::invalid_argument("score_corruption must be <= 1");
}

double canonical_yaw(double yaw) {
  constexpr double kPi = std::numbers::pi;
  double r = std::fmod(yaw + 0.25 * kPi, kPi);
  if (r < 0.0) r += kPi;
  if (r >= kPi) r -= kPi;
  return r - 0.25 * kPi;
}

Observation perturb(const GroundTruth& gt, const NoiseProfile& profile, int num_classes, Rng& rng) {
  const Box3D& b = gt.box;
  const double depth_sigma = std::hypot(profile.center_sigma, profile.depth_bias * std::abs(b.cz));
  Observation o;
  o.box.cx = b.cx + normal(rng, profile.center_sigma);
  o.box.cy = b.cy + normal(rng, 0.5 * profile.center_sigma);
  o.box.cz = b.cz + normal(rng, depth_sigma);
  o.box.l = b.l * std::exp(normal(rng, profile.size_sigma));
  o.box.w = b.w * std::exp(normal(rng, profile.size_sigma));
  o.box.h = b.h * std::exp(normal(rng, profile.size_sigma));
  o.box.yaw = wrap_angle(b.yaw + normal(rng, profile.yaw_sigma));
  const double u = uniform(rng, 0.0, 1.0);
  const int resampled = std::uniform_int_distribution<int>(0, num_classes - 1)(rng);
  o.class_id = u < profile.score_corruption ? resampled : gt.class_id;
  return o;
}

std::vector<GroundTruth> sample_ground_truth(std::uint64_t seed, const SceneConfig& config,
                                             const AnchorGrid& grid) {
  const int num_classes = grid.num_classes();
  if (config.min_count.size() != static_cast<std::size_t>(num_classes) ||
      config.max_count.size() != static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("scene config: object counts must be given for every class");
  }
  Rng rng = make_rng(seed, kLayoutStream);
  const GridBounds gb = bounds_of(grid);
  const double m = config.edge_margin;

  std::vector<GroundTruth> gts;
  int rejections = 0;
  for (int cls = 0; cls < num_classes; ++cls) {
    const int lo = config.min_count[cls];
    const int hi = config.max_count[cls];
    if (lo < 0 || hi < lo) throw std::invalid_argument("scene config: invalid object count range");
    const int count = std::uniform_int_distribution<int>(lo, hi)(rng);
    const AnchorTemplate& t = template_for_class(grid, cls);
    for (int k = 0; k < count; ++k) {
      while (true) {
        GroundTruth g;
        g.class_id = cls;
        g.box.l = t.l * std::exp(normal(rng, config.size_jitter));
        g.box.w = t.w * std::exp(normal(rng, config.size_jitter));
        g.box.h = t.h * std::exp(normal(rng, config.size_jitter));
        g.box.cy = t.cy + normal(rng, 0.05);
        g.box.yaw = uniform(rng, -0.25 * std::numbers::pi, 0.75 * std::numbers::pi);
        g.box.cx = uniform(rng, gb.x0, gb.x1);
        g.box.cz = uniform(rng, gb.z0, gb.z1);

        bool ok = true;
        for (const Vec2& v : bev_polygon(g.box)) {
          if (v.x < gb.x0 + m || v.x > gb.x1 - m || v.z < gb.z0 + m || v.z > gb.z1 - m) ok = false;
        }
        for (const GroundTruth& other : gts) {
          if (!ok) break;
          if (footprints_overlap(g.box, other.box, config.min_gap)) ok = false;
        }
        if (ok) {
          gts.push_back(g);
          break;
        }
        if (++rejections >= kMaxRejections) {
          throw SceneTooDense("scene " + std::to_string(seed) + ": placement rejected " +
                              std::to_string(kMaxRejections) + " times");
        }
      }
    }
  }
  return gts;
}

FeatureMap observe(std::uint64_t seed, std::uint64_t stream, std::span<const GroundTruth> gts,
                   const AnchorGrid& grid, const FeatureConfig& fc, const NoiseProfile& profile) {
  profile.validate();
  constexpr std::size_t F = FeatureMap::kDim;
  const int num_classes = grid.num_classes();
  if (num_classes > 3) throw std::invalid_argument("feature embedding supports at most 3 classes");

  Rng rng = make_rng(seed, stream);
  FeatureMap fm;
  fm.positions = grid.num_positions();
  fm.values.assign(fm.positions * F, 0.0);
  fm.active.assign(fm.positions, 0);
  for (const GroundTruth& g : gts) fm.observations.push_back(perturb(g, profile, num_classes, rng));
  if (fm.observations.empty()) return fm;

  Rng jitter = make_rng(seed, stream * 1000 + 7);
  const GridBounds gb = bounds_of(grid);
  const double z_mid = 0.5 * (gb.z0 + gb.z1);
  const double z_half = 0.5 * (gb.z1 - gb.z0);
  const double r2max = fc.radius * fc.radius;
  const double inv2s2 = 1.0 / (2.0 * fc.objectness_sigma * fc.objectness_sigma);

  for (std::size_t p = 0; p < fm.positions; ++p) {
    const Vec2 c = grid.position_center(p);
    std::size_t nearest = 0;
    double best = INFINITY;
    for (std::size_t k = 0; k < fm.observations.size(); ++k) {
      const Box3D& o = fm.observations[k].box;
      const double d2 = (o.cx - c.x) * (o.cx - c.x) + (o.cz - c.z) * (o.cz - c.z);
      if (d2 < best) {
        best = d2;
        nearest = k;
      }
    }
    if (best > r2max) continue;

    const Observation& ob = fm.observations[nearest];
    const Box3D& o = ob.box;
    const double phi = std::exp(-best * inv2s2);
    const double yaw = canonical_yaw(o.yaw);
    const double c2 = std::cos(2.0 * yaw);
    double* f = fm.values.data() + p * F;
    f[0] = phi;
    f[1 + ob.class_id] = phi;
    f[4 + ob.class_id] = phi * c2;
    f[7] = o.cx - c.x;
    f[8] = o.cz - c.z;
    f[9] = o.cy;
    f[10] = std::log(o.l);
    f[11] = std::log(o.w);
    f[12] = std::log(o.h);
    f[13] = yaw;
    f[14] = 1.0;
    f[15] = (c.z - z_mid) / z_half;
    for (std::size_t i = 0; i < F; ++i) f[i] += normal(jitter, fc.position_noise);
    fm.active[p] = 1;
  }
  return fm;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config, const AnchorGrid& grid) {
  Scene s;
  s.seed = seed;
  s.gts = sample_ground_truth(seed, config, grid);
  s.features = observe(seed, kStudentStream, s.gts, grid, config.features, config.student);
  return s;
}

}  // namespace xdistill
