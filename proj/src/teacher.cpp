#include "xdistill/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "xdistill/random.hpp"

namespace xdistill {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

TeacherPrediction teacher_predict(const Scene& scene, const AnchorGrid& grid, const TeacherConfig& config) {
  config.noise.validate();
  const std::size_t k_a = grid.anchors_per_position();
  const std::size_t k_c = static_cast<std::size_t>(grid.num_classes());
  const NoiseProfile& nz = config.noise;

  TeacherPrediction pred;
  pred.outputs.logits = LogitMap(grid.num_anchors(), k_a, k_c, config.logit_low);
  pred.outputs.deltas.assign(grid.num_anchors(), BoxDelta{});

  Rng rng = make_rng(scene.seed, kTeacherStream);
  std::vector<double> confidence;
  for (const GroundTruth& g : scene.gts) {
    pred.boxes.push_back(perturb(g, nz, grid.num_classes(), rng));
    confidence.push_back(std::sqrt(iou3d(pred.boxes.back().box, g.box)));
  }
  if (scene.gts.empty()) return pred;

  Rng jitter = make_rng(scene.seed, kTeacherStream * 1000 + 9);
  const double js = config.anchor_jitter;
  const double r2max = config.radius * config.radius;

  // Nearest GT of every position within the radius, and the best overlap any
  // anchor of the believed class reaches with each belief.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> nearest(grid.num_positions(), kNone);
  std::vector<double> best_match(scene.gts.size(), 0.0);
  for (std::size_t p = 0; p < grid.num_positions(); ++p) {
    const Vec2 c = grid.position_center(p);
    double best = INFINITY;
    for (std::size_t g = 0; g < scene.gts.size(); ++g) {
      const Box3D& b = scene.gts[g].box;
      const double d2 = (b.cx - c.x) * (b.cx - c.x) + (b.cz - c.z) * (b.cz - c.z);
      if (d2 < best) {
        best = d2;
        nearest[p] = g;
      }
    }
    if (best > r2max) {
      nearest[p] = kNone;
      continue;
    }
    const Observation& belief = pred.boxes[nearest[p]];
    for (std::size_t a = 0; a < k_a; ++a) {
      if (grid.templates()[a].class_id != belief.class_id) continue;
      best_match[nearest[p]] = std::max(best_match[nearest[p]], iou_bev(grid.anchor_box(p, a), belief.box));
    }
  }

  for (std::size_t p = 0; p < grid.num_positions(); ++p) {
    if (nearest[p] == kNone) continue;
    const Observation& belief = pred.boxes[nearest[p]];
    for (std::size_t a = 0; a < k_a; ++a) {
      const std::size_t anchor = p * k_a + a;
      const Box3D anchor_box = grid.anchor_box(p, a);

      Box3D local = belief.box;
      local.cx += normal(jitter, js * nz.center_sigma);
      local.cy += normal(jitter, js * 0.5 * nz.center_sigma);
      local.cz += normal(jitter, js * std::hypot(nz.center_sigma, nz.depth_bias * std::abs(local.cz)));
      local.l *= std::exp(normal(jitter, js * nz.size_sigma));
      local.w *= std::exp(normal(jitter, js * nz.size_sigma));
      local.h *= std::exp(normal(jitter, js * nz.size_sigma));
      local.yaw = wrap_angle(local.yaw + normal(jitter, js * nz.yaw_sigma));
      pred.outputs.deltas[anchor] = encode_box(align_heading(local, anchor_box.yaw), anchor_box);

      const int anchor_class = grid.templates()[a].class_id;
      // Relative to the best anchor, so that every object has one fully firing anchor.
      const double best_iou = best_match[nearest[p]];
      const double match =
          best_iou > 0.0 ? std::min(1.0, iou_bev(anchor_box, belief.box) / best_iou) * confidence[nearest[p]] : 0.0;
      for (std::size_t k = 0; k < k_c; ++k) {
        double logit = config.logit_low + normal(jitter, config.logit_noise);
        if (static_cast<int>(k) == anchor_class && static_cast<int>(k) == belief.class_id) {
          logit += (config.logit_high - config.logit_low) * match;
        }
        pred.outputs.logits.at(anchor, k) = logit;
      }
    }
  }
  return pred;
}

}  // namespace xdistill
