#pragma once

#include <cstdint>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/detector.hpp"
#include "xdistill/scene.hpp"

namespace xdistill {

/// Shape of the oracle teacher's outputs around each object.
struct TeacherConfig {
  NoiseProfile noise{};
  double anchor_jitter = 0.25;  // per-anchor noise as a fraction of the object-level sigmas
  double radius = 3.0;          // anchors this close to an object carry predictions
  double logit_low = -4.0;      // background / wrong-class logit
  double logit_high = 6.0;      // logit at perfect anchor match and perfect confidence
  double logit_noise = 0.2;
};

struct TeacherPrediction {
  ModelOutputs outputs;
  std::vector<Observation> boxes;  // the teacher's object-level belief, per GT
};

/// Noise-calibrated stand-in for a LiDAR detector. Anchors near an object
/// regress the teacher's (perturbed) box for it; the logit of (anchor, class)
/// grows with the anchor's BEV overlap with that box (relative to the best
/// anchor of the object), scaled by the teacher's own box quality, and only
/// for the class the teacher believes in.
TeacherPrediction teacher_predict(const Scene& scene, const AnchorGrid& grid, const TeacherConfig& config);

double sigmoid(double x);

}  // namespace xdistill
