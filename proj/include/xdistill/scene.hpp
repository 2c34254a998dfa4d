#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/geometry.hpp"
#include "xdistill/random.hpp"

namespace xdistill {

/// Per-object observation error of a sensor/model pair.
struct NoiseProfile {
  double center_sigma = 0.0;      // metres
  double size_sigma = 0.0;        // relative (log-normal)
  double yaw_sigma = 0.0;         // radians
  double score_corruption = 0.0;  // probability the reported class is resampled
  double depth_bias = 0.0;        // extra depth std, metres per metre of range

  void validate() const;
};

struct FeatureConfig {
  double radius = 3.0;            // positions farther from every object see zeros
  double objectness_sigma = 1.0;  // width of the objectness bump, metres
  double position_noise = 0.02;   // iid jitter on every feature of an active position
};

struct SceneConfig {
  std::vector<int> min_count;  // per class
  std::vector<int> max_count;
  double size_jitter = 0.08;   // log-normal sigma around the class template
  double min_gap = 0.3;        // clearance between footprints, metres
  double edge_margin = 0.5;    // footprints stay this far inside the range
  FeatureConfig features{};
  NoiseProfile student{};      // modality noise of the student's sensor
};

/// What a sensor reports for one ground-truth object.
struct Observation {
  Box3D box;
  int class_id = 0;
};

/// Dense per-position feature map. Only `active` positions can be nonzero.
struct FeatureMap {
  static constexpr std::size_t kDim = 16;
  std::size_t positions = 0;
  std::vector<double> values;            // positions * kDim
  std::vector<std::uint8_t> active;      // per position
  std::vector<Observation> observations;  // per GT, as seen by this sensor

  const double* row(std::size_t p) const { return values.data() + p * kDim; }
};

struct Scene {
  std::uint64_t seed = 0;
  std::vector<GroundTruth> gts;
  FeatureMap features;  // student view
};

class SceneTooDense : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejection-samples non-overlapping objects inside the grid's range and
/// builds the student's feature view. Fully determined by `seed`.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config, const AnchorGrid& grid);

/// Ground truth only (no features); the layout half of generate_scene.
std::vector<GroundTruth> sample_ground_truth(std::uint64_t seed, const SceneConfig& config,
                                             const AnchorGrid& grid);

/// Observes `gts` through `profile` and embeds the result on the grid.
/// `stream` selects an independent noise stream for the same scene seed.
FeatureMap observe(std::uint64_t seed, std::uint64_t stream, std::span<const GroundTruth> gts,
                   const AnchorGrid& grid, const FeatureConfig& features, const NoiseProfile& profile);

/// Draws one noisy copy of `gt` according to `profile`; the class is resampled
/// uniformly with probability `score_corruption`.
Observation perturb(const GroundTruth& gt, const NoiseProfile& profile, int num_classes, Rng& rng);

/// Maps yaw into [-pi/4, 3pi/4), the range covered by the two anchor rotations.
double canonical_yaw(double yaw);

inline constexpr std::uint64_t kStudentStream = 2;
inline constexpr std::uint64_t kTeacherStream = 3;

}  // namespace xdistill
