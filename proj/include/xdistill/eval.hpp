#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xdistill/anchors.hpp"
#include "xdistill/detector.hpp"

namespace xdistill {

struct Detection {
  Box3D box;
  int class_id = 0;
  double score = 0.0;
  std::size_t anchor = 0;
};

struct NmsConfig {
  double score_thr = 0.1;
  double nms_iou = 0.5;
  std::size_t pre_nms_max = 1000;  // per class, 0 = unlimited
  std::size_t post_nms_max = 100;  // per class, 0 = unlimited
};

/// Sigmoid scores per (anchor, class); anchors scoring at least score_thr are
/// decoded and suppressed greedily per class by BEV IoU, score-descending with
/// ties broken by anchor index. Output is sorted the same way, class by class.
std::vector<Detection> decode_and_nms(const ModelOutputs& outputs, const AnchorGrid& grid,
                                      const NmsConfig& config = {});

/// Greedy suppression of already decoded candidates of one class, in the
/// given order. Returns the indices of the survivors.
std::vector<std::size_t> greedy_nms(std::span<const Box3D> boxes, double nms_iou);

enum class IouKind { k3d, kBev };

struct Frame {
  std::vector<Detection> detections;
  std::vector<GroundTruth> gts;
};

struct ApResult {
  double ap = 0.0;
  bool empty = false;  // no GT and no detection of the class anywhere; ap is 1
  std::vector<double> recall_points;
  std::vector<double> precision;  // interpolated precision at each recall point
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t num_gt = 0;
};

/// Average precision over a set of frames. Within each frame detections are
/// matched greedily in score order, each GT at most once, to the unmatched GT
/// with the highest IoU at or above iou_thr. recall_positions = 40 samples
/// recall at k/40 for k = 1..40; 11 samples at k/10 for k = 0..10.
ApResult average_precision(std::span<const Frame> frames, int class_id, double iou_thr,
                           IouKind kind = IouKind::k3d, int recall_positions = 40);

/// Single-frame AP at 40 recall positions.
double ap_r40(std::span<const Detection> detections, std::span<const GroundTruth> gts, int class_id,
              double iou_thr);

}  // namespace xdistill
