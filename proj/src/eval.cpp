#include "xdistill/eval.hpp"

#include <algorithm>
#include <stdexcept>

#include "xdistill/teacher.hpp"

namespace xdistill {
namespace {

bool score_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.anchor < b.anchor;
}

struct Scored {
  double score;
  bool tp;
};

}  // namespace

std::vector<std::size_t> greedy_nms(std::span<const Box3D> boxes, double nms_iou) {
  std::vector<std::size_t> keep;
  std::vector<std::uint8_t> suppressed(boxes.size(), 0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      if (!suppressed[j] && iou_bev(boxes[i], boxes[j]) > nms_iou) suppressed[j] = 1;
    }
  }
  return keep;
}

std::vector<Detection> decode_and_nms(const ModelOutputs& outputs, const AnchorGrid& grid, const NmsConfig& config) {
  if (!(config.score_thr >= 0.0 && config.score_thr <= 1.0)) {
    throw std::invalid_argument("decode_and_nms: score_thr must lie in [0, 1]");
  }
  if (!(config.nms_iou > 0.0 && config.nms_iou <= 1.0)) {
    throw std::invalid_argument("decode_and_nms: nms_iou must lie in (0, 1]");
  }
  if (outputs.deltas.size() != grid.num_anchors() || outputs.logits.num_anchors != grid.num_anchors()) {
    throw std::invalid_argument("decode_and_nms: outputs do not match the anchor grid");
  }
  const std::size_t k_c = outputs.logits.num_classes;
  std::vector<std::vector<Detection>> per_class(k_c);
  for (std::size_t a = 0; a < grid.num_anchors(); ++a) {
    for (std::size_t k = 0; k < k_c; ++k) {
      const double s = sigmoid(outputs.logits.at(a, k));
      if (s < config.score_thr) continue;
      per_class[k].push_back({Box3D{}, static_cast<int>(k), s, a});
    }
  }
  std::vector<Detection> out;
  for (std::vector<Detection>& cand : per_class) {
    std::sort(cand.begin(), cand.end(), score_order);
    if (config.pre_nms_max && cand.size() > config.pre_nms_max) cand.resize(config.pre_nms_max);
    std::vector<Box3D> boxes;
    boxes.reserve(cand.size());
    for (Detection& d : cand) {
      d.box = decode_box(outputs.deltas[d.anchor], grid.anchor_box(d.anchor));
      boxes.push_back(d.box);
    }
    std::vector<std::size_t> keep = greedy_nms(boxes, config.nms_iou);
    if (config.post_nms_max && keep.size() > config.post_nms_max) keep.resize(config.post_nms_max);
    for (std::size_t i : keep) out.push_back(cand[i]);
  }
  return out;
}

ApResult average_precision(std::span<const Frame> frames, int class_id, double iou_thr, IouKind kind,
                           int recall_positions) {
  if (!(iou_thr > 0.0 && iou_thr <= 1.0)) throw std::invalid_argument("average_precision: iou_thr must lie in (0, 1]");
  if (recall_positions != 40 && recall_positions != 11) {
    throw std::invalid_argument("average_precision: recall_positions must be 40 or 11");
  }
  ApResult r;
  if (recall_positions == 40) {
    for (int k = 1; k <= 40; ++k) r.recall_points.push_back(k / 40.0);
  } else {
    for (int k = 0; k <= 10; ++k) r.recall_points.push_back(k / 10.0);
  }

  std::vector<Scored> scored;
  for (const Frame& f : frames) {
    std::vector<const GroundTruth*> gts;
    for (const GroundTruth& g : f.gts) {
      if (g.class_id == class_id) gts.push_back(&g);
    }
    r.num_gt += gts.size();
    std::vector<Detection> dets;
    for (const Detection& d : f.detections) {
      if (d.class_id == class_id) dets.push_back(d);
    }
    std::sort(dets.begin(), dets.end(), score_order);
    std::vector<std::uint8_t> used(gts.size(), 0);
    for (const Detection& d : dets) {
      int best = -1;
      double best_iou = iou_thr;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (used[g]) continue;
        const double iou = kind == IouKind::k3d ? iou3d(d.box, gts[g]->box) : iou_bev(d.box, gts[g]->box);
        if (iou >= best_iou) {
          if (best < 0 || iou > best_iou) {
            best = static_cast<int>(g);
            best_iou = iou;
          }
        }
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = 1;
      scored.push_back({d.score, best >= 0});
    }
  }

  if (r.num_gt == 0) {
    r.empty = scored.empty();
    r.fp = scored.size();
    r.ap = r.empty ? 1.0 : 0.0;
    r.precision.assign(r.recall_points.size(), r.ap);
    return r;
  }

  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    tp += scored[i].tp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(r.num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  r.tp = tp;
  r.fp = scored.size() - tp;
  r.fn = r.num_gt - tp;

  // Suffix maximum gives the interpolated precision envelope.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (double rp : r.recall_points) {
    const auto it = std::lower_bound(recall.begin(), recall.end(), rp - 1e-12);
    const double p = it == recall.end() ? 0.0 : precision[static_cast<std::size_t>(it - recall.begin())];
    r.precision.push_back(p);
    sum += p;
  }
  r.ap = sum / static_cast<double>(r.recall_points.size());
  return r;
}

double ap_r40(std::span<const Detection> detections, std::span<const GroundTruth> gts, int class_id,
              double iou_thr) {
  Frame f{{detections.begin(), detections.end()}, {gts.begin(), gts.end()}};
  return average_precision(std::span<const Frame>(&f, 1), class_id, iou_thr).ap;
}

}  // namespace xdistill
