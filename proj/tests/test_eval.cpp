#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "xdistill/eval.hpp"

using namespace xdistill;

namespace {

Detection det(double x, double z, double score, int cls = 0, std::size_t anchor = 0) {
  return {{x, 0.0, z, 2.0, 1.0, 1.0, 0.0}, cls, score, anchor};
}

GroundTruth gt(double x, double z, int cls = 0) { return {{x, 0.0, z, 2.0, 1.0, 1.0, 0.0}, cls}; }

// Max precision over every operating point whose recall reaches r.
double oracle_ap(const std::vector<std::pair<double, bool>>& ranked, std::size_t num_gt, int positions) {
  std::vector<double> rec, prec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    tp += ranked[i].second;
    rec.push_back(double(tp) / double(num_gt));
    prec.push_back(double(tp) / double(i + 1));
  }
  double sum = 0;
  const int k0 = positions == 40 ? 1 : 0, k1 = positions == 40 ? 40 : 10;
  for (int k = k0; k <= k1; ++k) {
    const double r = double(k) / (positions == 40 ? 40.0 : 10.0);
    double best = 0;
    for (std::size_t i = 0; i < rec.size(); ++i) {
      if (rec[i] >= r - 1e-12) best = std::max(best, prec[i]);
    }
    sum += best;
  }
  return sum / (k1 - k0 + 1);
}

}  // namespace

TEST(AveragePrecision, HandComputedRanking) {
  // TP, FP, TP over two GTs.
  const Frame f{{det(0, 10, 0.9), det(20, 10, 0.8), det(5, 10, 0.7)}, {gt(0, 10), gt(5, 10)}};
  const ApResult r40 = average_precision(std::span(&f, 1), 0, 0.7);
  EXPECT_NEAR(r40.ap, (20.0 + 20.0 * 2.0 / 3.0) / 40.0, 1e-12);
  EXPECT_EQ(r40.tp, 2u);
  EXPECT_EQ(r40.fp, 1u);
  EXPECT_EQ(r40.fn, 0u);
  EXPECT_EQ(r40.recall_points.size(), 40u);
  const ApResult r11 = average_precision(std::span(&f, 1), 0, 0.7, IouKind::k3d, 11);
  EXPECT_NEAR(r11.ap, (6.0 + 5.0 * 2.0 / 3.0) / 11.0, 1e-12);
}

TEST(AveragePrecision, MatchesOracleOnRandomFrames) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    // Well separated GTs so that matching is unambiguous and the oracle only checks the PR integration.
    Frame f;
    const int n_gt = 1 + int(u(rng) * 6);
    for (int g = 0; g < n_gt; ++g) f.gts.push_back(gt(10.0 * g, 20));
    std::vector<std::pair<double, bool>> ranked;
    std::vector<bool> hit(n_gt, false);
    const int n_det = int(u(rng) * 10);
    for (int d = 0; d < n_det; ++d) {
      const double s = u(rng);
      const int g = int(u(rng) * n_gt);
      const bool near = u(rng) < 0.6;
      f.detections.push_back(near ? det(10.0 * g + 0.05, 20, s) : det(10.0 * g + 5, 20, s));
    }
    std::vector<Detection> sorted = f.detections;
    std::sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    for (const Detection& d : sorted) {
      const int g = int(std::lround(d.box.cx / 10.0));
      const bool tp = std::abs(d.box.cx - 10.0 * g) < 1.0 && g < n_gt && !hit[g];
      if (tp) hit[g] = true;
      ranked.push_back({d.score, tp});
    }
    for (int positions : {40, 11}) {
      const ApResult r = average_precision(std::span(&f, 1), 0, 0.7, IouKind::k3d, positions);
      EXPECT_NEAR(r.ap, oracle_ap(ranked, n_gt, positions), 1e-12);
    }
  }
}

TEST(AveragePrecision, AddingTopScoredTruePositiveNeverHurts) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Frame f;
    const int n_gt = 2 + int(u(rng) * 5);
    for (int g = 0; g < n_gt; ++g) f.gts.push_back(gt(10.0 * g, 20));
    // Detections avoid GT 0 so that it is free for the added TP.
    for (int d = 0; d < 8; ++d) {
      const int g = 1 + int(u(rng) * (n_gt - 1));
      f.detections.push_back(det(10.0 * g + (u(rng) < 0.5 ? 0.05 : 4.0), 20, 0.9 * u(rng)));
    }
    const double before = ap_r40(f.detections, f.gts, 0, 0.7);
    f.detections.push_back(det(0.0, 20, 0.95));
    EXPECT_GE(ap_r40(f.detections, f.gts, 0, 0.7), before);
  }
}

TEST(AveragePrecision, EachGtMatchedOnce) {
  const Frame f{{det(0, 10, 0.9), det(0.01, 10, 0.8)}, {gt(0, 10)}};
  const ApResult r = average_precision(std::span(&f, 1), 0, 0.7);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_NEAR(r.ap, 1.0, 1e-12);  // the duplicate ranks below full recall
}

TEST(AveragePrecision, ThresholdAndKind) {
  // Offset 0.5 along the length: IoU = 1.5 / 2.5 = 0.6 in both 3D and BEV.
  Frame f{{det(0.5, 10, 0.9)}, {gt(0, 10)}};
  EXPECT_EQ(average_precision(std::span(&f, 1), 0, 0.7).ap, 0.0);
  EXPECT_EQ(average_precision(std::span(&f, 1), 0, 0.6 - 1e-12).ap, 1.0);
  f.detections[0].box = {0.0, 0.6, 10, 2, 1, 1, 0};  // vertical offset only
  EXPECT_EQ(average_precision(std::span(&f, 1), 0, 0.7, IouKind::k3d).ap, 0.0);
  EXPECT_EQ(average_precision(std::span(&f, 1), 0, 0.7, IouKind::kBev).ap, 1.0);
}

TEST(AveragePrecision, ClassWithoutGroundTruth) {
  Frame f{{}, {gt(0, 10, 1)}};
  ApResult r = average_precision(std::span(&f, 1), 0, 0.7);
  EXPECT_TRUE(r.empty);
  EXPECT_EQ(r.ap, 1.0);
  f.detections.push_back(det(0, 10, 0.5, 0));
  r = average_precision(std::span(&f, 1), 0, 0.7);
  EXPECT_FALSE(r.empty);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.fp, 1u);
}

TEST(AveragePrecision, MissedGtAndBadArguments) {
  const Frame f{{}, {gt(0, 10)}};
  const ApResult r = average_precision(std::span(&f, 1), 0, 0.7);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_THROW(average_precision(std::span(&f, 1), 0, 0.0), std::invalid_argument);
  EXPECT_THROW(average_precision(std::span(&f, 1), 0, 0.7, IouKind::k3d, 20), std::invalid_argument);
}

TEST(GreedyNms, SuppressesInOrder) {
  const std::vector<Box3D> boxes{{0, 0, 10, 2, 1, 1, 0}, {0.2, 0, 10, 2, 1, 1, 0}, {5, 0, 10, 2, 1, 1, 0},
                                 {0.9, 0, 10, 2, 1, 1, 0}};
  // Box 1 overlaps box 0 by 1.8 / 2.2; box 3 only by 1.1 / 2.9.
  EXPECT_EQ(greedy_nms(boxes, 0.5), (std::vector<std::size_t>{0, 2, 3}));
  EXPECT_EQ(greedy_nms(boxes, 1.0), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(DecodeAndNms, ThresholdsTiesAndCaps) {
  AnchorGridConfig gc;
  gc.x_range = {0.0, 4.0};
  gc.z_range = {0.0, 0.8};
  gc.cell = {0.8, 0.8};
  gc.classes = {{2.0, 1.0, 1.0, 0.0}};
  gc.n_rotations = 1;
  const AnchorGrid grid = build_anchor_grid(gc);
  ModelOutputs out;
  out.logits = LogitMap(grid.num_anchors(), 1, 1, -10.0);
  out.deltas.assign(grid.num_anchors(), BoxDelta{});
  // Anchors 1 and 2 tie and the lower index ranks first. Neighbouring anchors overlap by 1.2 / 2.8.
  out.logits.values[1] = 2.0;
  out.logits.values[2] = 2.0;
  out.logits.values[4] = 1.0;
  NmsConfig cfg;
  auto dets = decode_and_nms(out, grid, cfg);
  ASSERT_EQ(dets.size(), 3u);
  EXPECT_EQ(dets[0].anchor, 1u);
  EXPECT_EQ(dets[1].anchor, 2u);
  EXPECT_EQ(dets[2].anchor, 4u);
  EXPECT_DOUBLE_EQ(dets[0].box.cx, grid.anchor_box(1).cx);
  cfg.post_nms_max = 1;
  EXPECT_EQ(decode_and_nms(out, grid, cfg).size(), 1u);
  cfg.post_nms_max = 100;
  cfg.pre_nms_max = 2;
  EXPECT_EQ(decode_and_nms(out, grid, cfg).size(), 2u);
  cfg.pre_nms_max = 1000;
  cfg.nms_iou = 0.4;  // now neighbours overlap enough to be suppressed
  dets = decode_and_nms(out, grid, cfg);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_EQ(dets[0].anchor, 1u);
  EXPECT_EQ(dets[1].anchor, 4u);
  cfg.score_thr = 1.5;
  EXPECT_THROW(decode_and_nms(out, grid, cfg), std::invalid_argument);
  cfg.score_thr = 0.1;
  cfg.nms_iou = 0.0;
  EXPECT_THROW(decode_and_nms(out, grid, cfg), std::invalid_argument);
}
