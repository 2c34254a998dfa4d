#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "xdistill/losses.hpp"
#include "xdistill/random.hpp"
#include "xdistill/scene.hpp"
#include "xdistill/teacher.hpp"
#include "xdistill/train.hpp"

using namespace xdistill;

namespace {

struct World {
  ExperimentConfig config = fixtures::small_config();
  AnchorGrid grid = make_grid(config);
  SceneData data = make_scene_data(11, config.scene, grid, config.teacher, config.assign);
};

ModelOutputs random_outputs(const AnchorGrid& grid, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0);
  ModelOutputs o;
  o.logits = LogitMap(grid.num_anchors(), grid.anchors_per_position(), grid.num_classes());
  for (double& v : o.logits.values) v = normal(rng, 2.0) - 2.0;
  o.deltas.resize(grid.num_anchors());
  for (BoxDelta& d : o.deltas) {
    auto a = d.to_array();
    for (double& x : a) x = normal(rng, 0.1);
    d = BoxDelta::from_array(a);
  }
  return o;
}

double naive_focal(double x, bool positive) {
  const double p = 1.0 / (1.0 + std::exp(-x));
  return positive ? -0.25 * (1 - p) * (1 - p) * std::log(p) : -0.75 * p * p * std::log(1 - p);
}

double naive_smooth_l1(double d) {
  const double beta = 1.0 / 9.0;
  return std::abs(d) < beta ? 0.5 * d * d / beta : std::abs(d) - 0.5 * beta;
}

}  // namespace

TEST(Scene, DeterministicAndWithinConstraints) {
  World w;
  const Scene a = generate_scene(5, w.config.scene, w.grid);
  const Scene b = generate_scene(5, w.config.scene, w.grid);
  ASSERT_EQ(a.gts.size(), b.gts.size());
  for (std::size_t i = 0; i < a.gts.size(); ++i) EXPECT_EQ(a.gts[i].box, b.gts[i].box);
  EXPECT_EQ(a.features.values, b.features.values);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scene s = generate_scene(seed, w.config.scene, w.grid);
    std::vector<int> counts(3, 0);
    for (const GroundTruth& g : s.gts) {
      ++counts[g.class_id];
      EXPECT_GT(g.box.yaw, -std::numbers::pi);
      EXPECT_LE(g.box.yaw, std::numbers::pi);
      for (const Vec2& v : bev_polygon(g.box)) {
        EXPECT_GE(v.x, -8.0);
        EXPECT_LE(v.x, 8.0);
        EXPECT_GE(v.z, 4.0);
        EXPECT_LE(v.z, 20.0);
      }
    }
    for (int k = 0; k < 3; ++k) {
      EXPECT_GE(counts[k], w.config.scene.min_count[k]);
      EXPECT_LE(counts[k], w.config.scene.max_count[k]);
    }
    for (std::size_t i = 0; i < s.gts.size(); ++i) {
      for (std::size_t j = i + 1; j < s.gts.size(); ++j) EXPECT_EQ(iou_bev(s.gts[i].box, s.gts[j].box), 0.0);
    }
  }
}

TEST(Scene, FeaturesOnlyOnActivePositions) {
  World w;
  const FeatureMap& f = w.data.scene.features;
  ASSERT_EQ(f.positions, w.grid.num_positions());
  std::size_t active = 0;
  for (std::size_t p = 0; p < f.positions; ++p) {
    if (f.active[p]) {
      ++active;
      continue;
    }
    for (std::size_t k = 0; k < FeatureMap::kDim; ++k) EXPECT_EQ(f.row(p)[k], 0.0);
  }
  EXPECT_GT(active, 0u);
  EXPECT_EQ(f.observations.size(), w.data.scene.gts.size());
}

TEST(Scene, TooDenseIsReported) {
  World w;
  SceneConfig c = w.config.scene;
  c.min_count = {40, 0, 0};
  c.max_count = {40, 0, 0};
  EXPECT_THROW(generate_scene(1, c, w.grid), SceneTooDense);
}

TEST(Perturb, ZeroNoiseIsIdentity) {
  const GroundTruth g{{1.0, 0.9, 12.0, 3.9, 1.6, 1.5, 2.5}, 1};
  Rng rng = make_rng(1, 1);
  const Observation o = perturb(g, NoiseProfile{}, 3, rng);
  EXPECT_EQ(o.class_id, 1);
  EXPECT_NEAR(o.box.cx, g.box.cx, 1e-15);
  EXPECT_NEAR(o.box.l, g.box.l, 1e-15);
  EXPECT_NEAR(o.box.yaw, g.box.yaw, 1e-15);
  NoiseProfile bad;
  bad.score_corruption = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(CanonicalYaw, CoversAnchorRange) {
  for (double t = -7.0; t < 7.0; t += 0.13) {
    const double c = canonical_yaw(t);
    EXPECT_GE(c, -std::numbers::pi / 4);
    EXPECT_LT(c, 3 * std::numbers::pi / 4);
    EXPECT_NEAR(std::remainder(c - t, std::numbers::pi), 0.0, 1e-9);
  }
}

TEST(Teacher, PredictsAroundObjectsOnly) {
  World w;
  w.config.teacher.noise = {0.03, 0.01, 0.02, 0.0, 0.0};
  const TeacherPrediction t = teacher_predict(w.data.scene, w.grid, w.config.teacher);
  ASSERT_EQ(t.boxes.size(), w.data.scene.gts.size());
  // Every object has an anchor of its class that fires.
  for (std::size_t g = 0; g < w.data.scene.gts.size(); ++g) {
    if (t.boxes[g].class_id != w.data.scene.gts[g].class_id) continue;
    double best = -1e9;
    for (std::size_t a = 0; a < w.grid.num_anchors(); ++a) best = std::max(best, t.outputs.logits.at(a, t.boxes[g].class_id));
    EXPECT_GT(sigmoid(best), 0.5);
  }
  // Far from every object the logits are the background constant.
  for (std::size_t a = 0; a < w.grid.num_anchors(); ++a) {
    const Vec2 c = w.grid.position_center(w.grid.position_of(a));
    double d = 1e9;
    for (const GroundTruth& g : w.data.scene.gts) d = std::min(d, std::hypot(g.box.cx - c.x, g.box.cz - c.z));
    if (d > w.config.teacher.radius + 1e-9) {
      for (int k = 0; k < 3; ++k) EXPECT_EQ(t.outputs.logits.at(a, k), w.config.teacher.logit_low);
    }
  }
  const TeacherPrediction again = teacher_predict(w.data.scene, w.grid, w.config.teacher);
  EXPECT_EQ(again.outputs.logits.values, t.outputs.logits.values);
}

TEST(Detector, ForwardIsLinearAndBackwardIsItsAdjoint) {
  World w;
  const DetectorParams p = DetectorParams::initialize(FeatureMap::kDim, 6, 3, 5, 0.01, 0.1);
  const FeatureMap& f = w.data.scene.features;
  const ModelOutputs out = student_forward(p, f, w.grid);
  // <grad, forward(params)> is linear in the params, so backward must reproduce it exactly.
  Rng rng = make_rng(17, 0);
  OutputGrad g(w.grid.num_anchors(), 3);
  for (double& v : g.d_logits) v = normal(rng, 1.0);
  for (auto& d : g.d_deltas) {
    for (double& v : d) v = normal(rng, 1.0);
  }
  const std::vector<double> dp = student_backward(p, f, g);
  ASSERT_EQ(dp.size(), p.size());
  auto inner = [&](const DetectorParams& q) {
    const ModelOutputs o = student_forward(q, f, w.grid);
    double s = 0;
    for (std::size_t i = 0; i < o.logits.values.size(); ++i) s += g.d_logits[i] * o.logits.values[i];
    for (std::size_t a = 0; a < o.deltas.size(); ++a) {
      const auto arr = o.deltas[a].to_array();
      for (std::size_t k = 0; k < 7; ++k) s += g.d_deltas[a][k] * arr[k];
    }
    return s;
  };
  for (std::size_t i : {p.w_cls_index(0, 0), p.w_cls_index(7, 11), p.b_cls_index(3), p.w_reg_index(2, 20),
                        p.b_reg_index(41)}) {
    DetectorParams up = p, dn = p;
    up.data()[i] += 0.5;
    dn.data()[i] -= 0.5;
    EXPECT_NEAR(dp[i], inner(up) - inner(dn), 1e-6 * std::max(1.0, std::abs(dp[i])));
  }
  // inactive positions produce bias-only outputs
  for (std::size_t pos = 0; pos < f.positions; ++pos) {
    if (f.active[pos]) continue;
    EXPECT_EQ(out.logits.at(pos * 6, 0), p.data()[p.b_cls_index(0)]);
    break;
  }
}

TEST(Detector, InitializationUsesPriorBias) {
  const DetectorParams p = DetectorParams::initialize(16, 6, 3, 1, 0.01, 0.01);
  EXPECT_NEAR(sigmoid(p.data()[p.b_cls_index(0)]), 0.01, 1e-12);
  EXPECT_EQ(p.data()[p.b_reg_index(0)], 0.0);
  EXPECT_EQ(p, DetectorParams::initialize(16, 6, 3, 1, 0.01, 0.01));
}

TEST(ReplaceOutputs, SwapsSelectedHeads) {
  World w;
  const ModelOutputs s = random_outputs(w.grid, 1), t = random_outputs(w.grid, 2);
  EXPECT_EQ(replace_outputs(s, t, ReplaceMode::kNone).logits.values, s.logits.values);
  const ModelOutputs r = replace_outputs(s, t, ReplaceMode::kRegression);
  EXPECT_EQ(r.logits.values, s.logits.values);
  EXPECT_EQ(r.deltas[5].dx, t.deltas[5].dx);
  const ModelOutputs c = replace_outputs(s, t, ReplaceMode::kClassification);
  EXPECT_EQ(c.logits.values, t.logits.values);
  EXPECT_EQ(c.deltas[5].dx, s.deltas[5].dx);
  EXPECT_EQ(replace_outputs(s, t, ReplaceMode::kBoth).deltas[5].dz, t.deltas[5].dz);
  EXPECT_THROW(parse_replace_mode("teacher"), std::invalid_argument);
  EXPECT_EQ(parse_replace_mode("both"), ReplaceMode::kBoth);
}

TEST(Targets, AlignedGtAndPositions) {
  World w;
  const SceneTargets& t = w.data.targets;
  ASSERT_GT(t.positives.size(), 0u);
  for (std::size_t j = 0; j < t.positives.size(); ++j) {
    EXPECT_LE(std::abs(wrap_angle(t.gt_boxes[j].yaw - t.anchors[j].yaw)), std::numbers::pi / 2 + 1e-12);
    EXPECT_LE(std::abs(t.gt_deltas[j].dyaw), std::numbers::pi / 2 + 1e-12);
    EXPECT_NE(std::find(t.pos_positions.begin(), t.pos_positions.end(), w.grid.position_of(t.positives[j])),
              t.pos_positions.end());
  }
  EXPECT_TRUE(std::is_sorted(t.pos_positions.begin(), t.pos_positions.end()));
  EXPECT_EQ(t.fore_positions.size(), t.assignment.m_fore);
}

TEST(BaseLoss, MatchesNaiveFocalAndSmoothL1) {
  World w;
  const SceneTargets& t = w.data.targets;
  const ModelOutputs o = random_outputs(w.grid, 3);
  double cls = 0, reg = 0;
  for (std::size_t a = 0; a < w.grid.num_anchors(); ++a) {
    if (t.assignment.labels[a] == AnchorLabel::kIgnore) continue;
    const int target = t.assignment.labels[a] == AnchorLabel::kPositive
                           ? w.data.scene.gts[t.assignment.gt_index[a]].class_id
                           : -1;
    for (int k = 0; k < 3; ++k) cls += naive_focal(o.logits.at(a, k), k == target);
  }
  for (std::size_t j = 0; j < t.positives.size(); ++j) {
    const auto s = o.deltas[t.positives[j]].to_array(), g = t.gt_deltas[j].to_array();
    for (std::size_t k = 0; k < 7; ++k) reg += naive_smooth_l1(s[k] - g[k]);
  }
  const double n = std::max<double>(1.0, double(t.assignment.n_pos));
  const BaseLoss b = base_loss(o, t, {});
  EXPECT_NEAR(b.cls, cls / n, 1e-10 * cls / n);
  EXPECT_NEAR(b.reg, reg / n, 1e-12 * std::max(1.0, reg / n));
}

TEST(TotalLoss, ZeroWeightsGiveBaseLossExactly) {
  World w;
  const ModelOutputs o = random_outputs(w.grid, 4);
  LossConfig c;
  c.xgd = XgdMode::kFull;
  c.cld = CldMode::kForeground;
  c.lambda_xgd = 0.0;
  c.lambda_cld = 0.0;
  const LossBreakdown b = total_loss(o, w.data.targets, c);
  const BaseLoss base = base_loss(o, w.data.targets, c.base);
  EXPECT_EQ(b.total, base.cls + base.reg);
  EXPECT_EQ(b.xgd, 0.0);
  EXPECT_EQ(b.cld, 0.0);
  // gate statistics are reported even when XGD is off
  EXPECT_EQ(b.gate.evaluated, w.data.targets.positives.size());
}

TEST(TotalLoss, GradientMatchesCentralDifferencesOverOutputs) {
  World w;
  const SceneTargets& t = w.data.targets;
  for (CldMode cld : {CldMode::kForeground, CldMode::kPositive, CldMode::kClassical}) {
    const ModelOutputs o = random_outputs(w.grid, 5);
    LossConfig c;
    c.xgd = XgdMode::kFull;
    c.cld = cld;
    c.lambda_xgd = 0.7;
    c.lambda_cld = 1.3;
    const XgdTargets frozen = prepare_xgd_targets(o, t, c);
    LossBreakdown b;
    const OutputGrad g = total_loss_grad(o, t, c, &frozen, &b);
    EXPECT_NEAR(b.total, b.ori + 0.7 * b.xgd + 1.3 * b.cld, 1e-12);
    const double h = 1e-6;
    // logits at a positive anchor and on a foreground position
    std::vector<std::size_t> idx{t.positives[0] * 3, t.positives[0] * 3 + 1, t.fore_positions[0] * 18 + 4, 7};
    for (std::size_t i : idx) {
      ModelOutputs up = o, dn = o;
      up.logits.values[i] += h;
      dn.logits.values[i] -= h;
      const double fd = (total_loss(up, t, c, &frozen).total - total_loss(dn, t, c, &frozen).total) / (2 * h);
      EXPECT_NEAR(g.d_logits[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
    const std::size_t a = t.positives.back();
    for (std::size_t k = 0; k < 7; ++k) {
      ModelOutputs up = o, dn = o;
      auto u = up.deltas[a].to_array(), d = dn.deltas[a].to_array();
      u[k] += 1e-5;
      d[k] -= 1e-5;
      up.deltas[a] = BoxDelta::from_array(u);
      dn.deltas[a] = BoxDelta::from_array(d);
      const double fd = (total_loss(up, t, c, &frozen).total - total_loss(dn, t, c, &frozen).total) / 2e-5;
      EXPECT_NEAR(g.d_deltas[a][k], fd, 5e-3 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(XgdTargets, ModesSelectComponentsAndPairs) {
  World w;
  const SceneTargets& t = w.data.targets;
  const ModelOutputs o = random_outputs(w.grid, 6);
  LossConfig c;
  c.xgd = XgdMode::kCenter;
  const XgdTargets xt = prepare_xgd_targets(o, t, c);
  ASSERT_EQ(xt.pairs.size(), t.positives.size());
  for (std::size_t j = 0; j < xt.pairs.size(); ++j) {
    const Box3D s = decode_box(o.deltas[t.positives[j]], t.anchors[j]);
    EXPECT_EQ(xt.boxes[j].l, s.l);
    EXPECT_EQ(xt.boxes[j].yaw, wrap_angle(s.yaw));
  }
  c.xgd = XgdMode::kHighQuality;
  c.hq_threshold = 0.3;
  const XgdTargets hq = prepare_xgd_targets(o, t, c);
  for (std::size_t i = 0; i < hq.pairs.size(); ++i) {
    EXPECT_GT(t.teacher_confidence[hq.pairs[i]], 0.3);
    EXPECT_EQ(hq.boxes[i], t.teacher_boxes[hq.pairs[i]]);
  }
  c.xgd = XgdMode::kFull;
  c.force_open = true;
  const XgdTargets open = prepare_xgd_targets(o, t, c);
  for (std::size_t j = 0; j < open.pairs.size(); ++j) {
    EXPECT_EQ(open.boxes[j].cx, t.teacher_boxes[j].cx);
    EXPECT_EQ(open.boxes[j].w, t.teacher_boxes[j].w);
  }
  EXPECT_EQ(parse_xgd_mode("hq"), XgdMode::kHighQuality);
  EXPECT_EQ(to_string(CldMode::kClassical), "classical");
  EXPECT_THROW(parse_cld_mode("all"), std::invalid_argument);
}

TEST(Train, DeterministicAndReducesLoss) {
  World w;
  std::vector<SceneData> scenes;
  for (std::uint64_t s = 0; s < 4; ++s) {
    scenes.push_back(make_scene_data(100 + s, w.config.scene, w.grid, w.config.teacher, w.config.assign));
  }
  TrainConfig tc = w.config.train;
  tc.optimizer.epochs = 6;
  tc.loss.xgd = XgdMode::kFull;
  tc.loss.cld = CldMode::kForeground;
  tc.seed = 9;
  const TrainResult a = train(scenes, w.grid, tc);
  const TrainResult b = train(scenes, w.grid, tc);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_LT(a.history.back().total, a.history.front().total);
  const EpochRecord before = evaluate_loss(DetectorParams::initialize(FeatureMap::kDim, 6, 3, 9), scenes, w.grid, tc.loss);
  const EpochRecord after = evaluate_loss(a.params, scenes, w.grid, tc.loss);
  EXPECT_LT(after.total, before.total);

  tc.optimizer.epochs = 0;
  const TrainResult none = train(scenes, w.grid, tc);
  EXPECT_TRUE(none.history.empty());
  tc.optimizer.batch = 0;
  EXPECT_THROW(train(scenes, w.grid, tc), std::invalid_argument);
}

TEST(Train, RegateScheduleChangesTrajectoryOnlyThroughTargets) {
  World w;
  std::vector<SceneData> scenes{w.data};
  TrainConfig tc = w.config.train;
  tc.optimizer.epochs = 3;
  tc.loss.xgd = XgdMode::kFull;
  const TrainResult step = train(scenes, w.grid, tc);
  tc.regate = RegateSchedule::kEveryEpoch;
  const TrainResult epoch = train(scenes, w.grid, tc);
  // With one scene and batch >= 1 there is one step per epoch, so both schedules coincide.
  EXPECT_EQ(step.params, epoch.params);
}
