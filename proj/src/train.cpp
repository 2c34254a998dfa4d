#include "xdistill/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "xdistill/random.hpp"

namespace xdistill {
namespace {

constexpr std::uint64_t kShuffleStream = 21;

void accumulate(EpochRecord& r, const LossBreakdown& b) {
  r.cls += b.cls;
  r.reg += b.reg;
  r.ori += b.ori;
  r.xgd += b.xgd;
  r.cld += b.cld;
  r.total += b.total;
  r.gate += b.gate;
  r.non_smooth += b.non_smooth;
}

void average(EpochRecord& r, std::size_t n) {
  if (n == 0) return;
  const double inv = 1.0 / static_cast<double>(n);
  r.cls *= inv;
  r.reg *= inv;
  r.ori *= inv;
  r.xgd *= inv;
  r.cld *= inv;
  r.total *= inv;
}

double mean_positives(std::span<const SceneData> scenes) {
  if (scenes.empty()) return 0.0;
  double s = 0.0;
  for (const SceneData& d : scenes) s += static_cast<double>(d.targets.assignment.n_pos);
  return s / static_cast<double>(scenes.size());
}

bool is_bias(const DetectorParams& p, std::size_t i) {
  const std::size_t reg_begin = p.b_cls_index(p.cls_outputs() - 1) + 1;
  const bool cls_bias = i >= p.b_cls_index(0) && i < reg_begin;
  const bool reg_bias = i >= p.b_reg_index(0);
  return cls_bias || reg_bias;
}

std::string snapshot(int epoch, std::size_t step, std::uint64_t scene_seed, const LossBreakdown& b) {
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << ", step " << step << ", scene seed " << scene_seed << ": cls="
     << b.cls << " reg=" << b.reg << " xgd=" << b.xgd << " cld=" << b.cld << " total=" << b.total;
  return os.str();
}

}  // namespace

SceneData make_scene_data(std::uint64_t seed, const SceneConfig& scene_config, const AnchorGrid& grid,
                          const TeacherConfig& teacher, const AssignConfig& assign) {
  SceneData d;
  d.scene = generate_scene(seed, scene_config, grid);
  TeacherPrediction tp = teacher_predict(d.scene, grid, teacher);
  d.targets = prepare_targets(grid, d.scene.gts, tp.outputs, assign);
  return d;
}

TrainResult train(std::span<const SceneData> scenes, const AnchorGrid& grid, const TrainConfig& config) {
  const OptimizerConfig& opt = config.optimizer;
  if (opt.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (opt.batch == 0) throw std::invalid_argument("train: batch must be >= 1");

  TrainResult result;
  result.params = DetectorParams::initialize(FeatureMap::kDim, grid.anchors_per_position(),
                                             static_cast<std::size_t>(grid.num_classes()), config.seed,
                                             opt.init_prior, opt.init_sigma);
  if (scenes.empty()) return result;

  std::vector<double>& w = result.params.data();
  std::vector<double> m(w.size(), 0.0), v(w.size(), 0.0);
  std::vector<std::uint8_t> decay(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) decay[i] = !is_bias(result.params, i);

  Rng rng = make_rng(config.seed, kShuffleStream);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<XgdTargets> frozen(scenes.size());
  const double n_pos_mean = mean_positives(scenes);
  std::size_t t = 0;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    if (config.regate == RegateSchedule::kEveryEpoch) {
      for (std::size_t i = 0; i < scenes.size(); ++i) {
        const ModelOutputs out = student_forward(result.params, scenes[i].scene.features, grid);
        frozen[i] = prepare_xgd_targets(out, scenes[i].targets, config.loss);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.n_pos_mean = n_pos_mean;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch) {
      const std::size_t end = std::min(order.size(), begin + opt.batch);
      std::vector<double> g(w.size(), 0.0);
      for (std::size_t k = begin; k < end; ++k) {
        const SceneData& sd = scenes[order[k]];
        const ModelOutputs out = student_forward(result.params, sd.scene.features, grid);
        LossBreakdown b;
        const XgdTargets* ft = config.regate == RegateSchedule::kEveryEpoch ? &frozen[order[k]] : nullptr;
        const OutputGrad og = total_loss_grad(out, sd.targets, config.loss, ft, &b);
        if (!std::isfinite(b.total)) throw TrainingDiverged(snapshot(epoch + 1, t, sd.scene.seed, b));
        accumulate(rec, b);
        const std::vector<double> pg = student_backward(result.params, sd.scene.features, og);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += pg[i];
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      ++t;
      const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * inv;
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
        const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
        w[i] -= opt.lr * (step + (decay[i] ? opt.weight_decay * w[i] : 0.0));
      }
    }
    average(rec, scenes.size());
    result.history.push_back(rec);
  }
  return result;
}

EpochRecord evaluate_loss(const DetectorParams& params, std::span<const SceneData> scenes, const AnchorGrid& grid,
                          const LossConfig& loss) {
  EpochRecord rec;
  rec.n_pos_mean = mean_positives(scenes);
  for (const SceneData& sd : scenes) {
    accumulate(rec, total_loss(student_forward(params, sd.scene.features, grid), sd.targets, loss));
  }
  average(rec, scenes.size());
  return rec;
}

}  // namespace xdistill
