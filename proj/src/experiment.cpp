#include "xdistill/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "xdistill/random.hpp"

namespace xdistill {
namespace {

constexpr std::uint64_t kTrainSceneTag = 1000;
constexpr std::uint64_t kValSceneTag = 500000;
constexpr std::uint64_t kInitTag = 7;

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double rate(std::size_t kept, std::size_t n) { return n ? static_cast<double>(kept) / static_cast<double>(n) : 0.0; }

nlohmann::json ap_json(const ApResult& r) {
  return {{"ap", r.ap},           {"empty", r.empty}, {"tp", r.tp},
          {"fp", r.fp},           {"fn", r.fn},       {"num_gt", r.num_gt},
          {"precision", r.precision}};
}

nlohmann::json history_json(const std::vector<EpochRecord>& h) {
  nlohmann::json out = nlohmann::json::array();
  for (const EpochRecord& e : h) {
    out.push_back({{"epoch", e.epoch},
                   {"cls", e.cls},
                   {"reg", e.reg},
                   {"ori", e.ori},
                   {"xgd", e.xgd},
                   {"cld", e.cld},
                   {"total", e.total},
                   {"gate_evaluated", e.gate.evaluated},
                   {"gate_kept_center", e.gate.kept_center},
                   {"gate_kept_size", e.gate.kept_size},
                   {"gate_kept_angle", e.gate.kept_angle},
                   {"non_smooth", e.non_smooth}});
  }
  return out;
}

void append_rows(ExperimentReport& report, const std::string& arm, std::uint64_t seed,
                 const std::vector<ClassAp>& aps, double n_pos_mean, const GateStats& gate,
                 const std::vector<EpochRecord>& history) {
  RunRecord run;
  run.arm = arm;
  run.seed = seed;
  run.history = history;
  run.ap = nlohmann::json::array();
  for (const ClassAp& c : aps) {
    MetricRow row;
    row.experiment = report.experiment;
    row.arm = arm;
    row.class_name = c.class_name;
    row.iou_thr = c.iou_thr;
    row.seed = seed;
    row.ap3d = c.ap3d.ap;
    row.ap_bev = c.ap_bev.ap;
    row.n_pos_mean = n_pos_mean;
    row.keep_center = rate(gate.kept_center, gate.evaluated);
    row.keep_size = rate(gate.kept_size, gate.evaluated);
    row.keep_angle = rate(gate.kept_angle, gate.evaluated);
    report.rows.push_back(row);
    run.ap.push_back({{"class", c.class_name}, {"iou_thr", c.iou_thr}, {"ap3d", ap_json(c.ap3d)},
                      {"ap_bev", ap_json(c.ap_bev)}});
  }
  report.runs.push_back(std::move(run));
}

ExperimentReport new_report(const ExperimentConfig& config, const std::string& experiment) {
  ExperimentReport r;
  r.experiment = experiment;
  r.config_hash = config_hash(config);
  r.seeds = config.seeds;
  return r;
}

TrainConfig arm_train_config(const ExperimentConfig& config, const ArmSpec& arm, std::uint64_t seed) {
  TrainConfig tc = config.train;
  tc.loss.xgd = arm.xgd;
  tc.loss.cld = arm.cld;
  tc.seed = mix_seed(seed, kInitTag);
  return tc;
}

std::vector<ModelOutputs> forward_all(const DetectorParams& params, const std::vector<SceneData>& scenes,
                                      const AnchorGrid& grid) {
  std::vector<ModelOutputs> out;
  out.reserve(scenes.size());
  for (const SceneData& s : scenes) out.push_back(student_forward(params, s.scene.features, grid));
  return out;
}

struct Stats {
  double mean = 0.0;
  double std = 0.0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

using RowKey = std::tuple<std::string, std::string, double>;  // arm, class, threshold

}  // namespace

SeedData make_seed_data(const ExperimentConfig& config, const AnchorGrid& grid, std::uint64_t seed) {
  SeedData d;
  for (int i = 0; i < config.train_scenes; ++i) {
    d.train.push_back(make_scene_data(mix_seed(seed, kTrainSceneTag + static_cast<std::uint64_t>(i)), config.scene,
                                      grid, config.teacher, config.assign));
  }
  for (int i = 0; i < config.val_scenes; ++i) {
    d.val.push_back(make_scene_data(mix_seed(seed, kValSceneTag + static_cast<std::uint64_t>(i)), config.scene, grid,
                                    config.teacher, config.assign));
  }
  return d;
}

std::vector<ClassAp> evaluate_outputs(const std::vector<ModelOutputs>& outputs, const std::vector<SceneData>& val,
                                      const AnchorGrid& grid, const ExperimentConfig& config) {
  if (outputs.size() != val.size()) throw std::invalid_argument("evaluate_outputs: one output per scene required");
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < val.size(); ++i) {
    frames.push_back({decode_and_nms(outputs[i], grid, config.nms), val[i].scene.gts});
  }
  std::vector<ClassAp> out;
  for (std::size_t k = 0; k < config.classes.size(); ++k) {
    for (double thr : config.classes[k].eval_iou) {
      ClassAp c;
      c.class_name = config.classes[k].name;
      c.iou_thr = thr;
      c.ap3d = average_precision(frames, static_cast<int>(k), thr, IouKind::k3d, config.recall_positions);
      c.ap_bev = average_precision(frames, static_cast<int>(k), thr, IouKind::kBev, config.recall_positions);
      out.push_back(std::move(c));
    }
  }
  return out;
}

ExperimentReport run_arms(const ExperimentConfig& config, const std::vector<ArmSpec>& arms,
                          const std::string& experiment, const ProgressFn& progress) {
  const AnchorGrid grid = make_grid(config);
  ExperimentReport report = new_report(config, experiment);
  for (std::uint64_t seed : config.seeds) {
    const SeedData data = make_seed_data(config, grid, seed);
    for (const ArmSpec& arm : arms) {
      if (progress) progress(experiment + ": seed " + std::to_string(seed) + ", arm " + arm.name);
      const TrainResult tr = train(data.train, grid, arm_train_config(config, arm, seed));
      const auto aps = evaluate_outputs(forward_all(tr.params, data.val, grid), data.val, grid, config);
      GateStats gate;
      double n_pos_mean = 0.0;
      if (!tr.history.empty()) {
        gate = tr.history.back().gate;
        n_pos_mean = tr.history.back().n_pos_mean;
      } else {
        const EpochRecord e = evaluate_loss(tr.params, data.train, grid, arm_train_config(config, arm, seed).loss);
        gate = e.gate;
        n_pos_mean = e.n_pos_mean;
      }
      append_rows(report, arm.name, seed, aps, n_pos_mean, gate, tr.history);
    }
  }
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  return run_arms(config, config.arms, config.experiment, progress);
}

ExperimentReport run_ablations(const ExperimentConfig& config, const ProgressFn& progress) {
  return run_arms(config, config.ablation_arms, config.experiment + "_ablation", progress);
}

ExperimentReport run_replacement(const ExperimentConfig& config, const std::vector<ReplaceMode>& modes,
                                 const ProgressFn& progress) {
  const AnchorGrid grid = make_grid(config);
  ExperimentReport report = new_report(config, config.experiment + "_replace");
  TeacherConfig tc = config.teacher;
  tc.noise = config.replace_teacher_noise;
  const ArmSpec baseline{"baseline", XgdMode::kNone, CldMode::kNone};
  for (std::uint64_t seed : config.seeds) {
    if (progress) progress("replace: seed " + std::to_string(seed));
    const SeedData data = make_seed_data(config, grid, seed);
    const TrainResult tr = train(data.train, grid, arm_train_config(config, baseline, seed));
    const std::vector<ModelOutputs> student = forward_all(tr.params, data.val, grid);
    std::vector<ModelOutputs> teacher;
    for (const SceneData& s : data.val) teacher.push_back(teacher_predict(s.scene, grid, tc).outputs);
    GateStats gate;
    double n_pos_mean = 0.0;
    if (!tr.history.empty()) {
      gate = tr.history.back().gate;
      n_pos_mean = tr.history.back().n_pos_mean;
    }
    for (ReplaceMode mode : modes) {
      std::vector<ModelOutputs> mixed;
      for (std::size_t i = 0; i < student.size(); ++i) mixed.push_back(replace_outputs(student[i], teacher[i], mode));
      append_rows(report, "replace_" + std::string(to_string(mode)), seed,
                  evaluate_outputs(mixed, data.val, grid, config), n_pos_mean, gate, tr.history);
    }
  }
  return report;
}

std::string to_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << kCsvHeader << "\n";
  for (const MetricRow& r : rows) {
    os << r.experiment << "," << r.arm << "," << r.class_name << "," << fixed(r.iou_thr, 2) << "," << r.seed << ","
       << fixed(r.ap3d) << "," << fixed(r.ap_bev) << "," << fixed(r.n_pos_mean, 3) << "," << fixed(r.keep_center)
       << "," << fixed(r.keep_size) << "," << fixed(r.keep_angle) << "\n";
  }
  return os.str();
}

nlohmann::json paired_deltas(const ExperimentReport& report, const std::string& reference) {
  std::map<std::tuple<std::string, double, std::uint64_t>, double> ref;
  for (const MetricRow& r : report.rows) {
    if (r.arm == reference) ref[{r.class_name, r.iou_thr, r.seed}] = r.ap3d;
  }
  std::map<RowKey, std::vector<double>> deltas;
  std::vector<RowKey> order;
  for (const MetricRow& r : report.rows) {
    if (r.arm == reference) continue;
    const auto it = ref.find({r.class_name, r.iou_thr, r.seed});
    if (it == ref.end()) continue;
    const RowKey key{r.arm, r.class_name, r.iou_thr};
    if (!deltas.count(key)) order.push_back(key);
    deltas[key].push_back(r.ap3d - it->second);
  }
  nlohmann::json out = nlohmann::json::array();
  for (const RowKey& key : order) {
    const Stats s = stats(deltas[key]);
    out.push_back({{"arm", std::get<0>(key)},
                   {"reference", reference},
                   {"class", std::get<1>(key)},
                   {"iou_thr", std::get<2>(key)},
                   {"delta_ap3d", deltas[key]},
                   {"mean", s.mean},
                   {"std", s.std}});
  }
  return out;
}

nlohmann::json aggregate(const ExperimentReport& report) {
  std::map<RowKey, std::pair<std::vector<double>, std::vector<double>>> values;
  std::vector<RowKey> order;
  for (const MetricRow& r : report.rows) {
    const RowKey key{r.arm, r.class_name, r.iou_thr};
    if (!values.count(key)) order.push_back(key);
    values[key].first.push_back(r.ap3d);
    values[key].second.push_back(r.ap_bev);
  }
  nlohmann::json out = nlohmann::json::array();
  for (const RowKey& key : order) {
    const Stats a = stats(values[key].first);
    const Stats b = stats(values[key].second);
    out.push_back({{"arm", std::get<0>(key)},
                   {"class", std::get<1>(key)},
                   {"iou_thr", std::get<2>(key)},
                   {"ap3d_mean", a.mean},
                   {"ap3d_std", a.std},
                   {"ap_bev_mean", b.mean},
                   {"ap_bev_std", b.std},
                   {"seeds", values[key].first.size()}});
  }
  return out;
}

nlohmann::json to_json(const ExperimentReport& report) {
  nlohmann::json runs = nlohmann::json::array();
  for (const RunRecord& r : report.runs) {
    runs.push_back({{"arm", r.arm}, {"seed", r.seed}, {"loss_history", history_json(r.history)}, {"ap", r.ap}});
  }
  nlohmann::json out = {{"experiment", report.experiment},
                        {"config_hash", report.config_hash},
                        {"seeds", report.seeds},
                        {"aggregate", aggregate(report)},
                        {"runs", runs}};
  if (!report.rows.empty()) out["paired_deltas"] = paired_deltas(report, report.rows.front().arm);
  return out;
}

void write_report(const ExperimentReport& report, const std::string& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base = std::filesystem::path(dir) / stem;
  std::ofstream csv(base.string() + ".csv", std::ios::binary);
  csv << to_csv(report.rows);
  std::ofstream js(base.string() + ".json", std::ios::binary);
  js << to_json(report).dump(2) << "\n";
  if (!csv || !js) throw std::runtime_error("write_report: cannot write to " + dir);
}

}  // namespace xdistill
