#include "xdistill/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace xdistill {
namespace {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void number(const std::string& key, double& out, double lo, double hi) {
    get(key, out);
    if (!(out >= lo && out <= hi)) {
      std::ostringstream os;
      os << path_ << "." << key << ": " << out << " outside [" << lo << ", " << hi << "]";
      throw ConfigError(os.str());
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(path_ + "." + item.key() + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_noise(Reader& parent, const std::string& key, NoiseProfile& n) {
  if (!parent.has(key)) return;
  Reader r(parent.at(key), parent.path(key));
  r.number("center_sigma", n.center_sigma, 0.0, 1e3);
  r.number("size_sigma", n.size_sigma, 0.0, 10.0);
  r.number("yaw_sigma", n.yaw_sigma, 0.0, 10.0);
  r.number("score_corruption", n.score_corruption, 0.0, 1.0);
  r.number("depth_bias", n.depth_bias, 0.0, 10.0);
  r.finish();
}

json noise_json(const NoiseProfile& n) {
  return {{"center_sigma", n.center_sigma}, {"size_sigma", n.size_sigma}, {"yaw_sigma", n.yaw_sigma},
          {"score_corruption", n.score_corruption}, {"depth_bias", n.depth_bias}};
}

std::vector<ArmSpec> read_arms(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  std::vector<ArmSpec> arms;
  std::set<std::string> names;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    Reader r(j[i], p);
    ArmSpec a;
    std::string xgd = "none", cld = "none";
    r.get("name", a.name);
    r.get("xgd", xgd);
    r.get("cld", cld);
    r.finish();
    if (a.name.empty()) throw ConfigError(p + ".name: required");
    if (!names.insert(a.name).second) throw ConfigError(p + ".name: duplicate arm '" + a.name + "'");
    try {
      a.xgd = parse_xgd_mode(xgd);
      a.cld = parse_cld_mode(cld);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(p + ": " + e.what());
    }
    arms.push_back(a);
  }
  return arms;
}

json arms_json(const std::vector<ArmSpec>& arms) {
  json out = json::array();
  for (const ArmSpec& a : arms) {
    out.push_back({{"name", a.name}, {"xgd", std::string(to_string(a.xgd))}, {"cld", std::string(to_string(a.cld))}});
  }
  return out;
}

void sync_derived(ExperimentConfig& c) {
  c.grid.classes.clear();
  c.scene.min_count.clear();
  c.scene.max_count.clear();
  c.assign.thresholds.clear();
  for (const ClassSpec& k : c.classes) {
    c.grid.classes.push_back(k.anchor);
    c.scene.min_count.push_back(k.min_count);
    c.scene.max_count.push_back(k.max_count);
    c.assign.thresholds.push_back(k.thresholds);
  }
}

ClassSpec make_class(std::string name, double l, double w, double h, double cy, int lo, int hi, double pos,
                     double neg, double eval_iou) {
  ClassSpec c;
  c.name = std::move(name);
  c.anchor = {l, w, h, cy};
  c.min_count = lo;
  c.max_count = hi;
  c.thresholds = {pos, neg};
  c.eval_iou = {eval_iou};
  return c;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.classes = {make_class("car", 3.9, 1.6, 1.56, 0.9, 3, 8, 0.6, 0.45, 0.7),
               make_class("pedestrian", 0.8, 0.6, 1.73, 0.8, 2, 5, 0.5, 0.35, 0.5),
               make_class("cyclist", 1.76, 0.6, 1.73, 0.8, 1, 4, 0.5, 0.35, 0.5)};
  c.train_scenes = 32;
  c.train.optimizer.epochs = 60;
  c.scene.features.objectness_sigma = 0.5;
  c.scene.student = {0.12, 0.04, 0.05, 0.05, 0.004};
  c.teacher.noise = {0.05, 0.02, 0.02, 0.01, 0.0};
  c.replace_teacher_noise = {0.03, 0.01, 0.02, 0.0, 0.0};
  c.arms = {{"baseline", XgdMode::kNone, CldMode::kNone}, {"xgd_cld", XgdMode::kFull, CldMode::kForeground}};
  c.ablation_arms = {
      {"baseline", XgdMode::kNone, CldMode::kNone},
      {"xgd_center", XgdMode::kCenter, CldMode::kForeground},
      {"xgd_size", XgdMode::kSize, CldMode::kForeground},
      {"xgd_angle", XgdMode::kAngle, CldMode::kForeground},
      {"xgd_full", XgdMode::kFull, CldMode::kForeground},
      {"hq_boxes", XgdMode::kHighQuality, CldMode::kForeground},
      {"cld_positive", XgdMode::kFull, CldMode::kPositive},
      {"cld_classical", XgdMode::kFull, CldMode::kClassical},
      {"xgd_only", XgdMode::kFull, CldMode::kNone},
      {"cld_only", XgdMode::kNone, CldMode::kForeground},
  };
  sync_derived(c);
  return c;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c = default_config();
  Reader r(j, "$");
  r.get("experiment", c.experiment);
  r.get("seeds", c.seeds);
  r.get("train_scenes", c.train_scenes);
  r.get("val_scenes", c.val_scenes);
  r.get("output_dir", c.output_dir);
  if (c.seeds.empty()) throw ConfigError("$.seeds: at least one seed is required");
  if (c.train_scenes < 0) throw ConfigError("$.train_scenes: must be >= 0");
  if (c.val_scenes < 1) throw ConfigError("$.val_scenes: must be >= 1");

  if (r.has("grid")) {
    Reader g(r.at("grid"), "$.grid");
    g.get("x_range", c.grid.x_range);
    g.get("z_range", c.grid.z_range);
    g.get("cell", c.grid.cell);
    g.get("n_rotations", c.grid.n_rotations);
    g.finish();
  }

  if (r.has("classes")) {
    const json& arr = r.at("classes");
    if (!arr.is_array() || arr.empty()) throw ConfigError("$.classes: expected a non-empty array");
    c.classes.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string p = "$.classes[" + std::to_string(i) + "]";
      Reader k(arr[i], p);
      ClassSpec s;
      std::array<double, 3> size{1.0, 1.0, 1.0};
      std::array<int, 2> count{0, 0};
      k.get("name", s.name);
      k.get("size", size);
      k.get("cy", s.anchor.cy);
      k.get("count", count);
      k.number("pos_iou", s.thresholds.pos, 0.0, 1.0);
      k.number("neg_iou", s.thresholds.neg, 0.0, 1.0);
      k.get("eval_iou", s.eval_iou);
      k.finish();
      s.anchor.l = size[0];
      s.anchor.w = size[1];
      s.anchor.h = size[2];
      s.min_count = count[0];
      s.max_count = count[1];
      if (s.name.empty()) throw ConfigError(p + ".name: required");
      if (s.thresholds.neg > s.thresholds.pos) throw ConfigError(p + ": neg_iou must not exceed pos_iou");
      if (s.eval_iou.empty()) throw ConfigError(p + ".eval_iou: at least one threshold is required");
      for (double t : s.eval_iou) {
        if (!(t > 0.0 && t <= 1.0)) throw ConfigError(p + ".eval_iou: thresholds must lie in (0, 1]");
      }
      c.classes.push_back(s);
    }
  }

  if (r.has("scene")) {
    Reader s(r.at("scene"), "$.scene");
    s.number("size_jitter", c.scene.size_jitter, 0.0, 1.0);
    s.number("min_gap", c.scene.min_gap, 0.0, 100.0);
    s.number("edge_margin", c.scene.edge_margin, 0.0, 100.0);
    s.number("feature_radius", c.scene.features.radius, 0.0, 100.0);
    s.number("objectness_sigma", c.scene.features.objectness_sigma, 1e-6, 100.0);
    s.number("feature_noise", c.scene.features.position_noise, 0.0, 100.0);
    s.finish();
  }
  read_noise(r, "student_noise", c.scene.student);

  if (r.has("teacher")) {
    Reader t(r.at("teacher"), "$.teacher");
    read_noise(t, "noise", c.teacher.noise);
    t.number("anchor_jitter", c.teacher.anchor_jitter, 0.0, 10.0);
    t.number("radius", c.teacher.radius, 0.0, 100.0);
    t.get("logit_low", c.teacher.logit_low);
    t.get("logit_high", c.teacher.logit_high);
    t.number("logit_noise", c.teacher.logit_noise, 0.0, 100.0);
    t.finish();
  }
  read_noise(r, "replace_teacher_noise", c.replace_teacher_noise);

  if (r.has("assign")) {
    Reader a(r.at("assign"), "$.assign");
    a.number("fg_dilation", c.assign.fg_dilation, 0.0, 100.0);
    a.finish();
  }

  LossConfig& l = c.train.loss;
  if (r.has("loss")) {
    Reader s(r.at("loss"), "$.loss");
    std::string norm = "sum", order = "teacher_student", regate = "step";
    s.number("focal_gamma", l.base.focal_gamma, 0.0, 10.0);
    s.number("focal_alpha", l.base.focal_alpha, 0.0, 1.0);
    s.number("smooth_l1_beta", l.base.smooth_l1_beta, 1e-9, 10.0);
    s.number("lambda_xgd", l.lambda_xgd, 0.0, 1e6);
    s.number("lambda_cld", l.lambda_cld, 0.0, 1e6);
    s.number("tau", l.tau, 1e-6, 1e9);
    s.number("gate_eps", l.gate_eps, 0.0, 1.0);
    s.get("force_open", l.force_open);
    s.number("hq_threshold", l.hq_threshold, 0.0, 2.0);
    s.number("fd_step", l.fd_steps.center, 1e-9, 1.0);
    s.get("xgd_norm", norm);
    s.get("kl_order", order);
    s.get("regate", regate);
    s.finish();
    l.fd_steps.size = l.fd_steps.yaw = l.fd_steps.center;
    if (norm == "sum") {
      l.xgd_norm = XgdNormalization::kSum;
    } else if (norm == "mean") {
      l.xgd_norm = XgdNormalization::kMean;
    } else {
      throw ConfigError("$.loss.xgd_norm: expected 'sum' or 'mean'");
    }
    if (order == "teacher_student") {
      l.kl_order = KlOrder::kTeacherStudent;
    } else if (order == "student_teacher") {
      l.kl_order = KlOrder::kStudentTeacher;
    } else {
      throw ConfigError("$.loss.kl_order: expected 'teacher_student' or 'student_teacher'");
    }
    if (regate == "step") {
      c.train.regate = RegateSchedule::kEveryStep;
    } else if (regate == "epoch") {
      c.train.regate = RegateSchedule::kEveryEpoch;
    } else {
      throw ConfigError("$.loss.regate: expected 'step' or 'epoch'");
    }
  }

  OptimizerConfig& o = c.train.optimizer;
  if (r.has("optimizer")) {
    Reader s(r.at("optimizer"), "$.optimizer");
    s.number("lr", o.lr, 0.0, 10.0);
    s.number("weight_decay", o.weight_decay, 0.0, 10.0);
    s.number("beta1", o.beta1, 0.0, 0.999999);
    s.number("beta2", o.beta2, 0.0, 0.999999999);
    s.number("eps", o.eps, 1e-300, 1.0);
    s.get("epochs", o.epochs);
    s.get("batch", o.batch);
    s.number("init_prior", o.init_prior, 1e-9, 1.0 - 1e-9);
    s.number("init_sigma", o.init_sigma, 0.0, 10.0);
    s.finish();
    if (o.epochs < 0) throw ConfigError("$.optimizer.epochs: must be >= 0");
    if (o.batch == 0) throw ConfigError("$.optimizer.batch: must be >= 1");
  }

  if (r.has("eval")) {
    Reader s(r.at("eval"), "$.eval");
    s.number("score_thr", c.nms.score_thr, 0.0, 1.0);
    s.number("nms_iou", c.nms.nms_iou, 1e-9, 1.0);
    s.get("pre_nms_max", c.nms.pre_nms_max);
    s.get("post_nms_max", c.nms.post_nms_max);
    s.get("recall_positions", c.recall_positions);
    s.finish();
    if (c.recall_positions != 40 && c.recall_positions != 11) {
      throw ConfigError("$.eval.recall_positions: expected 40 or 11");
    }
  }

  if (r.has("arms")) c.arms = read_arms(r.at("arms"), "$.arms");
  if (r.has("ablation_arms")) c.ablation_arms = read_arms(r.at("ablation_arms"), "$.ablation_arms");
  r.finish();
  if (c.arms.empty()) throw ConfigError("$.arms: at least one arm is required");

  sync_derived(c);
  try {
    build_anchor_grid(c.grid);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("$.grid: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json classes = json::array();
  for (const ClassSpec& k : c.classes) {
    classes.push_back({{"name", k.name},
                       {"size", {k.anchor.l, k.anchor.w, k.anchor.h}},
                       {"cy", k.anchor.cy},
                       {"count", {k.min_count, k.max_count}},
                       {"pos_iou", k.thresholds.pos},
                       {"neg_iou", k.thresholds.neg},
                       {"eval_iou", k.eval_iou}});
  }
  const LossConfig& l = c.train.loss;
  const OptimizerConfig& o = c.train.optimizer;
  return {
      {"experiment", c.experiment},
      {"seeds", c.seeds},
      {"train_scenes", c.train_scenes},
      {"val_scenes", c.val_scenes},
      {"output_dir", c.output_dir},
      {"grid", {{"x_range", c.grid.x_range}, {"z_range", c.grid.z_range}, {"cell", c.grid.cell},
                {"n_rotations", c.grid.n_rotations}}},
      {"classes", classes},
      {"scene", {{"size_jitter", c.scene.size_jitter}, {"min_gap", c.scene.min_gap},
                 {"edge_margin", c.scene.edge_margin}, {"feature_radius", c.scene.features.radius},
                 {"objectness_sigma", c.scene.features.objectness_sigma},
                 {"feature_noise", c.scene.features.position_noise}}},
      {"student_noise", noise_json(c.scene.student)},
      {"teacher", {{"noise", noise_json(c.teacher.noise)}, {"anchor_jitter", c.teacher.anchor_jitter},
                   {"radius", c.teacher.radius}, {"logit_low", c.teacher.logit_low},
                   {"logit_high", c.teacher.logit_high}, {"logit_noise", c.teacher.logit_noise}}},
      {"replace_teacher_noise", noise_json(c.replace_teacher_noise)},
      {"assign", {{"fg_dilation", c.assign.fg_dilation}}},
      {"loss", {{"focal_gamma", l.base.focal_gamma}, {"focal_alpha", l.base.focal_alpha},
                {"smooth_l1_beta", l.base.smooth_l1_beta}, {"lambda_xgd", l.lambda_xgd},
                {"lambda_cld", l.lambda_cld}, {"tau", l.tau}, {"gate_eps", l.gate_eps},
                {"force_open", l.force_open}, {"hq_threshold", l.hq_threshold}, {"fd_step", l.fd_steps.center},
                {"xgd_norm", l.xgd_norm == XgdNormalization::kSum ? "sum" : "mean"},
                {"kl_order", l.kl_order == KlOrder::kTeacherStudent ? "teacher_student" : "student_teacher"},
                {"regate", c.train.regate == RegateSchedule::kEveryStep ? "step" : "epoch"}}},
      {"optimizer", {{"lr", o.lr}, {"weight_decay", o.weight_decay}, {"beta1", o.beta1}, {"beta2", o.beta2},
                     {"eps", o.eps}, {"epochs", o.epochs}, {"batch", o.batch}, {"init_prior", o.init_prior},
                     {"init_sigma", o.init_sigma}}},
      {"eval", {{"score_thr", c.nms.score_thr}, {"nms_iou", c.nms.nms_iou}, {"pre_nms_max", c.nms.pre_nms_max},
                {"post_nms_max", c.nms.post_nms_max}, {"recall_positions", c.recall_positions}}},
      {"arms", arms_json(c.arms)},
      {"ablation_arms", arms_json(c.ablation_arms)},
  };
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string s = to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

AnchorGrid make_grid(const ExperimentConfig& config) { return build_anchor_grid(config.grid); }

}  // namespace xdistill
