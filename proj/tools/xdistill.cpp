#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xdistill/config.hpp"
#include "xdistill/experiment.hpp"
#include "xdistill/verify.hpp"

using namespace xdistill;
using nlohmann::json;

namespace {

void progress(const std::string& msg) { std::cerr << msg << "\n"; }

const ArmSpec& find_arm(const ExperimentConfig& c, const std::string& name) {
  if (name.empty()) return c.arms.front();
  for (const auto* list : {&c.arms, &c.ablation_arms}) {
    for (const ArmSpec& a : *list) {
      if (a.name == name) return a;
    }
  }
  throw std::invalid_argument("no arm named '" + name + "' in the config");
}

json scene_record(const std::string& split, std::uint64_t experiment_seed, const Scene& s) {
  json gts = json::array();
  for (const GroundTruth& g : s.gts) gts.push_back({{"class_id", g.class_id}, {"box", g.box.to_array()}});
  return {{"split", split}, {"experiment_seed", experiment_seed}, {"seed", s.seed}, {"gts", gts}};
}

void print_aggregate(const ExperimentReport& r) {
  for (const json& a : aggregate(r)) {
    std::printf("%-16s %-12s iou %.2f  AP3D %.4f +- %.4f  AP_BEV %.4f +- %.4f\n",
                a["arm"].get<std::string>().c_str(), a["class"].get<std::string>().c_str(),
                a["iou_thr"].get<double>(), a["ap3d_mean"].get<double>(), a["ap3d_std"].get<double>(),
                a["ap_bev_mean"].get<double>(), a["ap_bev_std"].get<double>());
  }
}

void print_deltas(const ExperimentReport& r) {
  if (r.rows.empty()) return;
  for (const json& d : paired_deltas(r, r.rows.front().arm)) {
    std::printf("delta %-16s vs %-10s %-12s mean %+.4f  std %.4f\n", d["arm"].get<std::string>().c_str(),
                d["reference"].get<std::string>().c_str(), d["class"].get<std::string>().c_str(),
                d["mean"].get<double>(), d["std"].get<double>());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Response-level distillation testbed for anchor-based 3D detection"};
  app.require_subcommand(1);

  std::string config_path, out_path, params_path, arm_name;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> modes;
  double scale = 1.0;

  auto* gen = app.add_subcommand("gen-data", "Write train/val scenes as JSON lines");
  gen->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  gen->add_option("out", out_path, "Output .jsonl")->required();

  auto* tr = app.add_subcommand("train", "Train one arm on one seed and save the parameters");
  tr->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  tr->add_option("--arm", arm_name, "Arm name (default: first arm)");
  tr->add_option("--seed", seed, "Experiment seed (default: first configured seed)");
  tr->add_option("--out", out_path, "Parameter file (default: <output_dir>/<arm>_seed<seed>.params.json)");

  auto* ev = app.add_subcommand("eval", "Evaluate saved parameters on the validation scenes");
  ev->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  ev->add_option("params", params_path)->required()->check(CLI::ExistingFile);

  auto* run = app.add_subcommand("run", "Train and evaluate every arm on every seed");
  run->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* abl = app.add_subcommand("ablate", "Run the ablation arm matrix");
  abl->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("replace", "Evaluate the baseline with teacher heads swapped in");
  rep->add_option("config", config_path)->required()->check(CLI::ExistingFile);
  rep->add_option("--mode", modes, "regression | classification | both | none (repeatable)")
      ->required()
      ->check(CLI::IsMember({"regression", "classification", "both", "none"}));

  auto* ver = app.add_subcommand("verify", "Run the property-verification suite");
  ver->add_option("--scale", scale, "Shrink sample counts, in (0, 1]")->check(CLI::Range(1e-6, 1.0));

  CLI11_PARSE(app, argc, argv);
  seed_given = tr->count("--seed") > 0;

  try {
    if (ver->parsed()) {
      const auto results = run_verify_suite(default_hooks(), scale);
      std::cout << format_results(results);
      return all_passed(results) ? 0 : 1;
    }

    const ExperimentConfig config = load_config(config_path);
    const AnchorGrid grid = make_grid(config);

    if (gen->parsed()) {
      std::ofstream out(out_path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + out_path);
      std::size_t lines = 0;
      for (std::uint64_t s : config.seeds) {
        const SeedData d = make_seed_data(config, grid, s);
        for (const SceneData& x : d.train) out << scene_record("train", s, x.scene).dump() << "\n";
        for (const SceneData& x : d.val) out << scene_record("val", s, x.scene).dump() << "\n";
        lines += d.train.size() + d.val.size();
      }
      std::cerr << "wrote " << lines << " scenes to " << out_path << "\n";
      return 0;
    }

    if (tr->parsed()) {
      const ArmSpec& arm = find_arm(config, arm_name);
      if (!seed_given) seed = config.seeds.front();
      const SeedData d = make_seed_data(config, grid, seed);
      TrainConfig tc = config.train;
      tc.loss.xgd = arm.xgd;
      tc.loss.cld = arm.cld;
      tc.seed = mix_seed(seed, 7);
      const TrainResult r = train(d.train, grid, tc);
      for (const EpochRecord& e : r.history) {
        std::printf("epoch %3d  total %.5f  ori %.5f (cls %.5f reg %.5f)  xgd %.5f  cld %.5f  keep c/s/a %zu/%zu/%zu of %zu\n",
                    e.epoch, e.total, e.ori, e.cls, e.reg, e.xgd, e.cld, e.gate.kept_center, e.gate.kept_size,
                    e.gate.kept_angle, e.gate.evaluated);
      }
      if (out_path.empty()) {
        std::filesystem::create_directories(config.output_dir);
        out_path = config.output_dir + "/" + arm.name + "_seed" + std::to_string(seed) + ".params.json";
      }
      const json j = {{"arm", arm.name},
                      {"seed", seed},
                      {"config_hash", config_hash(config)},
                      {"feature_dim", r.params.feature_dim()},
                      {"anchors_per_position", r.params.anchors_per_position()},
                      {"num_classes", r.params.num_classes()},
                      {"data", r.params.data()}};
      std::ofstream(out_path, std::ios::binary) << j.dump() << "\n";
      std::cerr << "saved " << out_path << "\n";
      return 0;
    }

    if (ev->parsed()) {
      std::ifstream in(params_path);
      const json j = json::parse(in);
      DetectorParams p(j.at("feature_dim").get<std::size_t>(), j.at("anchors_per_position").get<std::size_t>(),
                       j.at("num_classes").get<std::size_t>());
      const auto data = j.at("data").get<std::vector<double>>();
      if (data.size() != p.size()) throw std::runtime_error(params_path + ": parameter count mismatch");
      p.data() = data;
      const std::uint64_t s = j.at("seed").get<std::uint64_t>();
      const SeedData d = make_seed_data(config, grid, s);
      std::vector<ModelOutputs> outs;
      for (const SceneData& x : d.val) outs.push_back(student_forward(p, x.scene.features, grid));
      ExperimentReport r;
      r.experiment = config.experiment;
      for (const ClassAp& c : evaluate_outputs(outs, d.val, grid, config)) {
        r.rows.push_back({config.experiment, j.at("arm").get<std::string>(), c.class_name, c.iou_thr, s, c.ap3d.ap,
                          c.ap_bev.ap, 0.0, 0.0, 0.0, 0.0});
      }
      std::cout << to_csv(r.rows);
      return 0;
    }

    if (run->parsed()) {
      const ExperimentReport r = run_experiment(config, progress);
      write_report(r, config.output_dir, r.experiment);
      print_aggregate(r);
      print_deltas(r);
      return 0;
    }

    if (abl->parsed()) {
      const ExperimentReport r = run_ablations(config, progress);
      write_report(r, config.output_dir, r.experiment);
      print_aggregate(r);
      print_deltas(r);
      return 0;
    }

    if (rep->parsed()) {
      std::vector<ReplaceMode> parsed;
      for (const std::string& m : modes) parsed.push_back(parse_replace_mode(m));
      const ExperimentReport r = run_replacement(config, parsed, progress);
      write_report(r, config.output_dir, r.experiment);
      print_aggregate(r);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
