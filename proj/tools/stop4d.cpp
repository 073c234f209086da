// stop4d: synthetic data generation, training, inference, evaluation and
// ablation sweeps for the 4D panoptic segmentation pipeline.

#include "stop4d/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace {

using namespace stop4d;
namespace fs = std::filesystem;

struct Globals {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

Config build_config(const Globals& g) {
  Config cfg = g.config_file.empty() ? Config{} : load_config(g.config_file);
  for (const auto& [k, v] : g.overrides)
    if (!v.empty()) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D panoptic LiDAR segmentation: synth-gen | train | infer | eval | ablate"};
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  app.add_option("--config", g.config_file, "Plain-text config file (key = value lines)");
  for (const auto& key : Config::keys())
    app.add_option("--" + key, g.overrides[key], "Config override: " + key + " (default " + Config{}.get(key) + ")");

  // synth-gen
  auto* gen = app.add_subcommand("synth-gen", "Generate a synthetic labeled sequence");
  std::string scene_file, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--scene", scene_file, "Scene spec file (default: built-in scene)");
  gen->add_option("--out", gen_out, "Output sequence directory")->required();
  gen->add_option("--seed", gen_seed, "Override the scene seed");

  // train
  auto* tr = app.add_subcommand("train", "Two-phase training on a labeled sequence");
  commands::TrainCommand tc;
  std::string tr_data, tr_ckpt, tr_csv, tr_resume;
  tr->add_option("--data", tr_data, "Sequence directory")->required();
  tr->add_option("--out", tr_ckpt, "Checkpoint path")->required();
  tr->add_option("--loss-csv", tr_csv, "Loss curve CSV (default: <out>.losses.csv)");
  tr->add_option("--resume", tr_resume, "Resume from a checkpoint written by train");
  tr->add_option("--checkpoint-every", tc.checkpoint_every, "Also checkpoint every N iterations");
  tr->add_option("--stop-after", tc.stop_after, "Stop once N iterations are complete");

  // infer
  auto* inf = app.add_subcommand("infer", "Predict tracklets for a sequence");
  commands::InferCommand ic;
  std::string inf_data, inf_out, inf_ckpt, inf_dump;
  std::optional<int> inf_scans;
  inf->add_option("--data", inf_data, "Sequence directory")->required();
  inf->add_option("--out", inf_out, "Prediction directory")->required();
  inf->add_option("--checkpoint", inf_ckpt, "Trained checkpoint");
  inf->add_flag("--oracle", ic.oracle, "Use ground-truth votes and semantics instead of the learned heads");
  inf->add_option("--scans", inf_scans, "Temporal window T (scans per volume)");
  inf->add_option("--dump-features", inf_dump, "Write per-proposal geometric features to this CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  std::string ev_gt, ev_pred, ev_out;
  ev->add_option("--gt", ev_gt, "Ground-truth sequence directory")->required();
  ev->add_option("--pred", ev_pred, "Prediction directory")->required();
  ev->add_option("--out", ev_out, "Directory for report.csv and report.txt");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run configuration sweeps and tabulate scores");
  commands::AblateCommand ac;
  std::string ab_data, ab_out, ab_ckpt;
  ab->add_option("--data", ab_data, "Labeled sequence directory")->required();
  ab->add_option("--out", ab_out, "Output directory")->required();
  ab->add_option("--sweep", ac.sweep, "proposals|radius|sampling|aggregate|features|variant|all");
  ab->add_option("--checkpoint", ab_ckpt, "Trained checkpoint");
  ab->add_flag("--oracle", ac.oracle, "Use ground-truth votes and semantics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : commands::kConfigFailure;
  }

  try {
    if (inf->parsed() && inf_scans) g.overrides["temporal_window"] = std::to_string(*inf_scans);
    const Config cfg = build_config(g);

    if (gen->parsed()) {
      const auto seq = commands::synth_gen(scene_file, gen_out, cfg, gen_seed);
      std::cout << "wrote " << seq.scans.size() << " scans to " << gen_out << '\n';
    } else if (tr->parsed()) {
      tc.data = tr_data;
      tc.checkpoint = tr_ckpt;
      tc.loss_csv = tr_csv;
      tc.resume = tr_resume;
      const auto r = commands::train(tc, cfg, std::cout);
      std::cout << "checkpoint " << tr_ckpt << " after " << r.completed << " iterations\n";
    } else if (inf->parsed()) {
      ic.data = inf_data;
      ic.out = inf_out;
      ic.checkpoint = inf_ckpt;
      ic.dump_features = inf_dump;
      const auto r = commands::infer(ic, cfg);
      std::cout << "wrote " << r.tracklets.size() << " tracklets over " << r.scan_sizes.size() << " scans to "
                << inf_out << " in " << metrics::fixed(r.timings.total, 3) << " s\n";
    } else if (ev->parsed()) {
      const auto r = commands::eval(ev_gt, ev_pred, ev_out, cfg);
      std::cout << metrics::report_table(r, cfg);
    } else if (ab->parsed()) {
      ac.data = ab_data;
      ac.out = ab_out;
      ac.checkpoint = ab_ckpt;
      std::cout << commands::ablate(ac, cfg);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return commands::kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return commands::exit_code_for(e);
  }
  return commands::kOk;
}
