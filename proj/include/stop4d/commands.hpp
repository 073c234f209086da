#pragma once

// Operator commands behind the stop4d executable.

#include "stop4d/config.hpp"
#include "stop4d/lidar_io.hpp"
#include "stop4d/metrics.hpp"
#include "stop4d/model.hpp"
#include "stop4d/pipeline.hpp"
#include "stop4d/synth.hpp"
#include "stop4d/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace stop4d::commands {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigFailure = 2, kFormatFailure = 3, kNumericFailure = 4 };

/// Maps an exception from any command to its exit code and message.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigFailure;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericFailure;
  if (dynamic_cast<const FormatError*>(&e)) return kFormatFailure;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kFormatFailure;
  return 1;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

/// Generates a scene (default scene when `scene_file` is empty) into out.
inline synth::Sequence synth_gen(const fs::path& scene_file, const fs::path& out, const Config& cfg,
                                 std::optional<std::uint64_t> seed = std::nullopt) {
  synth::SceneSpec spec = scene_file.empty() ? synth::default_scene() : synth::load_scene(scene_file);
  if (seed) spec.seed = *seed;
  spec.validate(cfg.temporal_window);
  auto seq = synth::generate(spec);
  synth::write_dataset(out, seq);
  return seq;
}

struct TrainCommand {
  fs::path data;
  fs::path checkpoint;
  fs::path loss_csv;
  fs::path resume;
  long long checkpoint_every = 0;
  long long stop_after = -1;
};

inline training::TrainResult train(const TrainCommand& c, const Config& cfg, std::ostream& log) {
  const auto scans = lidar_io::load_sequence(c.data);
  training::TrainOptions opt;
  opt.checkpoint = c.checkpoint;
  opt.checkpoint_every = c.checkpoint_every;
  opt.loss_csv = c.loss_csv.empty() ? fs::path(c.checkpoint.string() + ".losses.csv") : c.loss_csv;
  opt.stop_after = c.stop_after;
  opt.log = [&log](const std::string& s) { log << s << '\n'; };
  Model m(cfg);
  if (!c.resume.empty()) {
    TrainState st;
    m = load_model(c.resume, cfg, &st);
    opt.resume = st;
  } else {
    m.init(cfg.rng_seed);
  }
  return training::train(scans, m, cfg, opt);
}

struct InferCommand {
  fs::path data;
  fs::path out;
  fs::path checkpoint;
  bool oracle = false;
  fs::path dump_features;
};

inline pipeline::RunResult infer(const InferCommand& c, const Config& cfg) {
  const auto scans = lidar_io::load_sequence(c.data);
  std::optional<Model> model;
  if (!c.checkpoint.empty()) model = load_model(c.checkpoint, cfg);
  pipeline::RunOptions opt;
  opt.model = model ? &*model : nullptr;
  opt.oracle = c.oracle;
  opt.dump_features = !c.dump_features.empty();
  auto r = pipeline::run_sequence(scans, cfg, opt);
  pipeline::write_run(c.out, r);
  if (opt.dump_features) write_text(c.dump_features, r.feature_dump);
  return r;
}

/// Scores pred_dir against gt_dir and writes report.csv and report.txt into
/// out_dir (when given).
inline metrics::EvalReport eval(const fs::path& gt_dir, const fs::path& pred_dir, const fs::path& out_dir,
                                const Config& cfg) {
  auto r = metrics::evaluate_dirs(gt_dir, pred_dir, cfg);
  if (!out_dir.empty()) {
    write_text(out_dir / "report.csv", metrics::report_csv(r));
    write_text(out_dir / "report.txt", metrics::report_table(r, cfg));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Ablation sweeps
// ---------------------------------------------------------------------------

struct SweepPoint {
  std::string sweep;
  std::string value;
  Config cfg;
};

/// Named sweeps; "all" concatenates every sweep.
inline std::vector<SweepPoint> sweep_points(const std::string& name, const Config& base) {
  std::vector<SweepPoint> out;
  auto add = [&](const std::string& sweep, const std::string& key, const std::vector<std::string>& values) {
    for (const auto& v : values) {
      Config c = base;
      c.set(key, v);
      out.push_back({sweep, v, c});
    }
  };
  const bool all = name == "all";
  bool known = all;
  if (all || name == "proposals") {
    add("proposals", "num_proposals", {"100", "200", "300", "400", "500", "600"});
    known = true;
  }
  if (all || name == "radius") {
    add("radius", "group_radius", {"0.2", "0.4", "0.6", "0.8", "1.0"});
    known = true;
  }
  if (all || name == "sampling") {
    add("sampling", "sampling", {"fps", "random"});
    known = true;
  }
  if (all || name == "aggregate") {
    add("aggregate", "aggregate", {"nms", "centers", "dbscan"});
    known = true;
  }
  if (all || name == "features") {
    add("features", "features", {"center", "center+radius", "full"});
    known = true;
  }
  if (all || name == "variant") {
    add("variant", "variant", {"voting"});
    for (const auto& p : aggregation::gaussian_presets()) {
      Config c = base;
      c.variant = Variant::Gaussian;
      c.probability_threshold = p.probability_threshold;
      c.selection_radius = p.selection_radius;
      out.push_back({"variant", std::string("gaussian-") + p.name, c});
    }
    known = true;
  }
  if (!known) throw ConfigError("sweep", "expected proposals|radius|sampling|aggregate|features|variant|all");
  return out;
}

struct AblateCommand {
  fs::path data;
  fs::path out;  // directory: ablation.csv plus one prediction dir per point
  std::string sweep = "all";
  fs::path checkpoint;
  bool oracle = false;
};

inline std::string ablate(const AblateCommand& c, const Config& base) {
  const auto scans = lidar_io::load_sequence(c.data);
  std::ostringstream csv;
  csv << "sweep,value,lstq,s_assoc,s_cls,seconds\n";
  for (const auto& p : sweep_points(c.sweep, base)) {
    std::optional<Model> model;
    if (!c.checkpoint.empty()) {
      try {
        model = load_model(c.checkpoint, p.cfg);
      } catch (const ConfigError& e) {
        // A checkpoint with another aggregation width cannot serve this point.
        csv << p.sweep << ',' << p.value << ",,,,skipped: " << e.key() << '\n';
        continue;
      }
    }
    pipeline::RunOptions opt;
    opt.model = model ? &*model : nullptr;
    opt.oracle = c.oracle;
    const auto r = pipeline::run_sequence(scans, p.cfg, opt);
    const fs::path dir = c.out / "runs" / (p.sweep + "_" + p.value);
    pipeline::write_run(dir, r);
    const auto rep = metrics::evaluate_dirs(c.data, dir, p.cfg);
    csv << p.sweep << ',' << p.value << ',' << metrics::fixed(rep.lstq, 6) << ',' << metrics::fixed(rep.s_assoc, 6)
        << ',' << metrics::fixed(rep.s_cls, 6) << ',' << metrics::fixed(r.timings.total, 3) << '\n';
  }
  write_text(c.out / "ablation.csv", csv.str());
  return csv.str();
}

}  // namespace stop4d::commands
