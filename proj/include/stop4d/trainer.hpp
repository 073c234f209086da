#pragma once

// Two-phase training: phase 1 fits the encoder and the semantic,
// objectness and voting heads; phase 2 freezes them and fits the
// aggregation network on proposals built from the frozen votes.

#include "stop4d/aggregation.hpp"
#include "stop4d/config.hpp"
#include "stop4d/encoder_heads.hpp"
#include "stop4d/model.hpp"
#include "stop4d/pipeline.hpp"
#include "stop4d/proposals.hpp"
#include "stop4d/tinynet.hpp"
#include "stop4d/volume4d.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <vector>

namespace stop4d::training {

using tinynet::Matrix;

/// One training volume with its fixed descriptors and targets.
struct TrainWindow {
  PointCloud4D volume;
  Matrix descriptors;
  std::vector<InstanceGT4D> gt;
  encoder::PointTargets targets;
};

/// Windows ending at every scan; past scans are importance-sampled with the
/// ground-truth objectness.
inline std::vector<TrainWindow> build_windows(std::span<const Scan> scans, const Config& cfg) {
  std::vector<std::vector<double>> objectness;
  for (const auto& s : scans) objectness.push_back(volume4d::gt_objectness(s, cfg));
  std::vector<TrainWindow> out;
  for (std::size_t t = 0; t < scans.size(); ++t) {
    const std::size_t first = pipeline::window_start(t, cfg.temporal_window);
    Rng rng = pipeline::window_rng(cfg, t, 1);
    TrainWindow w;
    w.volume = volume4d::form_volume(scans.subspan(first, t - first + 1), static_cast<std::uint32_t>(first),
                                     std::span<const std::vector<double>>(objectness.data() + first, t - first), cfg,
                                     rng);
    if (!w.volume.has_gt()) throw FormatError("training needs labeled scans");
    w.descriptors = encoder::descriptors(w.volume);
    w.gt = volume4d::recompute_gt(w.volume);
    w.targets = encoder::make_targets(w.volume, w.gt, cfg);
    out.push_back(std::move(w));
  }
  return out;
}

/// Proposal training data for the aggregation network.
struct AggWindow {
  std::vector<Vec3> positions;
  Matrix features;
  std::vector<proposals::Proposal> proposals;
  std::vector<InstanceGT4D> gt;
};

/// Proposals from per-point offsets over the GT foreground, with per-point
/// features from `net` (frozen).
inline AggWindow make_agg_window(const PointCloud4D& v, const Matrix& features, std::span<const Vec3> offsets,
                                 std::vector<InstanceGT4D> gt, const Config& cfg, Rng& rng) {
  AggWindow a;
  a.positions = v.positions;
  a.features = features;
  a.gt = std::move(gt);
  std::vector<std::uint8_t> fg(v.size(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) fg[i] = cfg.is_thing(v.semantic_gt[i]) && v.instance_gt[i] > 0;
  const auto votes = proposals::apply_votes(v.positions, offsets, fg);
  a.proposals = pipeline::dedup_proposals(proposals::generate(votes, cfg, rng));
  return a;
}

inline std::vector<AggWindow> build_agg_windows(const std::vector<TrainWindow>& windows, const Model& m,
                                                const Config& cfg) {
  std::vector<AggWindow> out;
  for (std::size_t t = 0; t < windows.size(); ++t) {
    const auto pass = m.net.forward(windows[t].descriptors);
    std::vector<Vec3> offsets(windows[t].volume.size());
    for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = pass.offsets.row(static_cast<Eigen::Index>(i));
    Rng rng = pipeline::window_rng(cfg, t, 3);
    out.push_back(make_agg_window(windows[t].volume, pass.features, offsets, windows[t].gt, cfg, rng));
  }
  return out;
}

struct LossRow {
  long long iteration = 0;
  int phase = 1;
  double sem = 0.0;
  double vot = 0.0;
  double agg = 0.0;
  double obj = 0.0;
};

inline std::string loss_csv_header() { return "iteration,phase,L_sem,L_vot,L_agg,L_obj\n"; }

inline std::string loss_csv_row(const LossRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.iteration << ',' << r.phase << ',' << r.sem << ',' << r.vot << ',' << r.agg << ',' << r.obj << '\n';
  return os.str();
}

inline Rng iteration_rng(const Config& cfg, long long iteration) {
  return Rng(Rng::splitmix(cfg.rng_seed ^ Rng::splitmix(0x5EED0000ull + static_cast<std::uint64_t>(iteration))));
}

inline void check_finite(const LossRow& r) {
  for (double v : {r.sem, r.vot, r.agg, r.obj})
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << r.iteration << " (phase " << r.phase << "): L_sem=" << r.sem
         << " L_vot=" << r.vot << " L_agg=" << r.agg << " L_obj=" << r.obj;
      throw NumericError(os.str());
    }
}

/// One phase-1 step on a random point batch of a random window.
inline LossRow phase1_step(Model& m, tinynet::Sgd& opt, const std::vector<TrainWindow>& windows, const Config& cfg,
                           long long iteration) {
  Rng rng = iteration_rng(cfg, iteration);
  const auto& w = windows[rng.below(windows.size())];
  const auto idx = proposals::random_sample(w.volume.size(), static_cast<std::size_t>(cfg.batch_points), rng);
  const auto b = static_cast<Eigen::Index>(idx.size());
  Matrix desc(b, w.descriptors.cols());
  std::vector<int> sem(idx.size());
  std::vector<std::uint8_t> fg(idx.size());
  std::vector<Vec3> pos(idx.size()), ctr(idx.size());
  std::vector<double> obj(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto i = idx[k];
    desc.row(static_cast<Eigen::Index>(k)) = w.descriptors.row(static_cast<Eigen::Index>(i));
    sem[k] = w.targets.semantic[i];
    fg[k] = w.targets.foreground[i];
    pos[k] = w.volume.positions[i];
    ctr[k] = w.targets.center[i];
    obj[k] = w.targets.objectness[i];
  }
  const auto pass = m.net.forward(desc);
  const auto l_sem = encoder::semantic_loss(pass.logits, sem);
  const auto l_vot = encoder::voting_loss(pos, pass.offsets, ctr, fg, cfg.huber_delta);
  const auto l_obj = encoder::objectness_loss(pass.objectness_logit, obj);
  LossRow row{iteration, 1, l_sem.loss, l_vot.loss, 0.0, l_obj.loss};
  check_finite(row);

  const auto& wt = cfg.phase1_weights;
  m.net.zero_grad();
  m.net.backward(pass, wt.alpha * l_sem.grad, wt.beta * l_obj.grad, wt.beta * l_vot.grad);
  const auto params = m.net.parameters();
  tinynet::clip_grad_norm(params, cfg.grad_clip);
  opt.step(params);
  return row;
}

/// One phase-2 step on random proposals of a random window. Only the
/// aggregation network changes.
inline LossRow phase2_step(Model& m, tinynet::Sgd& opt, const std::vector<AggWindow>& windows, const Config& cfg,
                           long long iteration, const LossWeights& weights) {
  Rng rng = iteration_rng(cfg, iteration);
  LossRow row{iteration, 2, 0.0, 0.0, 0.0, 0.0};
  std::vector<std::size_t> usable;
  for (std::size_t k = 0; k < windows.size(); ++k)
    if (!windows[k].proposals.empty() && !windows[k].gt.empty()) usable.push_back(k);
  if (usable.empty()) return row;
  const auto& w = windows[usable[rng.below(usable.size())]];
  const auto pick = proposals::random_sample(w.proposals.size(), static_cast<std::size_t>(cfg.batch_proposals), rng);

  m.agg.zero_grad();
  const double inv = 1.0 / static_cast<double>(pick.size());
  for (auto j : pick) {
    const auto& p = w.proposals[j];
    const auto pass = m.agg.forward(w.features, w.positions, p);
    const auto& g = w.gt[static_cast<std::size_t>(volume4d::closest_gt(w.gt, p.center))];
    const auto l = aggregation::geometric_loss(pass.out, p.center, g, cfg.huber_delta);
    row.agg += inv * l.loss;
    m.agg.backward(pass, weights.gamma * inv * l.grad);
  }
  check_finite(row);
  const auto params = m.agg.parameters();
  tinynet::clip_grad_norm(params, cfg.grad_clip);
  opt.step(params);
  return row;
}

/// Mean voting loss and mean vote-to-center distance over the foreground of
/// every window, evaluated on all points.
struct VoteStats {
  double loss = 0.0;
  double error = 0.0;
};

inline VoteStats evaluate_votes(const Model& m, const std::vector<TrainWindow>& windows, const Config& cfg) {
  VoteStats s;
  double err_sum = 0.0;
  std::size_t err_n = 0;
  for (const auto& w : windows) {
    const auto pass = m.net.forward(w.descriptors);
    s.loss += encoder::voting_loss(w.volume.positions, pass.offsets, w.targets.center, w.targets.foreground,
                                   cfg.huber_delta)
                  .loss /
              static_cast<double>(windows.size());
    for (std::size_t i = 0; i < w.volume.size(); ++i) {
      if (!w.targets.foreground[i]) continue;
      const Vec3 vote = w.volume.positions[i] + pass.offsets.row(static_cast<Eigen::Index>(i)).transpose();
      err_sum += (vote - w.targets.center[i]).norm();
      ++err_n;
    }
  }
  s.error = err_n ? err_sum / static_cast<double>(err_n) : 0.0;
  return s;
}

/// Fraction of labeled points whose predicted class matches the GT.
inline double point_accuracy(const Model& m, const std::vector<TrainWindow>& windows) {
  std::size_t hit = 0, n = 0;
  for (const auto& w : windows) {
    const auto pass = m.net.forward(w.descriptors);
    for (std::size_t i = 0; i < w.volume.size(); ++i) {
      if (w.targets.semantic[i] < 0) continue;
      ++n;
      hit += tinynet::argmax_row(pass.logits, static_cast<Eigen::Index>(i)) == w.targets.semantic[i];
    }
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

struct TrainOptions {
  std::filesystem::path checkpoint;    // written at the end and every checkpoint_every iterations
  long long checkpoint_every = 0;      // 0: only at the end
  std::filesystem::path loss_csv;      // empty: no file
  long long stop_after = -1;           // stop once this many iterations are complete
  std::optional<TrainState> resume;    // continue from a saved state
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  std::vector<LossRow> rows;
  long long completed = 0;
  TrainState state;
};

/// Runs both phases. Iteration k draws its batch from a stream seeded by
/// (rng_seed, k), so an interrupted run resumed from a checkpoint of
/// iteration k continues bit-identically.
inline TrainResult train(std::span<const Scan> scans, Model& m, const Config& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  const auto windows = build_windows(scans, cfg);
  const long long p1 = cfg.phase1_iterations;
  const long long total = p1 + cfg.phase2_iterations;

  TrainResult res;
  tinynet::Sgd sgd(cfg.learning_rate, cfg.momentum);
  long long start = 0;
  if (opt.resume) {
    start = opt.resume->iteration;
    sgd.velocity() = opt.resume->velocity;
    log("resuming at iteration " + std::to_string(start));
  }

  std::ofstream csv;
  if (!opt.loss_csv.empty()) {
    const bool append = start > 0 && std::filesystem::exists(opt.loss_csv);
    csv.open(opt.loss_csv, append ? std::ios::app : std::ios::trunc);
    if (!csv) throw FormatError("cannot write " + opt.loss_csv.string());
    if (!append) csv << loss_csv_header();
  }

  auto snapshot = [&](long long done) {
    res.state.iteration = done;
    res.state.velocity = sgd.velocity();
    if (!opt.checkpoint.empty()) save_model(opt.checkpoint, m, &res.state);
  };

  std::vector<AggWindow> agg_windows;
  if (start < p1)
    log("phase 1: iterations " + std::to_string(start) + ".." + std::to_string(p1 - 1) +
        ", training encoder, semantic, objectness and voting heads");
  long long k = start;
  for (; k < total; ++k) {
    if (opt.stop_after >= 0 && k >= opt.stop_after) break;
    if (k >= p1 && agg_windows.empty()) {
      log("phase 2: iterations " + std::to_string(k) + ".." + std::to_string(total - 1) +
          ", encoder and heads frozen, training aggregation");
      agg_windows = build_agg_windows(windows, m, cfg);
    }
    const LossRow row = k < p1 ? phase1_step(m, sgd, windows, cfg, k)
                               : phase2_step(m, sgd, agg_windows, cfg, k, cfg.phase2_weights);
    res.rows.push_back(row);
    if (csv) csv << loss_csv_row(row);
    if (opt.checkpoint_every > 0 && (k + 1) % opt.checkpoint_every == 0) snapshot(k + 1);
  }
  res.completed = k;
  snapshot(k);
  log("finished at iteration " + std::to_string(k));
  return res;
}

/// Fits only the aggregation network on prepared proposal windows.
inline std::vector<LossRow> train_aggregation(Model& m, const std::vector<AggWindow>& windows, const Config& cfg,
                                              long long iterations) {
  tinynet::Sgd sgd(cfg.learning_rate, cfg.momentum);
  std::vector<LossRow> rows;
  const LossWeights w{0.0, 0.0, 1.0};
  for (long long k = 0; k < iterations; ++k) rows.push_back(phase2_step(m, sgd, windows, cfg, k, w));
  return rows;
}

}  // namespace stop4d::training
