#pragma once

// End-to-end inference over a sequence: window formation, per-point
// predictions (learned or oracle), proposals, aggregation, stitching.

#include "stop4d/aggregation.hpp"
#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/encoder_heads.hpp"
#include "stop4d/lidar_io.hpp"
#include "stop4d/model.hpp"
#include "stop4d/proposals.hpp"
#include "stop4d/synth.hpp"
#include "stop4d/tracking.hpp"
#include "stop4d/types.hpp"
#include "stop4d/volume4d.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <vector>

namespace stop4d::pipeline {

using aggregation::GeometricFeature;
using proposals::Proposal;

/// Per-point predictions for one volume.
struct PointPredictions {
  std::vector<int> semantic;
  std::vector<double> objectness;
  std::vector<Vec3> offsets;
  std::vector<std::uint8_t> foreground;
  RowMatrix features;  // N x F; empty when no encoder ran
};

/// Ground truth in place of the learned heads: GT semantics, c* - x votes
/// (plus optional Gaussian noise) and the objectness training target.
inline PointPredictions oracle_predictions(const PointCloud4D& v, std::span<const InstanceGT4D> gt, const Config& cfg,
                                           Rng& rng) {
  if (!v.has_gt()) throw FormatError("oracle mode needs labeled scans");
  PointPredictions p;
  const std::size_t n = v.size();
  p.semantic.resize(n);
  p.foreground.resize(n);
  p.objectness.resize(n);
  p.offsets = synth::oracle_votes(v, gt);
  std::unordered_map<std::uint32_t, Vec3> centers;
  for (const auto& g : gt) centers[g.id] = g.center;
  for (std::size_t i = 0; i < n; ++i) {
    p.semantic[i] = v.semantic_gt[i];
    const bool fg = cfg.is_thing(p.semantic[i]) && v.instance_gt[i] > 0;
    p.foreground[i] = fg ? 1 : 0;
    p.objectness[i] =
        fg ? encoder::objectness_target(v.positions[i], centers.at(v.instance_gt[i]), true, cfg.objectness_sigma) : 0.0;
    if (fg && cfg.oracle_vote_noise > 0.0)
      for (int a = 0; a < 3; ++a) p.offsets[i][a] += rng.normal(0.0, cfg.oracle_vote_noise);
  }
  return p;
}

inline PointPredictions model_predictions(const PointCloud4D& v, const Model& m, const Config& cfg) {
  PointPredictions p;
  auto h = m.net.predict(v, cfg, &p.features);
  p.semantic = std::move(h.semantic);
  p.objectness = std::move(h.objectness);
  p.offsets = std::move(h.offsets);
  p.foreground = std::move(h.foreground);
  return p;
}

/// Proposals with bit-identical centers collapse to the first one.
inline std::vector<Proposal> dedup_proposals(std::vector<Proposal> props) {
  std::vector<Proposal> out;
  std::map<std::array<double, 3>, std::size_t> seen;
  for (auto& p : props) {
    const std::array<double, 3> key{p.center.x(), p.center.y(), p.center.z()};
    if (seen.emplace(key, out.size()).second) out.push_back(std::move(p));
  }
  return out;
}

struct WindowResult {
  std::vector<Proposal> proposals;
  std::vector<GeometricFeature> features;  // one per proposal (voting + dbscan/centers)
  std::vector<int> cluster;                // one per proposal
  std::vector<WindowInstance> instances;
  std::vector<int> semantic;  // per volume point after majority vote
};

/// Geometric features per proposal: learned when `agg` is given (needs
/// per-point features), measured from the members otherwise.
inline std::vector<GeometricFeature> proposal_features(const PointCloud4D& v, const PointPredictions& pred,
                                                       const std::vector<Proposal>& props,
                                                       const aggregation::AggregationNet* agg, const Config& cfg) {
  std::vector<GeometricFeature> out(props.size());
  const bool learned = agg != nullptr && pred.features.rows() == static_cast<Eigen::Index>(v.size());
  parallel_for(props.size(), cfg.worker_threads(), [&](std::size_t j) {
    out[j] = learned ? agg->predict(pred.features, v.positions, props[j])
                     : aggregation::measured_feature(v.positions, props[j], cfg.features);
  });
  return out;
}

inline WindowResult aggregate_window(const PointCloud4D& v, const PointPredictions& pred, const Config& cfg,
                                     const aggregation::AggregationNet* agg, Rng& rng) {
  WindowResult r;
  r.semantic = pred.semantic;
  std::vector<Vec3> point_votes(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) point_votes[i] = v.positions[i] + pred.offsets[i];

  if (cfg.variant == Variant::Gaussian) {
    auto g = aggregation::gaussian_variant(v.positions, pred.objectness, pred.foreground, cfg);
    r.proposals = std::move(g.proposals);
    r.instances = std::move(g.instances);
  } else {
    const auto votes = proposals::apply_votes(v.positions, pred.offsets, pred.foreground);
    r.proposals = dedup_proposals(proposals::generate(votes, cfg, rng));
    if (!r.proposals.empty()) {
      switch (cfg.aggregate) {
        case Aggregate::Nms:
          r.instances = aggregation::nms_baseline(r.proposals, point_votes, cfg.nms_iou);
          break;
        case Aggregate::Centers: {
          std::vector<tinynet::Vector> vecs;
          std::vector<Vec3> centers;
          for (const auto& p : r.proposals) {
            vecs.push_back(p.center);
            centers.push_back(p.center);
          }
          r.cluster = aggregation::dbscan(vecs, cfg.dbscan_eps, cfg.dbscan_min_points);
          r.instances = aggregation::merge(r.proposals, r.cluster, centers, point_votes);
          break;
        }
        case Aggregate::Dbscan: {
          r.features = proposal_features(v, pred, r.proposals, agg, cfg);
          std::vector<tinynet::Vector> vecs;
          std::vector<Vec3> centers;
          for (const auto& f : r.features) {
            vecs.push_back(f.vec);
            centers.push_back(f.center);
          }
          r.cluster = aggregation::dbscan(vecs, cfg.dbscan_eps, cfg.dbscan_min_points);
          r.instances = aggregation::merge(r.proposals, r.cluster, centers, point_votes);
          break;
        }
      }
    }
  }
  aggregation::apply_majority_vote(r.instances, r.semantic);
  return r;
}

// ---------------------------------------------------------------------------
// Sequence driver
// ---------------------------------------------------------------------------

struct Timings {
  double volume = 0.0;
  double heads = 0.0;
  double aggregate = 0.0;
  double stitch = 0.0;
  double total = 0.0;
};

/// With `oracle` set, GT replaces the learned heads; a model given alongside
/// still supplies the learned aggregation features.
struct RunOptions {
  const Model* model = nullptr;
  bool oracle = false;
  bool dump_features = false;
};

struct RunResult {
  std::vector<Tracklet> tracklets;
  std::vector<std::size_t> scan_sizes;
  std::vector<std::vector<std::uint16_t>> background;  // per-scan predicted semantics
  Timings timings;
  std::string feature_dump;  // CSV when requested
};

/// Scan indices [first, t] forming the window whose newest scan is t.
inline std::size_t window_start(std::size_t t, int window) {
  const auto w = static_cast<std::size_t>(std::max(1, window));
  return t + 1 >= w ? t + 1 - w : 0;
}

/// Seeds of the per-window random streams.
inline Rng window_rng(const Config& cfg, std::size_t t, std::uint64_t purpose) {
  return Rng(Rng::splitmix(cfg.rng_seed ^ Rng::splitmix((static_cast<std::uint64_t>(t) << 8) | purpose)));
}

inline RunResult run_sequence(std::span<const Scan> scans, const Config& cfg, const RunOptions& opt = {}) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  const auto t_begin = clock::now();
  if (!opt.oracle && !opt.model) throw ConfigError("checkpoint", "inference needs a checkpoint or oracle mode");
  if (opt.model && opt.model->net.window() != cfg.temporal_window)
    throw ConfigError("temporal_window", "model was built for a different window");

  RunResult res;
  tracking::Stitcher stitcher(cfg.iou_stitch_threshold);
  std::vector<std::vector<double>> objectness(scans.size());
  std::ostringstream dump;
  if (opt.dump_features) dump << "scan,proposal,members,cluster,cx,cy,cz,radius,bx,by,bz\n";

  for (std::size_t t = 0; t < scans.size(); ++t) {
    auto t0 = clock::now();
    const std::size_t first = window_start(t, cfg.temporal_window);
    Rng sample_rng = window_rng(cfg, t, 1);
    const auto window_scans = scans.subspan(first, t - first + 1);
    const std::span<const std::vector<double>> past(objectness.data() + first, t - first);
    const PointCloud4D v = volume4d::form_volume(window_scans, static_cast<std::uint32_t>(first), past, cfg, sample_rng);
    const auto gt = volume4d::recompute_gt(v);
    auto t1 = clock::now();

    Rng noise_rng = window_rng(cfg, t, 2);
    PointPredictions pred =
        opt.oracle ? oracle_predictions(v, gt, cfg, noise_rng) : model_predictions(v, *opt.model, cfg);
    if (opt.oracle && opt.model && cfg.variant == Variant::Voting && cfg.aggregate == Aggregate::Dbscan)
      pred.features = opt.model->net.encode(v);
    auto t2 = clock::now();

    Rng prop_rng = window_rng(cfg, t, 3);
    const WindowResult w = aggregate_window(v, pred, cfg, opt.model ? &opt.model->agg : nullptr, prop_rng);
    auto t3 = clock::now();

    stitcher.step(v, w.instances, w.semantic);
    auto t4 = clock::now();

    // Objectness and semantics of the current scan, kept for later windows
    // and for the background labels.
    const int current = cfg.temporal_window - 1;
    auto& obj = objectness[t];
    obj.assign(scans[t].size(), 0.0);
    std::vector<std::uint16_t> bg(scans[t].size(), 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v.scan_index[i] != current) continue;
      obj[v.origin[i].point] = pred.objectness[i];
      bg[v.origin[i].point] = static_cast<std::uint16_t>(std::max(0, w.semantic[i]));
    }
    res.background.push_back(std::move(bg));
    res.scan_sizes.push_back(scans[t].size());

    if (opt.dump_features) {
      for (std::size_t j = 0; j < w.proposals.size(); ++j) {
        dump << t << ',' << j << ',' << w.proposals[j].size() << ',' << (j < w.cluster.size() ? w.cluster[j] : -1);
        if (j < w.features.size()) {
          const auto& f = w.features[j];
          dump << ',' << f.center.x() << ',' << f.center.y() << ',' << f.center.z() << ',' << f.radius << ','
               << f.bbox.x() << ',' << f.bbox.y() << ',' << f.bbox.z() << '\n';
        } else {
          const auto& c = w.proposals[j].center;
          dump << ',' << c.x() << ',' << c.y() << ',' << c.z() << ",,,,\n";
        }
      }
    }
    res.timings.volume += seconds(t0, t1);
    res.timings.heads += seconds(t1, t2);
    res.timings.aggregate += seconds(t2, t3);
    res.timings.stitch += seconds(t3, t4);
  }
  res.tracklets = stitcher.tracklets();
  res.feature_dump = dump.str();
  res.timings.total = seconds(t_begin, clock::now());
  return res;
}

/// Writes labels/NNNNNN.label and instance_map.txt under out_dir.
inline void write_run(const std::filesystem::path& out_dir, const RunResult& r) {
  lidar_io::write_predictions(r.tracklets, r.scan_sizes, out_dir, &r.background);
}

}  // namespace stop4d::pipeline
