#pragma once

// 4D volume formation: stack the current scan with objectness-weighted
// subsamples of the previous T-1 scans, and recompute instance geometry over
// the merged window.

#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <vector>

namespace stop4d::volume4d {

/// ceil(fraction * n), robust to representation error in `fraction`.
inline std::size_t sample_count(std::size_t n, double fraction) {
  const double raw = fraction * static_cast<double>(n);
  const double rounded = std::round(raw);
  const double k = std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw);
  return std::min(n, static_cast<std::size_t>(k));
}

/// Weighted sampling without replacement (exponential keys): each index gets
/// key -ln(u) / w and the k smallest keys win. Returns ascending indices.
inline std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights,
                                                                    std::size_t k, Rng& rng) {
  const std::size_t n = weights.size();
  k = std::min(k, n);
  std::vector<std::pair<double, std::size_t>> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    const double w = weights[i];
    keys[i] = {w > 0.0 ? -std::log(u) / w : std::numeric_limits<double>::infinity(), i};
  }
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keys[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

/// Objectness used when no prediction exists yet: 1 for thing points, 0 else.
inline std::vector<double> gt_objectness(const Scan& scan, const Config& cfg) {
  std::vector<double> o(scan.size(), 0.0);
  for (std::size_t i = 0; i < scan.size() && scan.has_labels(); ++i)
    if (cfg.is_thing(scan.semantic[i]) && scan.instance[i] > 0) o[i] = 1.0;
  return o;
}

/// Builds the volume for the last scan of `scans` (oldest first, world
/// frame). `first_scan_id` is the sequence id of scans[0]; `past_objectness`
/// must hold one vector per past scan (scans.size() - 1 of them).
///
/// The current scan keeps every point; from each past scan
/// ceil(sample_fraction * N_s) points are drawn without replacement with
/// probability proportional to objectness + objectness_floor. Scan indices
/// are aligned so the current scan is always cfg.temporal_window - 1.
inline PointCloud4D form_volume(std::span<const Scan> scans, std::uint32_t first_scan_id,
                                std::span<const std::vector<double>> past_objectness, const Config& cfg,
                                Rng& rng) {
  if (scans.empty()) throw FormatError("form_volume: no scans");
  const int window = cfg.temporal_window;
  if (static_cast<int>(scans.size()) > window)
    throw FormatError("form_volume: more scans than the temporal window");
  if (past_objectness.size() + 1 < scans.size())
    throw FormatError("form_volume: missing objectness for past scans");

  const bool labeled = std::all_of(scans.begin(), scans.end(), [](const Scan& s) { return s.has_labels(); });
  PointCloud4D v;
  v.window = window;
  const int offset = window - static_cast<int>(scans.size());

  auto push = [&](const Scan& s, std::size_t i, int scan_idx, std::uint32_t scan_id) {
    v.positions.push_back(s.positions[i]);
    v.scan_index.push_back(scan_idx);
    v.remission.push_back(i < s.remission.size() ? s.remission[i] : 0.0f);
    if (labeled) {
      v.semantic_gt.push_back(s.semantic[i]);
      v.instance_gt.push_back(s.instance[i]);
    }
    v.origin.push_back({scan_id, static_cast<std::uint32_t>(i)});
  };

  for (std::size_t s = 0; s + 1 < scans.size(); ++s) {
    const Scan& scan = scans[s];
    const auto& obj = past_objectness[s];
    if (obj.size() != scan.size()) throw FormatError("form_volume: objectness length mismatch");
    std::vector<double> w(scan.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::max(0.0, obj[i]) + cfg.objectness_floor;
    const auto picked = weighted_sample_without_replacement(w, sample_count(scan.size(), cfg.sample_fraction), rng);
    for (std::size_t i : picked)
      push(scan, i, offset + static_cast<int>(s), first_scan_id + static_cast<std::uint32_t>(s));
  }
  const Scan& cur = scans.back();
  for (std::size_t i = 0; i < cur.size(); ++i)
    push(cur, i, window - 1, first_scan_id + static_cast<std::uint32_t>(scans.size() - 1));
  return v;
}

/// One record per thing instance id present in the volume (ascending id),
/// with the bounding box over all its points in the window.
inline std::vector<InstanceGT4D> recompute_gt(const PointCloud4D& volume) {
  std::vector<InstanceGT4D> out;
  if (!volume.has_gt()) return out;
  std::map<std::uint32_t, std::size_t> slot;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const auto id = volume.instance_gt[i];
    if (id == 0) continue;
    auto [it, inserted] = slot.try_emplace(id, out.size());
    if (inserted) {
      InstanceGT4D g;
      g.id = id;
      g.semantic = volume.semantic_gt[i];
      g.bbox_min = g.bbox_max = volume.positions[i];
      out.push_back(g);
    }
    auto& g = out[it->second];
    g.members.push_back(i);
    g.bbox_min = g.bbox_min.cwiseMin(volume.positions[i]);
    g.bbox_max = g.bbox_max.cwiseMax(volume.positions[i]);
  }
  for (auto& g : out) {
    g.center = 0.5 * (g.bbox_min + g.bbox_max);
    g.bbox_size = g.bbox_max - g.bbox_min;
    g.radius = 0.5 * g.bbox_size.norm();
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

/// Index of the GT instance whose center is nearest to p, or -1 when empty.
inline int closest_gt(std::span<const InstanceGT4D> gt, const Vec3& p) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = (gt[i].center - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace stop4d::volume4d
