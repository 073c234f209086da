#pragma once

// Stitching of per-window instances into sequence-level tracklets.

#include "stop4d/core.hpp"
#include "stop4d/types.hpp"

#include <algorithm>
#include <map>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace stop4d::tracking {

/// Greedy one-to-one matching. iou[i][k] is the IoU of instance i with
/// candidate k whose id is candidate_ids[k]. Pairs are visited by descending
/// IoU, ties by ascending candidate id then instance index; a pair is taken
/// when IoU > 0 and IoU >= threshold and neither side is matched yet.
/// Returns the matched candidate column per instance, or -1.
inline std::vector<int> match_instances(const std::vector<std::vector<double>>& iou,
                                        std::span<const std::uint32_t> candidate_ids, double threshold) {
  struct Pair {
    double iou;
    std::uint32_t id;
    std::size_t inst;
    std::size_t col;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < iou.size(); ++i) {
    if (iou[i].size() != candidate_ids.size()) throw FormatError("match_instances: ragged IoU matrix");
    for (std::size_t k = 0; k < iou[i].size(); ++k)
      if (iou[i][k] > 0.0 && iou[i][k] >= threshold) pairs.push_back({iou[i][k], candidate_ids[k], i, k});
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(b.iou, a.id, a.inst) < std::tie(a.iou, b.id, b.inst);
  });
  std::vector<int> match(iou.size(), -1);
  std::vector<std::uint8_t> used(candidate_ids.size(), 0);
  for (const auto& p : pairs) {
    if (match[p.inst] >= 0 || used[p.col]) continue;
    match[p.inst] = static_cast<int>(p.col);
    used[p.col] = 1;
  }
  return match;
}

/// Sequential stitcher. Feed windows in scan order; each window's newest
/// scan receives its final assignment from that window.
class Stitcher {
 public:
  explicit Stitcher(double threshold) : threshold_(threshold) {}

  /// `instances` hold volume indices; `semantic` is the per-point class used
  /// for the tracklet-level majority vote. Returns, per instance, the
  /// tracklet id it was given (0 for instances without current-scan points).
  std::vector<std::uint32_t> step(const PointCloud4D& volume, std::span<const WindowInstance> instances,
                                  std::span<const int> semantic) {
    const int current = volume.window - 1;
    // Tracklet ownership of the window's past-scan points.
    std::unordered_map<std::uint32_t, std::size_t> past_size;
    std::vector<std::uint32_t> owner(volume.size(), 0);
    for (std::size_t i = 0; i < volume.size(); ++i) {
      if (volume.scan_index[i] == current) continue;
      const auto it = assigned_.find(volume.origin[i].packed());
      if (it == assigned_.end()) continue;
      owner[i] = it->second;
      ++past_size[it->second];
    }
    std::vector<std::uint32_t> ids;
    for (const auto& [id, n] : past_size) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    std::map<std::uint32_t, std::size_t> col;
    for (std::size_t k = 0; k < ids.size(); ++k) col[ids[k]] = k;

    std::vector<std::vector<double>> iou(instances.size(), std::vector<double>(ids.size(), 0.0));
    for (std::size_t j = 0; j < instances.size(); ++j) {
      std::size_t past = 0;
      std::vector<std::size_t> inter(ids.size(), 0);
      for (auto i : instances[j].members) {
        if (volume.scan_index[i] == current) continue;
        ++past;
        if (owner[i] != 0) ++inter[col[owner[i]]];
      }
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const double uni = static_cast<double>(past + past_size[ids[k]] - inter[k]);
        iou[j][k] = uni > 0.0 ? static_cast<double>(inter[k]) / uni : 0.0;
      }
    }
    const auto match = match_instances(iou, ids, threshold_);

    std::vector<std::uint32_t> result(instances.size(), 0);
    for (std::size_t j = 0; j < instances.size(); ++j) {
      const bool has_current = std::any_of(instances[j].members.begin(), instances[j].members.end(),
                                           [&](std::size_t i) { return volume.scan_index[i] == current; });
      if (!has_current) continue;
      const std::uint32_t id = match[j] >= 0 ? ids[static_cast<std::size_t>(match[j])] : next_id_++;
      result[j] = id;
      auto& t = tracks_[id];
      for (auto i : instances[j].members) {
        if (volume.scan_index[i] != current) continue;
        const auto key = volume.origin[i].packed();
        if (!assigned_.emplace(key, id).second) throw FormatError("Stitcher: point assigned twice");
        t.members.push_back(volume.origin[i]);
        ++t.class_counts[semantic[i]];
      }
    }
    return result;
  }

  /// Tracklets sorted by id with members sorted and the semantic class set
  /// to the majority over all members (ties to the lowest class id).
  std::vector<Tracklet> tracklets() const {
    std::vector<Tracklet> out;
    for (const auto& [id, t] : tracks_) {
      Tracklet tr;
      tr.id = id;
      tr.members = t.members;
      std::sort(tr.members.begin(), tr.members.end());
      std::size_t best = 0;
      for (const auto& [cls, n] : t.class_counts)
        if (n > best) {
          best = n;
          tr.semantic = cls;
        }
      out.push_back(std::move(tr));
    }
    return out;
  }

  std::uint32_t next_id() const { return next_id_; }

 private:
  struct Track {
    std::vector<PointKey> members;
    std::map<int, std::size_t> class_counts;
  };
  double threshold_;
  std::uint32_t next_id_ = 1;
  std::map<std::uint32_t, Track> tracks_;
  std::unordered_map<std::uint64_t, std::uint32_t> assigned_;
};

}  // namespace stop4d::tracking
