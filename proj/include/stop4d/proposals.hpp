#pragma once

// Proposal generation: foreground votes -> K sampled centers -> radius groups.

#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/spatial.hpp"
#include "stop4d/types.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace stop4d::proposals {

/// Vote positions of the foreground points; source[i] is the volume index
/// that cast votes.points[i].
struct Votes {
  std::vector<Vec3> points;
  std::vector<std::size_t> source;
  std::size_t size() const { return points.size(); }
};

struct Proposal {
  Vec3 center = Vec3::Zero();
  std::size_t seed = 0;              // index into Votes of the sampled center
  std::vector<std::size_t> members;  // volume indices, ascending
  std::size_t size() const { return members.size(); }
};

/// y = x + dx for every point with foreground[i] != 0.
inline Votes apply_votes(std::span<const Vec3> positions, std::span<const Vec3> offsets,
                         std::span<const std::uint8_t> foreground) {
  if (positions.size() != offsets.size() || positions.size() != foreground.size())
    throw FormatError("apply_votes: array lengths differ");
  Votes v;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!foreground[i]) continue;
    v.points.push_back(positions[i] + offsets[i]);
    v.source.push_back(i);
  }
  return v;
}

/// Farthest point sampling starting at index 0. Each pick maximizes the
/// distance to the already-picked set; ties go to the lowest index. Returns
/// min(K, N) indices in pick order.
inline std::vector<std::size_t> fps(std::span<const Vec3> points, std::size_t k) {
  const std::size_t n = points.size();
  k = std::min(k, n);
  std::vector<std::size_t> picks;
  if (k == 0) return picks;
  picks.reserve(k);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> taken(n, 0);
  std::size_t cur = 0;
  for (std::size_t step = 0; step < k; ++step) {
    picks.push_back(cur);
    taken[cur] = 1;
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      dist[i] = std::min(dist[i], (points[i] - points[cur]).squaredNorm());
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    if (best == n) break;
    cur = best;
  }
  return picks;
}

/// K distinct indices drawn uniformly without replacement, ascending.
inline std::vector<std::size_t> random_sample(std::size_t n, std::size_t k, Rng& rng) {
  k = std::min(k, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Picks proposal centers per the configured sampling rule.
inline std::vector<std::size_t> sample_centers(const Votes& votes, const Config& cfg, Rng& rng) {
  const auto k = static_cast<std::size_t>(cfg.num_proposals);
  return cfg.sampling == Sampling::Fps ? fps(votes.points, k) : random_sample(votes.size(), k, rng);
}

/// Reference grouping: exhaustive distance checks.
inline std::vector<Proposal> group_brute_force(const Votes& votes, std::span<const std::size_t> centers,
                                               double radius) {
  if (!(radius > 0.0)) throw ConfigError("group_radius", "must be > 0");
  std::vector<Proposal> out;
  out.reserve(centers.size());
  const double r2 = radius * radius;
  for (std::size_t c : centers) {
    Proposal p;
    p.seed = c;
    p.center = votes.points[c];
    for (std::size_t i = 0; i < votes.size(); ++i)
      if ((votes.points[i] - p.center).squaredNorm() <= r2) p.members.push_back(votes.source[i]);
    std::sort(p.members.begin(), p.members.end());
    out.push_back(std::move(p));
  }
  return out;
}

/// Assigns every vote within `radius` of a center to that proposal (points
/// may join several proposals). Uses a uniform grid with cell size = radius.
inline std::vector<Proposal> group(const Votes& votes, std::span<const std::size_t> centers, double radius,
                                   int threads = 1) {
  if (!(radius > 0.0)) throw ConfigError("group_radius", "must be > 0");
  const UniformGrid grid(votes.points, radius);
  std::vector<Proposal> out(centers.size());
  parallel_for(centers.size(), threads, [&](std::size_t j) {
    Proposal& p = out[j];
    p.seed = centers[j];
    p.center = votes.points[centers[j]];
    grid.for_each_in_radius(p.center, radius, [&](std::size_t i) { p.members.push_back(votes.source[i]); });
    std::sort(p.members.begin(), p.members.end());
  });
  return out;
}

/// Sample + group in one call.
inline std::vector<Proposal> generate(const Votes& votes, const Config& cfg, Rng& rng) {
  if (votes.size() == 0) return {};
  const auto centers = sample_centers(votes, cfg, rng);
  return group(votes, centers, cfg.group_radius, cfg.worker_threads());
}

}  // namespace stop4d::proposals
