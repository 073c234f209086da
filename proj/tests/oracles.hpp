#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Each one follows the textbook definition with plain loops and
// shares no code with the library beyond basic types.

#include "stop4d/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <vector>

namespace oracle {

using stop4d::Vec3;

/// Greedy farthest point sampling by exhaustive recomputation of every
/// min-distance at each step (no incremental distance cache).
inline std::vector<std::size_t> fps_greedy(const std::vector<Vec3>& pts, std::size_t k) {
  std::vector<std::size_t> picks;
  if (pts.empty() || k == 0) return picks;
  picks.push_back(0);
  while (picks.size() < std::min(k, pts.size())) {
    std::size_t best = pts.size();
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(picks.begin(), picks.end(), i) != picks.end()) continue;
      double dmin = std::numeric_limits<double>::infinity();
      for (auto p : picks) dmin = std::min(dmin, (pts[i] - pts[p]).squaredNorm());
      if (dmin > best_d) {
        best_d = dmin;
        best = i;
      }
    }
    picks.push_back(best);
  }
  return picks;
}

/// Connected components of the graph with an edge where distance <= eps,
/// via union-find; labels numbered by lowest member index.
inline std::vector<int> eps_components(const std::vector<Eigen::VectorXd>& v, double eps) {
  const std::size_t n = v.size();
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if ((v[i] - v[j]).norm() <= eps) parent[find(i)] = find(j);
  std::map<std::size_t, int> label_of_root;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    auto it = label_of_root.find(r);
    if (it == label_of_root.end()) it = label_of_root.emplace(r, static_cast<int>(label_of_root.size())).first;
    out[i] = it->second;
  }
  return out;
}

/// Association score by nested loops over explicit point sets.
inline double s_assoc(const std::vector<std::uint64_t>& gt, const std::vector<std::uint64_t>& pred) {
  std::set<std::uint64_t> gt_ids, pred_ids;
  for (auto g : gt)
    if (g) gt_ids.insert(g);
  for (auto p : pred)
    if (p) pred_ids.insert(p);
  if (gt_ids.empty()) return 1.0;
  double total = 0.0;
  for (auto t : gt_ids) {
    std::set<std::size_t> T;
    for (std::size_t i = 0; i < gt.size(); ++i)
      if (gt[i] == t) T.insert(i);
    double inner = 0.0;
    for (auto s : pred_ids) {
      std::set<std::size_t> S;
      for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == s) S.insert(i);
      std::size_t inter = 0;
      for (auto i : S) inter += T.count(i);
      if (inter == 0) continue;
      const double uni = static_cast<double>(S.size() + T.size() - inter);
      inner += static_cast<double>(inter) * (static_cast<double>(inter) / uni);
    }
    total += inner / static_cast<double>(T.size());
  }
  return total / static_cast<double>(gt_ids.size());
}

/// Mean point IoU over listed classes present in the GT; points whose GT
/// class is unlisted are skipped.
inline double s_cls(const std::vector<int>& gt, const std::vector<int>& pred, const std::vector<int>& classes) {
  double sum = 0.0;
  int present = 0;
  for (int c : classes) {
    long tp = 0, fp = 0, fn = 0;
    bool in_gt = false;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (std::find(classes.begin(), classes.end(), gt[i]) == classes.end()) continue;
      if (gt[i] == c) in_gt = true;
      if (gt[i] == c && pred[i] == c) ++tp;
      if (gt[i] != c && pred[i] == c) ++fp;
      if (gt[i] == c && pred[i] != c) ++fn;
    }
    if (!in_gt) continue;
    sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++present;
  }
  return present ? sum / present : 0.0;
}

/// Central finite difference of f at x along every coordinate.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, double* x, std::size_t n,
                                            double h = 1e-5) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(1e-6, |a_i| + |b_i|): small absolute gradients
/// are compared against a floor so round-off near zero does not dominate.
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(floor, std::abs(a[i]) + std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace oracle
