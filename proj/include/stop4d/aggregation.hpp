#pragma once

// Proposal aggregation: learned geometric features per proposal, DBScan
// merging, the NMS and proposal-position baselines, majority voting and the
// Gaussian-distribution comparison variant.

#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/proposals.hpp"
#include "stop4d/spatial.hpp"
#include "stop4d/tinynet.hpp"
#include "stop4d/types.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <vector>

namespace stop4d::aggregation {

using proposals::Proposal;
using tinynet::Matrix;
using tinynet::Mlp;
using tinynet::MlpCache;
using tinynet::Vector;

/// Refined center, radius and box extents of one proposal. `vec` is the
/// E-dimensional clustering vector [center, radius, bbox] cut to the width of
/// the active feature toggle.
struct GeometricFeature {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  Vec3 bbox = Vec3::Zero();
  Vector vec;
};

inline Vector pack_feature(const Vec3& center, double radius, const Vec3& bbox, GeoFeatures mode) {
  Vector v(geo_feature_width(mode));
  v.head<3>() = center;
  if (v.size() >= 4) v[3] = radius;
  if (v.size() == 7) v.tail<3>() = bbox;
  return v;
}

/// Geometric feature measured from the member points instead of learned:
/// center = proposal center, radius and extents from the members' box.
inline GeometricFeature measured_feature(std::span<const Vec3> positions, const Proposal& p, GeoFeatures mode) {
  GeometricFeature g;
  g.center = p.center;
  if (!p.members.empty()) {
    Vec3 lo = positions[p.members.front()];
    Vec3 hi = lo;
    for (auto i : p.members) {
      lo = lo.cwiseMin(positions[i]);
      hi = hi.cwiseMax(positions[i]);
    }
    g.bbox = hi - lo;
    g.radius = 0.5 * g.bbox.norm();
  }
  g.vec = pack_feature(g.center, g.radius, g.bbox, mode);
  return g;
}

// ---------------------------------------------------------------------------
// Learned aggregation network
// ---------------------------------------------------------------------------

/// Shared per-point MLP (128, 128, D) over [f_i, x_i - y_j], channel-wise max
/// pooling to g in R^D, then a second MLP (128, 128, E) producing
/// [dy (3), r (1), bb (3)] cut to E.
class AggregationNet {
 public:
  struct Pass {
    Matrix rows;
    MlpCache shared;
    Matrix point_out;
    tinynet::PoolResult pool;
    MlpCache head;
    Vector out;  // E
  };

  AggregationNet() = default;
  explicit AggregationNet(const Config& cfg)
      : mode_(cfg.features),
        shared_("agg_shared", cfg.feature_dim + 3, {128, 128, cfg.proposal_dim}),
        head_("agg_head", cfg.proposal_dim, {128, 128, cfg.aggregation_dim()}) {}

  void init(Rng& rng) {
    shared_.init(rng);
    head_.init(rng);
  }

  GeoFeatures mode() const { return mode_; }
  int width() const { return geo_feature_width(mode_); }

  static Matrix proposal_rows(const Matrix& features, std::span<const Vec3> positions, const Proposal& p) {
    if (p.members.empty()) throw tinynet::ShapeError("proposal_rows: empty proposal");
    Matrix rows(static_cast<Eigen::Index>(p.members.size()), features.cols() + 3);
    for (std::size_t k = 0; k < p.members.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(k);
      const auto i = static_cast<Eigen::Index>(p.members[k]);
      rows.row(r).head(features.cols()) = features.row(i);
      rows.row(r).tail<3>() = (positions[p.members[k]] - p.center).transpose();
    }
    return rows;
  }

  Pass forward(const Matrix& features, std::span<const Vec3> positions, const Proposal& p) const {
    Pass pass;
    pass.rows = proposal_rows(features, positions, p);
    pass.point_out = shared_.forward(pass.rows, &pass.shared);
    pass.pool = tinynet::masked_max_pool(pass.point_out);
    const Matrix g = pass.pool.value.transpose();
    pass.out = head_.forward(g, &pass.head).row(0).transpose();
    return pass;
  }

  /// g in R^D for one proposal.
  Vector proposal_feature(const Matrix& features, std::span<const Vec3> positions, const Proposal& p) const {
    const Matrix rows = proposal_rows(features, positions, p);
    return tinynet::masked_max_pool(shared_.forward(rows)).value;
  }

  GeometricFeature predict(const Matrix& features, std::span<const Vec3> positions, const Proposal& p) const {
    return decode(forward(features, positions, p).out, p.center);
  }

  GeometricFeature decode(const Vector& out, const Vec3& proposal_center) const {
    GeometricFeature g;
    g.center = proposal_center + out.head<3>();
    if (out.size() >= 4) g.radius = out[3];
    if (out.size() == 7) g.bbox = out.tail<3>();
    g.vec = pack_feature(g.center, g.radius, g.bbox, mode_);
    return g;
  }

  void backward(const Pass& pass, const Vector& d_out) {
    const Matrix dg = head_.backward(pass.head, d_out.transpose());
    const Matrix d_points = tinynet::max_pool_backward(pass.pool, dg.row(0).transpose(), pass.point_out.rows());
    shared_.backward(pass.shared, d_points);
  }

  void zero_grad() {
    shared_.zero_grad();
    head_.zero_grad();
  }

  std::vector<tinynet::ParamRef> parameters() {
    std::vector<tinynet::ParamRef> out;
    shared_.collect(out);
    head_.collect(out);
    return out;
  }

  Mlp& shared() { return shared_; }
  Mlp& head() { return head_; }

 private:
  GeoFeatures mode_ = GeoFeatures::Full;
  Mlp shared_, head_;
};

struct VectorLoss {
  double loss = 0.0;
  Vector grad;
};

/// huber(y + dy - c*) [+ huber(r - r*)] [+ huber(bb - bb*)] for one proposal
/// against its closest ground-truth instance; the enabled terms follow the
/// width of `out` (3, 4 or 7).
inline VectorLoss geometric_loss(const Vector& out, const Vec3& proposal_center, const InstanceGT4D& gt,
                                 double delta) {
  VectorLoss l;
  l.grad = Vector::Zero(out.size());
  const Vec3 e_center = proposal_center + out.head<3>() - gt.center;
  l.loss += tinynet::huber(e_center, delta);
  l.grad.head<3>() = tinynet::huber_grad(e_center, delta);
  if (out.size() >= 4) {
    const double e_r = out[3] - gt.radius;
    l.loss += tinynet::huber(e_r, delta);
    l.grad[3] = tinynet::huber_grad(e_r, delta);
  }
  if (out.size() == 7) {
    const Vec3 e_bb = out.tail<3>() - gt.bbox_size;
    l.loss += tinynet::huber(e_bb, delta);
    l.grad.tail<3>() = tinynet::huber_grad(e_bb, delta);
  }
  return l;
}

// ---------------------------------------------------------------------------
// DBScan
// ---------------------------------------------------------------------------

constexpr int kNoise = -1;

/// Density clustering with Euclidean distance <= eps. A point is core when
/// its eps-neighborhood (itself included) holds >= min_points points.
/// Clusters are numbered 0.. in order of their lowest member index; points
/// reached by no core point are kNoise. With min_points = 1 this is exactly
/// the connected components of the eps-graph.
inline std::vector<int> dbscan(const std::vector<Vector>& vectors, double eps, int min_points) {
  if (!(eps > 0.0)) throw ConfigError("dbscan_eps", "must be > 0");
  const std::size_t n = vectors.size();
  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> nbr(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if ((vectors[i] - vectors[j]).squaredNorm() <= eps2) nbr[i].push_back(j);

  std::vector<int> label(n, kNoise);
  std::vector<std::uint8_t> visited(n, 0);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (visited[i] || static_cast<int>(nbr[i].size()) < min_points) continue;
    const int c = next++;
    std::vector<std::size_t> stack{i};
    visited[i] = 1;
    label[i] = c;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      if (static_cast<int>(nbr[p].size()) < min_points) continue;  // border: do not expand
      for (std::size_t q : nbr[p]) {
        if (label[q] == kNoise) label[q] = c;
        if (!visited[q]) {
          visited[q] = 1;
          stack.push_back(q);
        }
      }
    }
  }
  // Renumber by lowest member index.
  std::map<int, int> remap;
  for (std::size_t i = 0; i < n; ++i)
    if (label[i] != kNoise && !remap.count(label[i])) remap.emplace(label[i], static_cast<int>(remap.size()));
  for (auto& l : label)
    if (l != kNoise) l = remap[l];
  return label;
}

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

namespace detail {

/// Assigns each point covered by one or more groups to a single group. A
/// point in several groups goes to the group whose center is nearest to the
/// point's vote; ties go to the lower group id.
inline std::vector<WindowInstance> resolve(const std::vector<std::vector<std::size_t>>& group_members,
                                           const std::vector<Vec3>& group_centers, std::span<const Vec3> point_votes) {
  std::map<std::size_t, std::vector<std::size_t>> claims;  // point -> groups
  for (std::size_t g = 0; g < group_members.size(); ++g)
    for (auto i : group_members[g]) claims[i].push_back(g);
  std::vector<WindowInstance> out(group_members.size());
  for (auto& [point, groups] : claims) {
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    std::size_t best = groups.front();
    if (groups.size() > 1) {
      double best_d = std::numeric_limits<double>::infinity();
      for (auto g : groups) {
        const double d = (point_votes[point] - group_centers[g]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = g;
        }
      }
    }
    out[best].members.push_back(point);
  }
  std::vector<WindowInstance> kept;
  for (auto& w : out)
    if (!w.members.empty()) kept.push_back(std::move(w));
  return kept;
}

}  // namespace detail

/// Union of member sets per cluster; proposals labeled kNoise are dropped.
/// Cross-cluster conflicts go to the cluster whose mean refined center is
/// nearest to the point's vote. `point_votes` is indexed by volume index.
inline std::vector<WindowInstance> merge(const std::vector<Proposal>& props, std::span<const int> labels,
                                         std::span<const Vec3> refined_centers, std::span<const Vec3> point_votes) {
  if (labels.size() != props.size() || refined_centers.size() != props.size())
    throw FormatError("merge: labels or centers do not cover all proposals");
  int clusters = 0;
  for (int l : labels) clusters = std::max(clusters, l + 1);
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(clusters));
  std::vector<Vec3> centers(static_cast<std::size_t>(clusters), Vec3::Zero());
  std::vector<int> counts(static_cast<std::size_t>(clusters), 0);
  for (std::size_t j = 0; j < props.size(); ++j) {
    if (labels[j] == kNoise) continue;
    const auto c = static_cast<std::size_t>(labels[j]);
    members[c].insert(members[c].end(), props[j].members.begin(), props[j].members.end());
    centers[c] += refined_centers[j];
    ++counts[c];
  }
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (counts[c] > 0) centers[c] /= counts[c];
    std::sort(members[c].begin(), members[c].end());
    members[c].erase(std::unique(members[c].begin(), members[c].end()), members[c].end());
  }
  return detail::resolve(members, centers, point_votes);
}

/// Non-maximum suppression baseline: proposals sorted by member count
/// (descending, ties by index) are kept when their point-set IoU with every
/// kept proposal is <= iou_threshold. Points covered by several kept
/// proposals go to the nearest kept center; points covered only by
/// suppressed proposals stay unassigned.
inline std::vector<WindowInstance> nms_baseline(const std::vector<Proposal>& props, std::span<const Vec3> point_votes,
                                                double iou_threshold) {
  std::vector<std::size_t> order(props.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return props[a].size() > props[b].size(); });
  std::vector<std::size_t> kept;
  for (auto j : order) {
    if (props[j].members.empty()) continue;
    bool keep = true;
    for (auto k : kept) {
      if (sorted_iou<std::size_t>(props[j].members, props[k].members) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(j);
  }
  std::vector<std::vector<std::size_t>> members;
  std::vector<Vec3> centers;
  for (auto k : kept) {
    members.push_back(props[k].members);
    centers.push_back(props[k].center);
  }
  return detail::resolve(members, centers, point_votes);
}

/// Most frequent class; ties go to the lowest class id.
inline int majority_vote(std::span<const int> classes) {
  if (classes.empty()) throw FormatError("majority_vote: empty instance");
  std::map<int, std::size_t> hist;
  for (int c : classes) ++hist[c];
  int best = hist.begin()->first;
  std::size_t best_n = 0;
  for (const auto& [c, n] : hist) {
    if (n > best_n) {
      best = c;
      best_n = n;
    }
  }
  return best;
}

/// Relabels every member of each instance to its majority class.
inline void apply_majority_vote(std::vector<WindowInstance>& instances, std::vector<int>& semantic) {
  for (auto& inst : instances) {
    std::vector<int> cls;
    cls.reserve(inst.members.size());
    for (auto i : inst.members) cls.push_back(semantic[i]);
    inst.semantic = majority_vote(cls);
    for (auto i : inst.members) semantic[i] = inst.semantic;
  }
}

// ---------------------------------------------------------------------------
// Gaussian-distribution variant
// ---------------------------------------------------------------------------

struct GaussianPreset {
  const char* name;
  double probability_threshold;
  double selection_radius;
};

/// Probability-threshold / selection-radius pairs compared against voting.
inline const std::vector<GaussianPreset>& gaussian_presets() {
  static const std::vector<GaussianPreset> p{
      {"pt0.5-r0.0", 0.5, 0.0},
      {"pt0.7-r0.0", 0.7, 0.0},
      {"pt0.7-r0.6", 0.7, 0.6},
  };
  return p;
}

inline double gaussian_probability(const Vec3& x, const Vec3& center, double sigma) {
  return std::exp(-(x - center).squaredNorm() / (2.0 * sigma * sigma));
}

/// Distance at which the isotropic Gaussian drops to `threshold`.
inline double gaussian_cutoff_distance(double sigma, double threshold) {
  return sigma * std::sqrt(-2.0 * std::log(threshold));
}

struct GaussianResult {
  std::vector<Proposal> proposals;
  std::vector<WindowInstance> instances;
};

/// Centers are points with objectness >= objectness_threshold. Foreground
/// points join every center under which their Gaussian probability is >=
/// probability_threshold. With selection_radius > 0, centers are visited by
/// descending objectness and centers within the radius of an accepted one are
/// dropped. Proposals merge by DBScan on their member mean positions.
inline GaussianResult gaussian_variant(std::span<const Vec3> positions, std::span<const double> objectness,
                                       std::span<const std::uint8_t> foreground, const Config& cfg) {
  GaussianResult res;
  std::vector<std::size_t> centers;
  for (std::size_t i = 0; i < positions.size(); ++i)
    if (objectness[i] >= cfg.objectness_threshold) centers.push_back(i);
  if (centers.empty()) return res;

  if (cfg.selection_radius > 0.0) {
    std::stable_sort(centers.begin(), centers.end(),
                     [&](std::size_t a, std::size_t b) { return objectness[a] > objectness[b]; });
    std::vector<std::size_t> accepted;
    const double r2 = cfg.selection_radius * cfg.selection_radius;
    for (auto c : centers) {
      bool near = false;
      for (auto a : accepted)
        if ((positions[c] - positions[a]).squaredNorm() <= r2) {
          near = true;
          break;
        }
      if (!near) accepted.push_back(c);
    }
    centers = std::move(accepted);
  }

  std::vector<Vec3> fg_points;
  std::vector<std::size_t> fg_source;
  for (std::size_t i = 0; i < positions.size(); ++i)
    if (foreground[i]) {
      fg_points.push_back(positions[i]);
      fg_source.push_back(i);
    }
  const double cutoff = gaussian_cutoff_distance(cfg.gaussian_sigma, cfg.probability_threshold);
  const UniformGrid grid(fg_points, std::max(cutoff, 1e-3));
  std::vector<Vector> means;
  for (auto c : centers) {
    Proposal p;
    p.center = positions[c];
    p.seed = c;
    grid.for_each_in_radius(p.center, cutoff, [&](std::size_t k) {
      if (gaussian_probability(fg_points[k], p.center, cfg.gaussian_sigma) >= cfg.probability_threshold)
        p.members.push_back(fg_source[k]);
    });
    if (p.members.empty()) continue;
    std::sort(p.members.begin(), p.members.end());
    Vec3 mean = Vec3::Zero();
    for (auto i : p.members) mean += positions[i];
    means.push_back(mean / static_cast<double>(p.members.size()));
    res.proposals.push_back(std::move(p));
  }
  if (res.proposals.empty()) return res;
  const auto labels = dbscan(means, cfg.dbscan_eps, cfg.dbscan_min_points);
  std::vector<Vec3> mean_centers;
  for (const auto& m : means) mean_centers.push_back(m);
  res.instances = merge(res.proposals, labels, mean_centers, positions);
  return res;
}

}  // namespace stop4d::aggregation
