#pragma once

// Per-point encoder and the semantic, objectness and voting heads.
//
// The encoder is a stand-in for a point-convolution backbone: fixed local
// descriptors followed by a trainable MLP (64, 128, F). Descriptor columns:
//   0-2   position relative to the volume centroid, scaled by 0.1
//   3-5   offset from the point to the centroid of its 1 m neighborhood
//   6-8   eigenvalues of the neighborhood covariance, descending
//   9     neighborhood size divided by the largest neighborhood in the volume
//   10..  one-hot scan index (T columns)
// Every column is invariant to a rigid translation of the whole volume.

#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/spatial.hpp"
#include "stop4d/tinynet.hpp"
#include "stop4d/types.hpp"
#include "stop4d/volume4d.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <unordered_map>
#include <vector>

namespace stop4d::encoder {

using tinynet::Matrix;
using tinynet::Mlp;
using tinynet::MlpCache;

constexpr double kNeighborhoodRadius = 1.0;
constexpr double kPositionScale = 0.1;
constexpr int kGeometryColumns = 10;

inline int descriptor_width(int window) { return kGeometryColumns + window; }

inline Matrix descriptors(const PointCloud4D& v) {
  const std::size_t n = v.size();
  const int width = descriptor_width(v.window);
  Matrix d = Matrix::Zero(static_cast<Eigen::Index>(n), width);
  if (n == 0) return d;

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : v.positions) centroid += p;
  centroid /= static_cast<double>(n);

  const UniformGrid grid(v.positions, kNeighborhoodRadius);
  std::vector<double> counts(n, 0.0);
  double max_count = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = v.positions[i];
    Vec3 sum = Vec3::Zero();
    Eigen::Matrix3d outer = Eigen::Matrix3d::Zero();
    std::size_t m = 0;
    grid.for_each_in_radius(p, kNeighborhoodRadius, [&](std::size_t j) {
      const Vec3 q = v.positions[j] - p;  // relative coordinates keep the sums translation invariant
      sum += q;
      outer += q * q.transpose();
      ++m;
    });
    const Vec3 mean = sum / static_cast<double>(m);
    const Eigen::Matrix3d cov = outer / static_cast<double>(m) - mean * mean.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(cov, Eigen::EigenvaluesOnly);
    const Vec3 ev = es.eigenvalues();  // ascending

    const auto r = static_cast<Eigen::Index>(i);
    d.block<1, 3>(r, 0) = ((p - centroid) * kPositionScale).transpose();
    d.block<1, 3>(r, 3) = mean.transpose();
    d(r, 6) = std::max(0.0, ev[2]);
    d(r, 7) = std::max(0.0, ev[1]);
    d(r, 8) = std::max(0.0, ev[0]);
    counts[i] = static_cast<double>(m);
    max_count = std::max(max_count, counts[i]);
    d(r, kGeometryColumns + v.scan_index[i]) = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) d(static_cast<Eigen::Index>(i), 9) = counts[i] / max_count;
  return d;
}

/// Objectness supervision: Gaussian proximity to the instance center for
/// thing points, 0 for stuff.
inline double objectness_target(const Vec3& x, const Vec3& center, bool thing, double sigma) {
  if (!thing) return 0.0;
  return std::exp(-(x - center).squaredNorm() / (2.0 * sigma * sigma));
}

/// Per-point training targets for one volume.
struct PointTargets {
  std::vector<int> semantic;             // -1 = ignored
  std::vector<std::uint8_t> foreground;  // GT thing membership
  std::vector<Vec3> center;              // c* for foreground points
  std::vector<double> objectness;
};

inline PointTargets make_targets(const PointCloud4D& v, std::span<const InstanceGT4D> gt, const Config& cfg) {
  PointTargets t;
  const std::size_t n = v.size();
  t.semantic.assign(n, -1);
  t.foreground.assign(n, 0);
  t.center.assign(n, Vec3::Zero());
  t.objectness.assign(n, 0.0);
  if (!v.has_gt()) return t;
  std::unordered_map<std::uint32_t, Vec3> centers;
  for (const auto& g : gt) centers[g.id] = g.center;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = v.semantic_gt[i];
    if (cfg.is_thing(cls) || cfg.is_stuff(cls)) t.semantic[i] = cls;
    const bool fg = cfg.is_thing(cls) && v.instance_gt[i] > 0;
    if (fg) {
      t.foreground[i] = 1;
      t.center[i] = centers.at(v.instance_gt[i]);
    }
    t.objectness[i] = objectness_target(v.positions[i], t.center[i], fg, cfg.objectness_sigma);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Losses over a batch of rows
// ---------------------------------------------------------------------------

struct BatchLoss {
  double loss = 0.0;
  Matrix grad;  // dL/d(head output), same shape as the head output
};

/// Mean cross-entropy over rows with target >= 0.
inline BatchLoss semantic_loss(const Matrix& logits, std::span<const int> targets) {
  BatchLoss out;
  out.grad = Matrix::Zero(logits.rows(), logits.cols());
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    if (targets[static_cast<std::size_t>(r)] >= 0) ++count;
  if (count == 0) return out;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0) continue;
    const auto lg = tinynet::softmax_cross_entropy(logits.row(r).transpose(), t);
    out.loss += lg.loss / static_cast<double>(count);
    out.grad.row(r) = lg.grad.transpose() / static_cast<double>(count);
  }
  return out;
}

/// (1/M) sum over foreground rows of huber(x + dx - c*); M = foreground count.
/// No foreground gives a zero loss.
inline BatchLoss voting_loss(std::span<const Vec3> positions, const Matrix& offsets, std::span<const Vec3> centers,
                             std::span<const std::uint8_t> foreground, double delta) {
  BatchLoss out;
  out.grad = Matrix::Zero(offsets.rows(), 3);
  std::size_t m = 0;
  for (auto f : foreground) m += f ? 1 : 0;
  if (m == 0) return out;
  const double inv = 1.0 / static_cast<double>(m);
  for (Eigen::Index r = 0; r < offsets.rows(); ++r) {
    const auto i = static_cast<std::size_t>(r);
    if (!foreground[i]) continue;
    const Vec3 e = positions[i] + offsets.row(r).transpose() - centers[i];
    out.loss += inv * tinynet::huber(e, delta);
    out.grad.row(r) = inv * tinynet::huber_grad(e, delta).transpose();
  }
  return out;
}

/// Mean squared error between sigmoid(logit) and the objectness target.
inline BatchLoss objectness_loss(const Matrix& logits, std::span<const double> targets) {
  BatchLoss out;
  out.grad = Matrix::Zero(logits.rows(), 1);
  if (logits.rows() == 0) return out;
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double o = tinynet::sigmoid(logits(r, 0));
    const double diff = o - targets[static_cast<std::size_t>(r)];
    out.loss += inv * diff * diff;
    out.grad(r, 0) = inv * 2.0 * diff * o * (1.0 - o);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Inference outputs for every point of a volume.
struct HeadOutputs {
  std::vector<int> semantic;
  std::vector<double> objectness;
  std::vector<Vec3> offsets;
  std::vector<std::uint8_t> foreground;  // predicted thing class
};

class PointNetwork {
 public:
  struct Pass {
    Matrix features;
    Matrix logits;
    Matrix objectness_logit;
    Matrix offsets;
    MlpCache enc, sem, obj, vot;
  };

  PointNetwork() = default;
  explicit PointNetwork(const Config& cfg)
      : window_(cfg.temporal_window),
        encoder_("encoder", descriptor_width(cfg.temporal_window), {64, 128, cfg.feature_dim}),
        semantic_("semantic", cfg.feature_dim, {cfg.num_classes}),
        objectness_("objectness", cfg.feature_dim, {1}),
        voting_("voting", cfg.feature_dim, {64, 3}) {}

  void init(Rng& rng) {
    encoder_.init(rng);
    semantic_.init(rng);
    objectness_.init(rng);
    voting_.init(rng);
  }

  int window() const { return window_; }

  Pass forward(const Matrix& desc) const {
    Pass p;
    p.features = encoder_.forward(desc, &p.enc);
    p.logits = semantic_.forward(p.features, &p.sem);
    p.objectness_logit = objectness_.forward(p.features, &p.obj);
    p.offsets = voting_.forward(p.features, &p.vot);
    return p;
  }

  /// Accumulates parameter gradients for the three head-output gradients.
  void backward(const Pass& p, const Matrix& d_logits, const Matrix& d_obj, const Matrix& d_offsets) {
    Matrix d_feat = semantic_.backward(p.sem, d_logits);
    d_feat += objectness_.backward(p.obj, d_obj);
    d_feat += voting_.backward(p.vot, d_offsets);
    encoder_.backward(p.enc, d_feat);
  }

  /// Per-point features f_i (N x F) for a volume.
  Matrix encode(const PointCloud4D& v) const { return encoder_.forward(descriptors(v)); }

  HeadOutputs predict(const PointCloud4D& v, const Config& cfg, Matrix* features_out = nullptr) const {
    const Matrix f = encode(v);
    const Matrix logits = semantic_.forward(f);
    const Matrix obj = objectness_.forward(f);
    const Matrix off = voting_.forward(f);
    HeadOutputs h;
    h.semantic.resize(v.size());
    h.objectness.resize(v.size());
    h.offsets.resize(v.size());
    h.foreground.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      h.semantic[i] = tinynet::argmax_row(logits, r);
      h.objectness[i] = tinynet::sigmoid(obj(r, 0));
      h.offsets[i] = off.row(r).transpose();
      h.foreground[i] = cfg.is_thing(h.semantic[i]) ? 1 : 0;
    }
    if (features_out) *features_out = f;
    return h;
  }

  void zero_grad() {
    encoder_.zero_grad();
    semantic_.zero_grad();
    objectness_.zero_grad();
    voting_.zero_grad();
  }

  std::vector<tinynet::ParamRef> parameters() {
    std::vector<tinynet::ParamRef> out;
    encoder_.collect(out);
    semantic_.collect(out);
    objectness_.collect(out);
    voting_.collect(out);
    return out;
  }

  Mlp& encoder() { return encoder_; }
  Mlp& semantic_head() { return semantic_; }
  Mlp& objectness_head() { return objectness_; }
  Mlp& voting_head() { return voting_; }

 private:
  int window_ = 2;
  Mlp encoder_, semantic_, objectness_, voting_;
};

}  // namespace stop4d::encoder
