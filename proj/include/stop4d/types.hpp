#pragma once

// Domain value types shared across the pipeline stages.

#include "stop4d/core.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace stop4d {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One LiDAR scan: positions (sensor or world frame) plus remission and
/// optional labels.
struct Scan {
  std::vector<Vec3> positions;
  std::vector<float> remission;
  std::vector<std::uint16_t> semantic;   // empty when unlabeled
  std::vector<std::uint16_t> instance;   // empty when unlabeled

  std::size_t size() const { return positions.size(); }
  bool has_labels() const { return !semantic.empty(); }
};

/// Points of a stacked multi-scan window. All per-point arrays share one
/// length; `features` and `objectness` stay empty until filled by the heads.
struct PointCloud4D {
  int window = 1;  // T used to build it
  std::vector<Vec3> positions;
  std::vector<int> scan_index;  // 0 = oldest scan in the window
  std::vector<float> remission;
  std::vector<std::uint16_t> semantic_gt;  // empty when absent
  std::vector<std::uint32_t> instance_gt;  // 0 for stuff, >0 for things
  RowMatrix features;                      // N x F
  std::vector<double> objectness;          // in [0, 1]
  std::vector<PointKey> origin;            // (sequence scan id, point id)

  std::size_t size() const { return positions.size(); }
  bool has_gt() const { return !semantic_gt.empty(); }

  /// Throws FormatError when the per-point arrays disagree in length.
  void check() const {
    const std::size_t n = positions.size();
    auto same = [n](std::size_t m) { return m == n; };
    if (!same(scan_index.size()) || !same(remission.size()) || !same(origin.size()))
      throw FormatError("PointCloud4D: per-point arrays differ in length");
    if (has_gt() && (!same(semantic_gt.size()) || !same(instance_gt.size())))
      throw FormatError("PointCloud4D: label arrays differ in length");
    if (features.rows() != 0 && !same(static_cast<std::size_t>(features.rows())))
      throw FormatError("PointCloud4D: feature rows differ from point count");
    if (!objectness.empty() && !same(objectness.size()))
      throw FormatError("PointCloud4D: objectness length differs from point count");
    for (int s : scan_index)
      if (s < 0 || s >= window) throw FormatError("PointCloud4D: scan_index out of range");
  }

  /// Index of the newest scan in the window.
  int current_scan_index() const {
    int m = 0;
    for (int s : scan_index) m = std::max(m, s);
    return m;
  }
};

/// Ground-truth geometry of one instance over a whole window.
struct InstanceGT4D {
  std::uint32_t id = 0;
  int semantic = 0;
  std::vector<std::size_t> members;  // indices into the volume
  Vec3 bbox_min = Vec3::Zero();
  Vec3 bbox_max = Vec3::Zero();
  Vec3 center = Vec3::Zero();     // c* = (min + max) / 2
  double radius = 0.0;            // r* = half the bbox diagonal
  Vec3 bbox_size = Vec3::Zero();  // extents along x, y, z
};

/// A set of volume indices forming one object inside a single window.
struct WindowInstance {
  std::vector<std::size_t> members;  // sorted, unique
  int semantic = 0;
};

/// Sequence-level object: point keys with one id and one class.
struct Tracklet {
  std::uint32_t id = 0;
  int semantic = 0;
  std::vector<PointKey> members;  // sorted, unique
};

}  // namespace stop4d
