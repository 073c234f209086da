#pragma once

// Uniform hash grid for fixed-radius neighbor queries in 3D.

#include "stop4d/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace stop4d {

class UniformGrid {
 public:
  /// cell_size should be >= the largest query radius so that a query only
  /// touches the 27 surrounding cells.
  UniformGrid(std::span<const Vec3> points, double cell_size) : points_(points), cell_(cell_size) {
    cells_.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i]))].push_back(i);
  }

  /// Indices within `radius` (inclusive) of q, ascending.
  std::vector<std::size_t> radius_query(const Vec3& q, double radius) const {
    std::vector<std::size_t> out;
    for_each_in_radius(q, radius, [&](std::size_t i) { out.push_back(i); });
    std::sort(out.begin(), out.end());
    return out;
  }

  template <class Fn>
  void for_each_in_radius(const Vec3& q, double radius, Fn&& fn) const {
    const double r2 = radius * radius;
    const auto c = cell_of(q);
    const int reach = std::max(1, static_cast<int>(std::ceil(radius / cell_)));
    for (int dx = -reach; dx <= reach; ++dx)
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dz = -reach; dz <= reach; ++dz) {
          const auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (std::size_t i : it->second)
            if ((points_[i] - q).squaredNorm() <= r2) fn(i);
        }
  }

 private:
  std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }
  static std::uint64_t key(const std::array<std::int64_t, 3>& c) {
    // 21 bits per axis is plenty for scenes of a few km at decimeter cells.
    const auto m = [](std::int64_t v) { return static_cast<std::uint64_t>(v + (1 << 20)) & 0x1FFFFFu; };
    return (m(c[0]) << 42) | (m(c[1]) << 21) | m(c[2]);
  }

  std::span<const Vec3> points_;
  double cell_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace stop4d
