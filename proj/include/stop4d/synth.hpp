#pragma once

// Deterministic synthetic LiDAR sequences with full ground truth.
//
// Thing objects are axis-aligned boxes whose surfaces are sampled uniformly
// each scan and translated by t * velocity; the stuff class is a flat ground
// plane at z = 0. Poses are identity, so scans are already in the world frame.

#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/lidar_io.hpp"
#include "stop4d/types.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace stop4d::synth {

struct ObjectSpec {
  int semantic = 1;
  Vec3 size{4.0, 1.8, 1.5};  // box extents along x, y, z (meters)
  Vec3 center{0.0, 0.0, 0.75};
  Vec3 velocity = Vec3::Zero();  // meters per scan
  int points_per_scan = 100;
  double noise = 0.0;  // surface noise sigma (meters)
};

struct SceneSpec {
  int num_scans = 20;
  std::vector<ObjectSpec> objects;
  int stuff_class = 3;
  double ground_extent = 40.0;  // square side length (meters)
  int ground_points = 800;      // per scan
  double ground_noise = 0.0;
  std::uint64_t seed = 7;

  /// Throws ConfigError on invalid values. `window` is the temporal window
  /// the sequence must at least cover.
  void validate(int window = 1) const;
};

/// Box extents overlap with positive volume.
inline bool boxes_overlap(const ObjectSpec& a, const ObjectSpec& b) {
  for (int k = 0; k < 3; ++k) {
    const double gap = std::abs(a.center[k] - b.center[k]) - 0.5 * (a.size[k] + b.size[k]);
    if (gap >= 0.0) return false;
  }
  return true;
}

inline void SceneSpec::validate(int window) const {
  if (num_scans < std::max(1, window))
    throw ConfigError("scans", "sequence shorter than the temporal window");
  if (ground_points < 0) throw ConfigError("ground_points", "must be >= 0");
  if (!(ground_extent > 0.0)) throw ConfigError("ground_extent", "must be > 0");
  if (ground_noise < 0.0) throw ConfigError("ground_noise", "must be >= 0");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    const std::string key = "object " + std::to_string(i + 1);
    if (!(o.size.minCoeff() > 0.0)) throw ConfigError(key, "box sizes must be > 0");
    if (o.points_per_scan < 1) throw ConfigError(key, "points_per_scan must be >= 1");
    if (o.noise < 0.0) throw ConfigError(key, "noise must be >= 0");
    if (o.semantic <= 0 || o.semantic > 0xFFFF) throw ConfigError(key, "semantic id out of range");
    if (o.semantic == stuff_class) throw ConfigError(key, "object uses the stuff class id");
    for (std::size_t j = 0; j < i; ++j)
      if (boxes_overlap(objects[j], o))
        throw ConfigError(key, "box overlaps object " + std::to_string(j + 1) + " at t=0");
  }
  if (objects.size() > 0xFFFE) throw ConfigError("object", "too many objects for 16-bit ids");
}

/// 20 scans, 6 objects of two thing classes (1: car-sized, 2: person-sized)
/// plus the ground as stuff class 3. Trajectories keep every pair of object
/// centers more than 5 m apart for the whole sequence.
inline SceneSpec default_scene() {
  SceneSpec s;
  s.num_scans = 20;
  s.objects = {
      {1, {4.0, 1.8, 1.5}, {-12.0, -8.0, 0.75}, {0.5, 0.0, 0.0}, 120, 0.0},
      {1, {4.2, 1.9, 1.6}, {6.0, 8.0, 0.8}, {-0.4, 0.0, 0.0}, 120, 0.0},
      {1, {3.8, 1.7, 1.4}, {10.0, -6.0, 0.7}, {0.0, 0.0, 0.0}, 120, 0.0},
      {2, {0.8, 0.8, 1.7}, {-4.0, 4.0, 0.85}, {0.0, -0.15, 0.0}, 60, 0.0},
      {2, {0.7, 0.9, 1.8}, {2.0, -2.0, 0.9}, {0.1, -0.1, 0.0}, 60, 0.0},
      {1, {4.0, 1.8, 1.5}, {-14.0, 12.0, 0.75}, {0.3, -0.2, 0.0}, 120, 0.0},
  };
  return s;
}

/// Center of object `o` at scan t.
inline Vec3 center_at(const ObjectSpec& o, int t) { return o.center + static_cast<double>(t) * o.velocity; }

namespace detail {

inline Vec3 sample_box_surface(const Vec3& size, Rng& rng) {
  const double axy = size.x() * size.y();
  const double axz = size.x() * size.z();
  const double ayz = size.y() * size.z();
  const double pick = rng.uniform() * (axy + axz + ayz);
  const double sign = rng.uniform() < 0.5 ? -0.5 : 0.5;
  const double u = rng.uniform() - 0.5;
  const double v = rng.uniform() - 0.5;
  if (pick < axy) return {u * size.x(), v * size.y(), sign * size.z()};
  if (pick < axy + axz) return {u * size.x(), sign * size.y(), v * size.z()};
  return {sign * size.x(), u * size.y(), v * size.z()};
}

// Positions are stored as float32 on disk; rounding here keeps in-memory and
// on-disk sequences identical.
// The volatile store stops GCC 11 at -O3 from folding the round trip away.
inline Vec3 to_float_grid(const Vec3& p) {
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    volatile float f = static_cast<float>(p[i]);
    out[i] = f;
  }
  return out;
}

inline Rng stream_for(std::uint64_t seed, std::uint64_t scan, std::uint64_t part) {
  return Rng(Rng::splitmix(seed ^ Rng::splitmix((scan << 20) ^ part)));
}

}  // namespace detail

struct Sequence {
  std::vector<Scan> scans;
  std::vector<lidar_io::Pose> poses;
};

/// Generates the whole sequence. Instance id of object k is k + 1 in every scan.
inline Sequence generate(const SceneSpec& spec) {
  spec.validate();
  Sequence seq;
  seq.scans.resize(spec.num_scans);
  seq.poses.assign(spec.num_scans, lidar_io::Pose::identity());
  for (int t = 0; t < spec.num_scans; ++t) {
    Scan& scan = seq.scans[t];
    Rng ground = detail::stream_for(spec.seed, t, 0);
    const double half = 0.5 * spec.ground_extent;
    for (int i = 0; i < spec.ground_points; ++i) {
      const double x = ground.uniform(-half, half);
      const double y = ground.uniform(-half, half);
      const double z = spec.ground_noise > 0.0 ? ground.normal(0.0, spec.ground_noise) : 0.0;
      scan.positions.push_back(detail::to_float_grid(Vec3(x, y, z)));
      scan.remission.push_back(0.3f);
      scan.semantic.push_back(static_cast<std::uint16_t>(spec.stuff_class));
      scan.instance.push_back(0);
    }
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
      const auto& o = spec.objects[k];
      Rng rng = detail::stream_for(spec.seed, t, k + 1);
      const Vec3 c = center_at(o, t);
      for (int i = 0; i < o.points_per_scan; ++i) {
        Vec3 p = c + detail::sample_box_surface(o.size, rng);
        if (o.noise > 0.0) p += Vec3(rng.normal(0.0, o.noise), rng.normal(0.0, o.noise), rng.normal(0.0, o.noise));
        scan.positions.push_back(detail::to_float_grid(p));
        scan.remission.push_back(0.5f + 0.1f * static_cast<float>(o.semantic % 4));
        scan.semantic.push_back(static_cast<std::uint16_t>(o.semantic));
        scan.instance.push_back(static_cast<std::uint16_t>(k + 1));
      }
    }
  }
  return seq;
}

/// Writes the sequence in the lidar_io directory layout.
inline void write_dataset(const std::filesystem::path& dir, const Sequence& seq) {
  lidar_io::write_sequence(dir, seq.scans, seq.poses);
}

/// Ground-truth votes: c* - x for thing points (instance_gt > 0), zero otherwise.
inline std::vector<Vec3> oracle_votes(const PointCloud4D& volume, std::span<const InstanceGT4D> gt) {
  std::unordered_map<std::uint32_t, Vec3> centers;
  for (const auto& g : gt) centers[g.id] = g.center;
  std::vector<Vec3> offsets(volume.size(), Vec3::Zero());
  if (!volume.has_gt()) return offsets;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    const auto id = volume.instance_gt[i];
    if (id == 0) continue;
    if (const auto it = centers.find(id); it != centers.end()) offsets[i] = it->second - volume.positions[i];
  }
  return offsets;
}

// ---------------------------------------------------------------------------
// Scene spec text form
//
//   scans = 20
//   seed = 7
//   stuff_class = 3
//   ground_extent = 40
//   ground_points = 800
//   ground_noise = 0
//   # class  size(x y z)  center(x y z)  velocity(x y z)  points  noise
//   object = 1  4 1.8 1.5  -12 -8 0.75  0.5 0 0  120  0
// ---------------------------------------------------------------------------

inline SceneSpec parse_scene_text(const std::string& text) {
  SceneSpec s;
  s.objects.clear();
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = stop4d::detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "scene line " + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where, "expected key = value");
    const std::string key = stop4d::detail::trim(line.substr(0, eq));
    const std::string value = stop4d::detail::trim(line.substr(eq + 1));
    if (key == "scans") s.num_scans = static_cast<int>(stop4d::detail::parse_int(key, value));
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(stop4d::detail::parse_int(key, value));
    else if (key == "stuff_class") s.stuff_class = static_cast<int>(stop4d::detail::parse_int(key, value));
    else if (key == "ground_extent") s.ground_extent = stop4d::detail::parse_double(key, value);
    else if (key == "ground_points") s.ground_points = static_cast<int>(stop4d::detail::parse_int(key, value));
    else if (key == "ground_noise") s.ground_noise = stop4d::detail::parse_double(key, value);
    else if (key == "object") {
      std::istringstream vs(value);
      std::vector<double> v;
      std::string tok;
      while (vs >> tok) v.push_back(stop4d::detail::parse_double(where, tok));
      if (v.size() != 12) throw ConfigError(where, "object needs 12 numbers");
      ObjectSpec o;
      o.semantic = static_cast<int>(v[0]);
      o.size = {v[1], v[2], v[3]};
      o.center = {v[4], v[5], v[6]};
      o.velocity = {v[7], v[8], v[9]};
      o.points_per_scan = static_cast<int>(v[10]);
      o.noise = v[11];
      s.objects.push_back(o);
    } else {
      throw ConfigError(key, "unknown scene key");
    }
  }
  return s;
}

inline std::string scene_to_text(const SceneSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << "scans = " << s.num_scans << "\nseed = " << s.seed << "\nstuff_class = " << s.stuff_class
     << "\nground_extent = " << s.ground_extent << "\nground_points = " << s.ground_points
     << "\nground_noise = " << s.ground_noise << '\n';
  for (const auto& o : s.objects) {
    os << "object = " << o.semantic << ' ' << o.size.x() << ' ' << o.size.y() << ' ' << o.size.z() << ' '
       << o.center.x() << ' ' << o.center.y() << ' ' << o.center.z() << ' ' << o.velocity.x() << ' '
       << o.velocity.y() << ' ' << o.velocity.z() << ' ' << o.points_per_scan << ' ' << o.noise << '\n';
  }
  return os.str();
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("scene", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene_text(ss.str());
}

}  // namespace stop4d::synth
