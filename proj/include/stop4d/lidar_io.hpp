#pragma once

// SemanticKITTI-style readers and writers.
//
// Layout of a sequence directory:
//   velodyne/NNNNNN.bin    float32 x, y, z, remission per point (little-endian)
//   labels/NNNNNN.label    uint32 per point: semantic | instance << 16
//   poses.txt              12 numbers per line, 3x4 row-major sensor->world
//   calib.txt              optional, "Tr:" line with 12 numbers
//
// With a calibration, points map to the world frame as pose * Tr * p.

#include "stop4d/core.hpp"
#include "stop4d/types.hpp"

#include <Eigen/Dense>

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace stop4d::lidar_io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Byte helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t load_u32_le(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

inline void store_u32_le(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

inline float load_f32_le(const unsigned char* p) {
  return std::bit_cast<float>(load_u32_le(p));
}

inline void store_f32_le(unsigned char* p, float v) { store_u32_le(p, std::bit_cast<std::uint32_t>(v)); }

inline std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::vector<unsigned char>& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scans
// ---------------------------------------------------------------------------

inline Scan decode_scan(std::span<const unsigned char> bytes) {
  if (bytes.size() % 16 != 0) {
    std::ostringstream os;
    os << "scan length " << bytes.size() << " is not a multiple of 16; trailing record starts at byte offset "
       << (bytes.size() / 16) * 16;
    throw FormatError(os.str());
  }
  Scan s;
  const std::size_t n = bytes.size() / 16;
  s.positions.reserve(n);
  s.remission.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = bytes.data() + 16 * i;
    s.positions.emplace_back(detail::load_f32_le(p), detail::load_f32_le(p + 4),
                             detail::load_f32_le(p + 8));
    s.remission.push_back(detail::load_f32_le(p + 12));
  }
  return s;
}

/// Positions are narrowed to float32 on the way out.
inline std::vector<unsigned char> encode_scan(const Scan& s) {
  std::vector<unsigned char> bytes(16 * s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    unsigned char* p = bytes.data() + 16 * i;
    detail::store_f32_le(p, static_cast<float>(s.positions[i].x()));
    detail::store_f32_le(p + 4, static_cast<float>(s.positions[i].y()));
    detail::store_f32_le(p + 8, static_cast<float>(s.positions[i].z()));
    detail::store_f32_le(p + 12, i < s.remission.size() ? s.remission[i] : 0.0f);
  }
  return bytes;
}

inline Scan read_scan(const fs::path& path) {
  try {
    return decode_scan(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_scan(const fs::path& path, const Scan& s) { detail::write_file(path, encode_scan(s)); }

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

struct Label {
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;
  bool operator==(const Label&) const = default;
};

constexpr Label decode_label(std::uint32_t word) {
  return {static_cast<std::uint16_t>(word & 0xFFFFu), static_cast<std::uint16_t>(word >> 16)};
}

constexpr std::uint32_t encode_label(Label l) {
  return std::uint32_t{l.semantic} | (std::uint32_t{l.instance} << 16);
}

inline std::vector<std::uint32_t> decode_label_words(std::span<const unsigned char> bytes) {
  if (bytes.size() % 4 != 0) {
    std::ostringstream os;
    os << "label length " << bytes.size() << " is not a multiple of 4; trailing word starts at byte offset "
       << (bytes.size() / 4) * 4;
    throw FormatError(os.str());
  }
  std::vector<std::uint32_t> words(bytes.size() / 4);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = detail::load_u32_le(bytes.data() + 4 * i);
  return words;
}

inline std::vector<unsigned char> encode_label_words(std::span<const std::uint32_t> words) {
  std::vector<unsigned char> bytes(4 * words.size());
  for (std::size_t i = 0; i < words.size(); ++i) detail::store_u32_le(bytes.data() + 4 * i, words[i]);
  return bytes;
}

inline std::vector<std::uint32_t> read_label_words(const fs::path& path) {
  try {
    return decode_label_words(detail::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_label_words(const fs::path& path, std::span<const std::uint32_t> words) {
  detail::write_file(path, encode_label_words(words));
}

/// Fills scan.semantic / scan.instance from a label file of matching length.
inline void read_labels_into(const fs::path& path, Scan& scan) {
  const auto words = read_label_words(path);
  if (words.size() != scan.size())
    throw FormatError(path.string() + ": " + std::to_string(words.size()) + " labels for " +
                      std::to_string(scan.size()) + " points");
  scan.semantic.resize(words.size());
  scan.instance.resize(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const Label l = decode_label(words[i]);
    scan.semantic[i] = l.semantic;
    scan.instance[i] = l.instance;
  }
}

inline std::vector<std::uint32_t> scan_label_words(const Scan& s) {
  std::vector<std::uint32_t> words(s.size(), 0);
  for (std::size_t i = 0; i < s.size() && s.has_labels(); ++i)
    words[i] = encode_label({s.semantic[i], s.instance[i]});
  return words;
}

// ---------------------------------------------------------------------------
// Poses
// ---------------------------------------------------------------------------

/// Rigid transform p -> R p + t.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// (*this) after `inner`: p -> this(inner(p)).
  Pose compose(const Pose& inner) const {
    return {rotation * inner.rotation, rotation * inner.translation + translation};
  }

  /// Throws FormatError unless R is orthonormal within `tol`.
  void validate(double tol = 1e-3) const {
    const double err = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= tol) || !translation.allFinite())
      throw FormatError("pose rotation is not orthonormal (max deviation " + std::to_string(err) + ")");
  }

  static Pose from_row_major(std::span<const double> v) {
    if (v.size() != 12) throw FormatError("pose row needs 12 numbers, got " + std::to_string(v.size()));
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = v[4 * r + c];
      p.translation[r] = v[4 * r + 3];
    }
    return p;
  }

  std::array<double, 12> row_major() const {
    std::array<double, 12> out{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out[4 * r + c] = rotation(r, c);
      out[4 * r + 3] = translation[r];
    }
    return out;
  }
};

inline std::vector<Vec3> to_world(std::span<const Vec3> points, const Pose& pose) {
  pose.validate();
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(pose.apply(p));
  return out;
}

inline std::vector<Pose> parse_poses(const std::string& text) {
  std::vector<Pose> poses;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> v;
    double d;
    while (ls >> d) v.push_back(d);
    if (!ls.eof()) throw FormatError("poses line " + std::to_string(lineno) + ": non-numeric token");
    if (v.empty()) continue;
    if (v.size() != 12)
      throw FormatError("poses line " + std::to_string(lineno) + ": expected 12 numbers, got " +
                        std::to_string(v.size()));
    poses.push_back(Pose::from_row_major(v));
  }
  return poses;
}

inline std::vector<Pose> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_poses(ss.str());
}

inline void write_poses(const fs::path& path, std::span<const Pose> poses) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(17);
  for (const auto& p : poses) {
    const auto v = p.row_major();
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  }
}

/// Reads the "Tr:" entry of a KITTI calib.txt.
inline Pose read_calib(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Tr:", 0) != 0) continue;
    std::istringstream ls(line.substr(3));
    std::vector<double> v;
    double d;
    while (ls >> d) v.push_back(d);
    return Pose::from_row_major(v);
  }
  throw FormatError(path.string() + ": no Tr entry");
}

// ---------------------------------------------------------------------------
// Sequence directories
// ---------------------------------------------------------------------------

inline std::string frame_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

inline fs::path scan_path(const fs::path& dir, std::size_t i) {
  return dir / "velodyne" / (frame_name(i) + ".bin");
}
inline fs::path label_path(const fs::path& dir, std::size_t i) {
  return dir / "labels" / (frame_name(i) + ".label");
}

/// Number of consecutive NNNNNN.bin files starting at 000000.
inline std::size_t count_scans(const fs::path& dir) {
  std::size_t n = 0;
  while (fs::exists(scan_path(dir, n))) ++n;
  return n;
}

/// Number of consecutive NNNNNN.label files starting at 000000.
inline std::size_t count_label_files(const fs::path& dir) {
  std::size_t n = 0;
  while (fs::exists(label_path(dir, n))) ++n;
  return n;
}

/// Loads every scan of a sequence into the world frame, with labels when the
/// labels/ directory is present.
inline std::vector<Scan> load_sequence(const fs::path& dir) {
  const std::size_t n = count_scans(dir);
  if (n == 0) throw FormatError(dir.string() + ": no velodyne/000000.bin");
  std::vector<Pose> poses(n, Pose::identity());
  if (fs::exists(dir / "poses.txt")) {
    poses = read_poses(dir / "poses.txt");
    if (poses.size() < n)
      throw FormatError(dir.string() + ": poses.txt has " + std::to_string(poses.size()) +
                        " rows for " + std::to_string(n) + " scans");
  }
  Pose calib = Pose::identity();
  if (fs::exists(dir / "calib.txt")) calib = read_calib(dir / "calib.txt");

  std::vector<Scan> scans(n);
  for (std::size_t i = 0; i < n; ++i) {
    scans[i] = read_scan(scan_path(dir, i));
    if (fs::exists(label_path(dir, i))) read_labels_into(label_path(dir, i), scans[i]);
    const Pose world = poses[i].compose(calib);
    world.validate();
    for (auto& p : scans[i].positions) p = world.apply(p);
  }
  return scans;
}

/// Writes scans (already in the world frame), labels and identity poses.
inline void write_sequence(const fs::path& dir, std::span<const Scan> scans,
                           std::span<const Pose> poses) {
  fs::create_directories(dir / "velodyne");
  for (std::size_t i = 0; i < scans.size(); ++i) {
    write_scan(scan_path(dir, i), scans[i]);
    if (scans[i].has_labels()) write_label_words(label_path(dir, i), scan_label_words(scans[i]));
  }
  write_poses(dir / "poses.txt", poses);
}

// ---------------------------------------------------------------------------
// Predictions
// ---------------------------------------------------------------------------

/// Writes one label file per scan under out_dir/labels/. Tracklet ids are
/// remapped to a dense 1..M range in ascending id order; the table is written
/// to out_dir/instance_map.txt as "dense_id tracklet_id" lines.
///
/// Points covered by no tracklet receive background_semantic[scan][point]
/// when given, else semantic 0; their instance is always 0.
inline std::map<std::uint32_t, std::uint16_t> write_predictions(
    std::span<const Tracklet> tracklets, std::span<const std::size_t> scan_point_counts,
    const fs::path& out_dir,
    const std::vector<std::vector<std::uint16_t>>* background_semantic = nullptr) {
  std::vector<std::uint32_t> ids;
  for (const auto& t : tracklets) ids.push_back(t.id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw FormatError("write_predictions: duplicate tracklet id");
  if (ids.size() > 0xFFFFu)
    throw CapacityError("write_predictions: " + std::to_string(ids.size()) +
                        " tracklets exceed the 16-bit instance budget");
  std::map<std::uint32_t, std::uint16_t> dense;
  for (std::size_t i = 0; i < ids.size(); ++i) dense[ids[i]] = static_cast<std::uint16_t>(i + 1);

  std::vector<std::vector<std::uint32_t>> words(scan_point_counts.size());
  std::vector<std::vector<bool>> covered(scan_point_counts.size());
  for (std::size_t s = 0; s < scan_point_counts.size(); ++s) {
    words[s].assign(scan_point_counts[s], 0);
    covered[s].assign(scan_point_counts[s], false);
    if (background_semantic) {
      const auto& bg = (*background_semantic)[s];
      if (bg.size() != scan_point_counts[s])
        throw FormatError("write_predictions: background semantics length mismatch in scan " +
                          std::to_string(s));
      for (std::size_t p = 0; p < bg.size(); ++p) words[s][p] = bg[p];
    }
  }
  for (const auto& t : tracklets) {
    if (t.semantic < 0 || t.semantic > 0xFFFF)
      throw CapacityError("write_predictions: semantic id " + std::to_string(t.semantic) +
                          " does not fit 16 bits");
    const std::uint32_t word =
        encode_label({static_cast<std::uint16_t>(t.semantic), dense.at(t.id)});
    for (const auto& k : t.members) {
      if (k.scan >= scan_point_counts.size() || k.point >= scan_point_counts[k.scan])
        throw FormatError("write_predictions: member outside scan bounds");
      if (covered[k.scan][k.point])
        throw FormatError("write_predictions: point covered by two tracklets");
      covered[k.scan][k.point] = true;
      words[k.scan][k.point] = word;
    }
  }
  fs::create_directories(out_dir / "labels");
  for (std::size_t s = 0; s < words.size(); ++s) write_label_words(label_path(out_dir, s), words[s]);

  std::ofstream map_out(out_dir / "instance_map.txt");
  for (const auto& [id, d] : dense) map_out << d << ' ' << id << '\n';
  return dense;
}

/// Reads predictions back as tracklets. When instance_map.txt exists the
/// original tracklet ids are restored, otherwise dense ids are returned.
inline std::vector<Tracklet> read_predictions(const fs::path& dir) {
  std::map<std::uint16_t, std::uint32_t> original;
  if (std::ifstream in(dir / "instance_map.txt"); in) {
    std::uint32_t d, id;
    while (in >> d >> id) original[static_cast<std::uint16_t>(d)] = id;
  }
  std::map<std::uint16_t, Tracklet> by_dense;
  const std::size_t n = count_label_files(dir);
  for (std::size_t s = 0; s < n; ++s) {
    const auto words = read_label_words(label_path(dir, s));
    for (std::size_t p = 0; p < words.size(); ++p) {
      const Label l = decode_label(words[p]);
      if (l.instance == 0) continue;
      auto& t = by_dense[l.instance];
      if (t.members.empty()) {
        t.id = original.count(l.instance) ? original[l.instance] : l.instance;
        t.semantic = l.semantic;
      } else if (t.semantic != l.semantic) {
        throw FormatError("read_predictions: instance " + std::to_string(l.instance) +
                          " carries two semantic classes");
      }
      t.members.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(p)});
    }
  }
  std::vector<Tracklet> out;
  for (auto& [d, t] : by_dense) out.push_back(std::move(t));
  std::sort(out.begin(), out.end(), [](const Tracklet& a, const Tracklet& b) { return a.id < b.id; });
  return out;
}

}  // namespace stop4d::lidar_io
