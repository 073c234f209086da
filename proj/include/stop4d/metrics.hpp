#pragma once

// Segmentation and tracking quality: S_cls, S_assoc and their geometric mean.

#include "stop4d/config.hpp"
#include "stop4d/core.hpp"
#include "stop4d/lidar_io.hpp"

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_map>
#include <vector>

namespace stop4d::metrics {

struct ClassScore {
  double score = 0.0;
  std::map<int, double> per_class_iou;  // classes present in GT or prediction
};

/// Point IoU per class over points whose GT class is in `classes`; the score
/// is the mean over classes present in the GT.
inline ClassScore s_cls(std::span<const std::uint16_t> gt, std::span<const std::uint16_t> pred,
                        std::span<const int> classes) {
  if (gt.size() != pred.size()) throw FormatError("s_cls: GT and prediction lengths differ");
  std::map<int, std::size_t> tp, fp, fn;
  auto listed = [&](int c) { return std::find(classes.begin(), classes.end(), c) != classes.end(); };
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i];
    if (!listed(g)) continue;
    const int p = pred[i];
    if (g == p) {
      ++tp[g];
    } else {
      ++fn[g];
      if (listed(p)) ++fp[p];
    }
  }
  ClassScore out;
  std::size_t present = 0;
  double sum = 0.0;
  for (int c : classes) {
    const std::size_t denom = tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp[c]) / static_cast<double>(denom);
    out.per_class_iou[c] = iou;
    if (tp[c] + fn[c] > 0) {
      sum += iou;
      ++present;
    }
  }
  out.score = present == 0 ? 0.0 : sum / static_cast<double>(present);
  return out;
}

struct AssocScore {
  double score = 0.0;
  bool no_gt_tracks = false;
  std::map<std::uint64_t, double> per_track;  // GT track key -> its normalized term
};

/// Track ids per point (0 = no track). For each GT track t:
///   (1/|t|) * sum over pred tracks s meeting t of |s ∩ t| * IoU(s, t)
/// averaged over GT tracks. No GT tracks gives 1.0 with no_gt_tracks set.
inline AssocScore s_assoc(std::span<const std::uint64_t> gt, std::span<const std::uint64_t> pred) {
  if (gt.size() != pred.size()) throw FormatError("s_assoc: GT and prediction lengths differ");
  std::unordered_map<std::uint64_t, std::size_t> gt_size, pred_size;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::size_t> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i]) ++gt_size[gt[i]];
    if (pred[i]) ++pred_size[pred[i]];
    if (gt[i] && pred[i]) ++inter[{gt[i], pred[i]}];
  }
  AssocScore out;
  if (gt_size.empty()) {
    out.score = 1.0;
    out.no_gt_tracks = true;
    return out;
  }
  for (const auto& [key, n] : gt_size) out.per_track[key] = 0.0;
  for (const auto& [pair, tpa] : inter) {
    const double t = static_cast<double>(gt_size[pair.first]);
    const double s = static_cast<double>(pred_size[pair.second]);
    const double a = static_cast<double>(tpa);
    out.per_track[pair.first] += a * (a / (t + s - a)) / t;
  }
  double sum = 0.0;
  for (const auto& [key, v] : out.per_track) sum += v;
  out.score = sum / static_cast<double>(out.per_track.size());
  return out;
}

inline double lstq(double cls, double assoc) {
  if (cls < 0.0 || cls > 1.0 || assoc < 0.0 || assoc > 1.0) throw NumericError("lstq: scores must lie in [0, 1]");
  return std::sqrt(cls * assoc);
}

struct EvalReport {
  double s_cls = 0.0;
  double s_assoc = 0.0;
  double lstq = 0.0;
  bool no_gt_tracks = false;
  std::map<int, double> class_iou;
  std::map<int, double> class_assoc;  // every scored class; stuff stays 0
  std::size_t points = 0;
  std::size_t scored_points = 0;
  std::size_t gt_tracks = 0;
  std::size_t pred_tracks = 0;
};

/// Scores label words (semantic | instance << 16) of a whole sequence. GT
/// tracks are thing points with instance > 0 keyed by their full word;
/// predicted tracks are keyed by instance id. Points whose GT class is not in
/// the evaluated class list are ignored by both scores.
inline EvalReport evaluate(std::span<const std::uint32_t> gt_words, std::span<const std::uint32_t> pred_words,
                           const Config& cfg) {
  if (gt_words.size() != pred_words.size()) throw FormatError("evaluate: GT and prediction point counts differ");
  const auto classes = cfg.eval_classes();
  std::vector<std::uint16_t> gs, ps;
  std::vector<std::uint64_t> gt_track, pred_track;
  for (std::size_t i = 0; i < gt_words.size(); ++i) {
    const auto g = lidar_io::decode_label(gt_words[i]);
    if (std::find(classes.begin(), classes.end(), g.semantic) == classes.end()) continue;
    const auto p = lidar_io::decode_label(pred_words[i]);
    gs.push_back(g.semantic);
    ps.push_back(p.semantic);
    gt_track.push_back(cfg.is_thing(g.semantic) && g.instance > 0 ? gt_words[i] : 0);
    pred_track.push_back(p.instance);
  }
  EvalReport r;
  r.points = gt_words.size();
  r.scored_points = gs.size();
  const auto cls = s_cls(gs, ps, classes);
  const auto assoc = s_assoc(gt_track, pred_track);
  r.s_cls = cls.score;
  r.s_assoc = assoc.score;
  r.no_gt_tracks = assoc.no_gt_tracks;
  r.lstq = lstq(r.s_cls, r.s_assoc);
  r.class_iou = cls.per_class_iou;
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& [key, v] : assoc.per_track) {
    auto& a = acc[static_cast<int>(key & 0xFFFFu)];
    a.first += v;
    ++a.second;
  }
  for (int c : classes) r.class_assoc[c] = acc.count(c) ? acc[c].first / static_cast<double>(acc[c].second) : 0.0;
  r.gt_tracks = assoc.per_track.size();
  std::vector<std::uint64_t> ids(pred_track);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  r.pred_tracks = ids.size() - (ids.empty() || ids.front() != 0 ? 0 : 1);
  return r;
}

/// Reads a GT sequence directory (labels/NNNNNN.label) and a prediction
/// directory of the same layout, concatenated over all scans.
inline EvalReport evaluate_dirs(const std::filesystem::path& gt_dir, const std::filesystem::path& pred_dir,
                                const Config& cfg) {
  const std::size_t n = lidar_io::count_label_files(gt_dir);
  if (n == 0) throw FormatError("evaluate: no GT label files under " + gt_dir.string());
  const std::size_t m = lidar_io::count_label_files(pred_dir);
  if (m != n)
    throw FormatError("evaluate: " + std::to_string(n) + " GT scans but " + std::to_string(m) + " prediction scans");
  std::vector<std::uint32_t> gt, pred;
  for (std::size_t s = 0; s < n; ++s) {
    const auto g = lidar_io::read_label_words(lidar_io::label_path(gt_dir, s));
    const auto p = lidar_io::read_label_words(lidar_io::label_path(pred_dir, s));
    if (g.size() != p.size())
      throw FormatError("evaluate: scan " + std::to_string(s) + " has " + std::to_string(g.size()) +
                        " GT labels but " + std::to_string(p.size()) + " predicted");
    gt.insert(gt.end(), g.begin(), g.end());
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return evaluate(gt, pred, cfg);
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// metric,value lines followed by class rows.
inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "metric,value\n";
  os << "lstq," << fixed(r.lstq, 6) << '\n';
  os << "s_assoc," << fixed(r.s_assoc, 6) << '\n';
  os << "s_cls," << fixed(r.s_cls, 6) << '\n';
  os << "no_gt_tracks," << (r.no_gt_tracks ? 1 : 0) << '\n';
  os << "gt_tracks," << r.gt_tracks << '\n';
  os << "pred_tracks," << r.pred_tracks << '\n';
  os << "\nclass,iou,s_assoc\n";
  for (const auto& [c, a] : r.class_assoc) {
    const auto it = r.class_iou.find(c);
    os << c << ',' << fixed(it == r.class_iou.end() ? 0.0 : it->second, 6) << ',' << fixed(a, 6) << '\n';
  }
  return os.str();
}

/// Per-category table: one row per class with IoU and S_assoc in percent.
inline std::string report_table(const EvalReport& r, const Config& cfg,
                                const std::map<int, std::string>& names = {}) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "class" << std::setw(8) << "kind" << std::right << std::setw(8) << "IoU"
     << std::setw(10) << "S_assoc" << '\n';
  for (const auto& [c, a] : r.class_assoc) {
    const auto nit = names.find(c);
    const std::string name = nit == names.end() ? "class " + std::to_string(c) : nit->second;
    const auto it = r.class_iou.find(c);
    os << std::left << std::setw(12) << name << std::setw(8) << (cfg.is_thing(c) ? "thing" : "stuff") << std::right
       << std::setw(8) << fixed(100.0 * (it == r.class_iou.end() ? 0.0 : it->second), 2) << std::setw(10)
       << fixed(100.0 * a, 2) << '\n';
  }
  os << "LSTQ " << fixed(100.0 * r.lstq, 2) << "  S_assoc " << fixed(100.0 * r.s_assoc, 2) << "  S_cls "
     << fixed(100.0 * r.s_cls, 2);
  if (r.no_gt_tracks) os << "  (no GT tracks: S_assoc defaulted to 1)";
  os << '\n';
  return os.str();
}

}  // namespace stop4d::metrics
