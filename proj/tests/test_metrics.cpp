#include "stop4d/lidar_io.hpp"
#include "stop4d/metrics.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace stop4d;
using namespace stop4d::metrics;

namespace {

std::vector<std::uint64_t> u64(std::initializer_list<int> xs) {
  std::vector<std::uint64_t> v;
  for (int x : xs) v.push_back(static_cast<std::uint64_t>(x));
  return v;
}

std::vector<std::uint16_t> u16(std::initializer_list<int> xs) {
  std::vector<std::uint16_t> v;
  for (int x : xs) v.push_back(static_cast<std::uint16_t>(x));
  return v;
}

std::uint32_t word(int sem, int inst) { 
  return lidar_io::encode_label({static_cast<std::uint16_t>(sem), static_cast<std::uint16_t>(inst)});
 }

}  // namespace

TEST(SAssoc, Examples) {
  EXPECT_DOUBLE_EQ(s_assoc(u64({1, 1, 2, 2}), u64({5, 5, 9, 9})).score, 1.0);
  // GT track of 4 points, one predicted track covering two of them.
  EXPECT_DOUBLE_EQ(s_assoc(u64({1, 1, 1, 1}), u64({3, 3, 0, 0})).score, 0.25);
  // GT track split into two equal halves.
  EXPECT_DOUBLE_EQ(s_assoc(u64({1, 1, 1, 1}), u64({3, 3, 4, 4})).score, 0.5);
}

TEST(SAssoc, NoGtTracksFlagged) {
  const auto a = s_assoc(u64({0, 0}), u64({1, 1}));
  EXPECT_TRUE(a.no_gt_tracks);
  EXPECT_EQ(a.score, 1.0);
}

TEST(SAssoc, EmptyPredictionsScoreZero) {
  EXPECT_EQ(s_assoc(u64({1, 1, 2}), u64({0, 0, 0})).score, 0.0);
  EXPECT_THROW(s_assoc(u64({1}), u64({1, 2})), FormatError);
}

TEST(SAssoc, MatchesBruteForceOnRandomInstances) {
  Rng rng(2023);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(500);
    const std::uint64_t gt_tracks = rng.below(11), pred_tracks = rng.below(12);
    std::vector<std::uint64_t> gt(n), pred(n);
    for (auto& g : gt) g = gt_tracks ? rng.below(gt_tracks + 1) : 0;
    for (auto& p : pred) p = pred_tracks ? rng.below(pred_tracks + 1) * 7 : 0;
    ASSERT_LE(std::abs(s_assoc(gt, pred).score - oracle::s_assoc(gt, pred)), 1e-12) << "trial " << trial;
  }
}

TEST(SAssoc, PredictionIdPermutationInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint64_t> gt(100), pred(100), perm_pred(100);
    for (auto& g : gt) g = rng.below(5);
    for (auto& p : pred) p = rng.below(6);
    std::vector<std::uint64_t> map{0, 1, 2, 3, 4, 5};
    for (std::size_t i = map.size() - 1; i > 1; --i) std::swap(map[i], map[1 + rng.below(i)]);
    for (std::size_t i = 0; i < 100; ++i) perm_pred[i] = pred[i] ? map[pred[i]] + 100 : 0;
    ASSERT_NEAR(s_assoc(gt, pred).score, s_assoc(gt, perm_pred).score, 1e-14);
  }
}

TEST(SCls, Examples) {
  const std::vector<int> classes{1, 2};
  EXPECT_DOUBLE_EQ(s_cls(u16({1, 2, 2}), u16({1, 2, 2}), classes).score, 1.0);
  // Class 1 IoU 1; class 2: TP 1, FN 1 -> 0.5 (the miss is predicted as unlisted class 3).
  EXPECT_DOUBLE_EQ(s_cls(u16({1, 2, 2}), u16({1, 2, 3}), classes).score, 0.75);
  // Class 3 listed but absent from both: excluded.
  const std::vector<int> three{1, 2, 3};
  EXPECT_DOUBLE_EQ(s_cls(u16({1, 2}), u16({1, 2}), three).score, 1.0);
  EXPECT_THROW(s_cls(u16({1}), u16({1, 1}), classes), FormatError);
}

TEST(SCls, MatchesBruteForceOnRandomInstances) {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<int> classes;
    for (int c = 0; c < 6; ++c)
      if (rng.below(3)) classes.push_back(c);
    std::vector<std::uint16_t> g(n), p(n);
    std::vector<int> gi(n), pi(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<std::uint16_t>(rng.below(7));
      p[i] = static_cast<std::uint16_t>(rng.below(7));
      gi[i] = g[i];
      pi[i] = p[i];
    }
    ASSERT_LE(std::abs(s_cls(g, p, classes).score - oracle::s_cls(gi, pi, classes)), 1e-12) << "trial " << trial;
  }
}

TEST(Lstq, Examples) {
  EXPECT_EQ(lstq(1.0, 1.0), 1.0);
  EXPECT_EQ(lstq(0.0, 0.7), 0.0);
  EXPECT_NEAR(lstq(0.588, 0.695), 0.639, 1e-3);
  EXPECT_THROW(lstq(1.2, 0.5), NumericError);
  EXPECT_THROW(lstq(0.5, -0.1), NumericError);
}

TEST(Evaluate, SemanticsIgnoreInstanceIdsAndIgnoredClasses) {
  Config cfg;
  cfg.thing_classes = {1, 2};
  cfg.stuff_classes = {3};
  const std::vector<std::uint32_t> gt{word(1, 1), word(1, 1), word(3, 0), word(0, 0), word(2, 5)};
  const std::vector<std::uint32_t> a{word(1, 4), word(1, 4), word(3, 0), word(2, 9), word(2, 6)};
  std::vector<std::uint32_t> b = a;
  for (auto& w : b) w = word(lidar_io::decode_label(w).semantic, 0);
  const auto ra = evaluate(gt, a, cfg);
  const auto rb = evaluate(gt, b, cfg);
  EXPECT_EQ(ra.s_cls, rb.s_cls);
  EXPECT_EQ(ra.s_cls, 1.0);  // the class-0 point is ignored
  EXPECT_EQ(ra.s_assoc, 1.0);
  EXPECT_EQ(rb.s_assoc, 0.0);
  EXPECT_NEAR(ra.lstq, std::sqrt(ra.s_cls * ra.s_assoc), 1e-12);
  EXPECT_EQ(ra.scored_points, 4u);
  EXPECT_EQ(ra.gt_tracks, 2u);
  EXPECT_EQ(ra.pred_tracks, 2u);
  EXPECT_EQ(ra.class_assoc.at(3), 0.0);
  EXPECT_EQ(ra.class_assoc.at(1), 1.0);
}

TEST(Evaluate, SameInstanceIdDifferentClassesAreDifferentGtTracks) {
  Config cfg;
  const std::vector<std::uint32_t> gt{word(1, 1), word(1, 1), word(2, 1), word(2, 1)};
  const std::vector<std::uint32_t> one{word(1, 1), word(1, 1), word(2, 1), word(2, 1)};
  // One predicted track covering both GT tracks halves the association.
  const auto r = evaluate(gt, one, cfg);
  EXPECT_EQ(r.gt_tracks, 2u);
  EXPECT_DOUBLE_EQ(r.s_assoc, 0.5);
}

TEST(Evaluate, NoGtTracksReported) {
  Config cfg;
  const std::vector<std::uint32_t> gt{word(3, 0), word(3, 0)};
  const auto r = evaluate(gt, gt, cfg);
  EXPECT_TRUE(r.no_gt_tracks);
  EXPECT_EQ(r.s_assoc, 1.0);
  EXPECT_NE(report_table(r, cfg).find("no GT tracks"), std::string::npos);
}

TEST(Evaluate, ScoresStayInUnitInterval) {
  Rng rng(11);
  Config cfg;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint32_t> gt(200), pred(200);
    for (auto& w : gt) w = word(static_cast<int>(rng.below(5)), static_cast<int>(rng.below(4)));
    for (auto& w : pred) w = word(static_cast<int>(rng.below(5)), static_cast<int>(rng.below(6)));
    const auto r = evaluate(gt, pred, cfg);
    ASSERT_GE(r.s_cls, 0.0);
    ASSERT_LE(r.s_cls, 1.0);
    ASSERT_GE(r.s_assoc, 0.0);
    ASSERT_LE(r.s_assoc, 1.0);
    ASSERT_NEAR(r.lstq, std::sqrt(r.s_cls * r.s_assoc), 1e-12);
  }
}

TEST(Evaluate, DirectoriesAndReports) {
  testutil::TempDir gt_dir("evgt"), pred_dir("evpred");
  std::filesystem::create_directories(gt_dir / "labels");
  std::filesystem::create_directories(pred_dir / "labels");
  lidar_io::write_label_words(lidar_io::label_path(gt_dir.path(), 0), std::vector<std::uint32_t>{word(1, 1), word(3, 0)});
  lidar_io::write_label_words(lidar_io::label_path(pred_dir.path(), 0),
                              std::vector<std::uint32_t>{word(1, 7), word(3, 0)});
  Config cfg;
  const auto r = evaluate_dirs(gt_dir.path(), pred_dir.path(), cfg);
  EXPECT_EQ(r.lstq, 1.0);
  const auto csv = report_csv(r);
  EXPECT_NE(csv.find("lstq,1.000000"), std::string::npos);
  const auto table = report_table(r, cfg, {{1, "car"}});
  EXPECT_NE(table.find("car"), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
  lidar_io::write_label_words(lidar_io::label_path(pred_dir.path(), 0), std::vector<std::uint32_t>{word(1, 7)});
  EXPECT_THROW(evaluate_dirs(gt_dir.path(), pred_dir.path(), cfg), FormatError);
}
