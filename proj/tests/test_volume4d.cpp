#include "stop4d/synth.hpp"
#include "stop4d/volume4d.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

using namespace stop4d;
using namespace stop4d::volume4d;

namespace {

Scan plain_scan(std::size_t n, double x0 = 0.0) {
  Scan s;
  for (std::size_t i = 0; i < n; ++i) {
    s.positions.push_back(Vec3(x0 + static_cast<double>(i) * 0.01, 0, 0));
    s.remission.push_back(0.5f);
  }
  return s;
}

Scan unit_cube_scan(const Vec3& center, std::uint32_t id = 1) {
  Scan s;
  for (int dx : {-1, 1})
    for (int dy : {-1, 1})
      for (int dz : {-1, 1}) {
        s.positions.push_back(center + 0.5 * Vec3(dx, dy, dz));
        s.remission.push_back(0.f);
        s.semantic.push_back(1);
        s.instance.push_back(id);
      }
  return s;
}

}  // namespace

TEST(SampleCount, CeilOfFraction) {
  EXPECT_EQ(sample_count(1000, 0.10), 100u);
  EXPECT_EQ(sample_count(1001, 0.10), 101u);
  EXPECT_EQ(sample_count(7, 0.5), 4u);
  EXPECT_EQ(sample_count(3, 2.0), 3u);
  EXPECT_EQ(sample_count(0, 0.1), 0u);
}

TEST(FormVolume, SingleScanIsTheScan) {
  Config cfg;
  cfg.temporal_window = 1;
  Rng rng(1);
  const Scan s = plain_scan(37);
  const auto v = form_volume(std::span<const Scan>(&s, 1), 5, {}, cfg, rng);
  v.check();
  ASSERT_EQ(v.size(), 37u);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(v.positions[i], s.positions[i]);
    EXPECT_EQ(v.scan_index[i], 0);
    EXPECT_EQ(v.origin[i], (PointKey{5, static_cast<std::uint32_t>(i)}));
  }
}

TEST(FormVolume, TenPercentOfPastScan) {
  Config cfg;
  cfg.temporal_window = 2;
  Rng rng(2);
  const std::vector<Scan> scans{plain_scan(1000), plain_scan(50, 100.0)};
  const std::vector<std::vector<double>> obj{std::vector<double>(1000, 0.0)};
  const auto v = form_volume(scans, 0, obj, cfg, rng);
  v.check();
  std::size_t past = 0;
  for (int s : v.scan_index) past += s == 0;
  EXPECT_EQ(past, 100u);
  EXPECT_EQ(v.size(), 150u);
}

TEST(FormVolume, ClippedWindowAlignsCurrentScanLast) {
  Config cfg;
  cfg.temporal_window = 4;
  Rng rng(3);
  const std::vector<Scan> scans{plain_scan(20), plain_scan(10, 5.0)};
  const std::vector<std::vector<double>> obj{std::vector<double>(20, 1.0)};
  const auto v = form_volume(scans, 0, obj, cfg, rng);
  v.check();
  std::set<int> idx(v.scan_index.begin(), v.scan_index.end());
  EXPECT_EQ(idx, (std::set<int>{2, 3}));
}

TEST(FormVolume, CountInvariantAndNoDuplicates) {
  Config cfg;
  cfg.temporal_window = 4;
  cfg.sample_fraction = 0.37;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<Scan> scans;
    std::vector<std::vector<double>> obj;
    std::size_t expect = 0;
    for (int s = 0; s < 4; ++s) {
      const std::size_t n = 10 + rng.below(90);
      scans.push_back(plain_scan(n, 10.0 * s));
      if (s < 3) {
        std::vector<double> o(n);
        for (auto& x : o) x = rng.uniform();
        obj.push_back(o);
        expect += static_cast<std::size_t>(std::ceil(0.37 * static_cast<double>(n) - 1e-12));
      } else {
        expect += n;
      }
    }
    const auto v = form_volume(scans, 10, obj, cfg, rng);
    ASSERT_EQ(v.size(), expect);
    std::set<PointKey> keys(v.origin.begin(), v.origin.end());
    EXPECT_EQ(keys.size(), v.size());
  }
}

TEST(WeightedSampling, UniformWeightsGiveUniformInclusionChiSquare) {
  // 20 items, pick 5, 20000 draws: each item is included with probability
  // 1/4. Chi-square with 19 dof, critical value 43.82 at p = 0.001.
  const std::size_t n = 20, k = 5;
  const int draws = 20000;
  std::vector<double> w(n, 1.0 + 1e-3);
  std::vector<int> hits(n, 0);
  for (int d = 0; d < draws; ++d) {
    Rng rng(Rng::splitmix(static_cast<std::uint64_t>(d) + 1));
    for (auto i : weighted_sample_without_replacement(w, k, rng)) ++hits[i];
  }
  const double e = static_cast<double>(draws) * k / n;
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - e) * (h - e) / e;
  EXPECT_LT(chi2, 43.82);
}

TEST(WeightedSampling, HeavierWeightsDrawnMoreOftenAndFloorKeepsAll) {
  std::vector<double> w(10, 1e-3);
  w[3] = 1.0;
  int heavy = 0;
  std::vector<int> ever(10, 0);
  for (int d = 0; d < 4000; ++d) {
    Rng rng(static_cast<std::uint64_t>(d) * 7919 + 3);
    for (auto i : weighted_sample_without_replacement(w, 1, rng)) {
      heavy += i == 3;
      ever[i] = 1;
    }
  }
  EXPECT_GT(heavy, 3800);
  // Light items are drawn with probability ~1e-3 each; force coverage with k = n - 1.
  Rng rng(1);
  const auto most = weighted_sample_without_replacement(w, 9, rng);
  EXPECT_EQ(most.size(), 9u);
  EXPECT_EQ(std::set<std::size_t>(most.begin(), most.end()).size(), 9u);
}

TEST(RecomputeGt, StaticCubeOverTwoScans) {
  std::vector<Scan> scans{unit_cube_scan(Vec3(1, 2, 3)), unit_cube_scan(Vec3(1, 2, 3))};
  Config cfg;
  cfg.sample_fraction = 1.0;
  Rng rng(1);
  const std::vector<std::vector<double>> obj{std::vector<double>(8, 1.0)};
  const auto v = form_volume(scans, 0, obj, cfg, rng);
  const auto gt = recompute_gt(v);
  ASSERT_EQ(gt.size(), 1u);
  EXPECT_TRUE(gt[0].bbox_size.isApprox(Vec3(1, 1, 1)));
  EXPECT_TRUE(gt[0].center.isApprox(Vec3(1, 2, 3)));
  EXPECT_EQ(gt[0].members.size(), 16u);
}

TEST(RecomputeGt, MovingObjectSpansBothScans) {
  synth::SceneSpec spec;
  spec.num_scans = 2;
  spec.ground_points = 20;
  spec.objects = {{1, {1, 1, 1}, {0, 0, 0.5}, {1, 0, 0}, 400, 0.0}};
  const auto seq = synth::generate(spec);
  Config cfg;
  cfg.sample_fraction = 1.0;
  Rng rng(4);
  const std::vector<std::vector<double>> obj{gt_objectness(seq.scans[0], cfg)};
  const auto v = form_volume(seq.scans, 0, obj, cfg, rng);
  const auto gt = recompute_gt(v);
  ASSERT_EQ(gt.size(), 1u);
  // Independent recomputation from the generated points.
  Vec3 lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
  for (const auto& s : seq.scans)
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s.instance[i] == 1) {
        lo = lo.cwiseMin(s.positions[i]);
        hi = hi.cwiseMax(s.positions[i]);
      }
  EXPECT_TRUE(gt[0].center.isApprox(0.5 * (lo + hi)));
  EXPECT_NEAR(gt[0].bbox_size.x(), 2.0, 0.05);
  EXPECT_NEAR(gt[0].center.x(), 0.5, 0.03);
  // Strictly differs from the single-scan centers.
  EXPECT_GT(std::abs(gt[0].center.x() - synth::center_at(spec.objects[0], 1).x()), 0.4);
  EXPECT_GT(std::abs(gt[0].center.x() - synth::center_at(spec.objects[0], 0).x()), 0.4);
}

TEST(RecomputeGt, NoThingPointsNoRecords) {
  Config cfg;
  cfg.temporal_window = 1;
  Rng rng(1);
  Scan s = plain_scan(5);
  s.semantic.assign(5, 3);
  s.instance.assign(5, 0);
  const auto v = form_volume(std::span<const Scan>(&s, 1), 0, {}, cfg, rng);
  EXPECT_TRUE(recompute_gt(v).empty());
}

TEST(RecomputeGt, ClosestGt) {
  std::vector<InstanceGT4D> gt(2);
  gt[0].center = Vec3(0, 0, 0);
  gt[1].center = Vec3(5, 0, 0);
  EXPECT_EQ(closest_gt(gt, Vec3(4, 0, 0)), 1);
  EXPECT_EQ(closest_gt({}, Vec3(4, 0, 0)), -1);
}
