#include "stop4d/tracking.hpp"

#include <gtest/gtest.h>

#include <map>
#include <set>

using namespace stop4d;
using namespace stop4d::tracking;

namespace {

/// Window over scans {t-1, t}: `prev` and `cur` give the instance label of
/// each point (0 = background) for scan t-1 and scan t.
struct Window {
  PointCloud4D volume;
  std::vector<WindowInstance> instances;
  std::vector<int> semantic;
};

Window make_window(std::uint32_t t, const std::vector<int>& prev, const std::vector<int>& cur, int cls = 1) {
  Window w;
  w.volume.window = 2;
  std::map<int, std::vector<std::size_t>> by_label;
  auto add = [&](std::uint32_t scan, int slot, const std::vector<int>& labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::size_t idx = w.volume.size();
      w.volume.positions.push_back(Vec3::Zero());
      w.volume.scan_index.push_back(slot);
      w.volume.remission.push_back(0.f);
      w.volume.origin.push_back({scan, static_cast<std::uint32_t>(i)});
      w.semantic.push_back(labels[i] ? cls : 0);
      if (labels[i]) by_label[labels[i]].push_back(idx);
    }
  };
  if (t > 0) add(t - 1, 0, prev);
  add(t, 1, cur);
  for (auto& [label, members] : by_label) w.instances.push_back({members, cls});
  return w;
}

std::vector<std::uint32_t> feed(Stitcher& s, const Window& w) { return s.step(w.volume, w.instances, w.semantic); }

}  // namespace

TEST(Match, DiagonalForExampleMatrix) {
  const std::vector<std::vector<double>> iou{{0.9, 0.2}, {0.3, 0.8}};
  const std::vector<std::uint32_t> ids{1, 2};
  EXPECT_EQ(match_instances(iou, ids, 0.5), (std::vector<int>{0, 1}));
  EXPECT_EQ(match_instances(iou, ids, 0.1), (std::vector<int>{0, 1}));
}

TEST(Match, ThresholdAndZeroRejected) {
  const std::vector<std::vector<double>> iou{{0.4, 0.0}, {0.0, 0.0}};
  const std::vector<std::uint32_t> ids{1, 2};
  EXPECT_EQ(match_instances(iou, ids, 0.5), (std::vector<int>{-1, -1}));
  EXPECT_EQ(match_instances(iou, ids, 0.0), (std::vector<int>{0, -1}));
}

TEST(Match, TiesPreferOlderTrackletThenLowerInstance) {
  const std::vector<std::vector<double>> iou{{0.6, 0.6}, {0.6, 0.6}};
  const std::vector<std::uint32_t> ids{7, 3};
  EXPECT_EQ(match_instances(iou, ids, 0.5), (std::vector<int>{1, 0}));
}

TEST(Stitch, IdenticalInstanceKeepsId) {
  Stitcher s(0.5);
  const auto a = feed(s, make_window(0, {}, {1, 1, 0, 1}));
  const auto b = feed(s, make_window(1, {1, 1, 0, 1}, {1, 1, 1, 0}));
  ASSERT_EQ(a.size(), 1u);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(a[0], b[0]);
  ASSERT_EQ(s.tracklets().size(), 1u);
  EXPECT_EQ(s.tracklets()[0].members.size(), 6u);
}

TEST(Stitch, ZeroOverlapStartsNewTracklet) {
  Stitcher s(0.5);
  const auto a = feed(s, make_window(0, {}, {1, 1, 0, 0}));
  const auto b = feed(s, make_window(1, {0, 0, 1, 1}, {1, 1, 0, 0}));
  EXPECT_NE(a[0], b[0]);
  EXPECT_EQ(s.next_id(), 3u);
}

TEST(Stitch, IdsNeverReused) {
  Stitcher s(0.5);
  std::set<std::uint32_t> seen;
  for (std::uint32_t t = 0; t < 6; ++t) {
    // Every window's instance covers a different past subset, so none match.
    std::vector<int> prev(4, 0), cur(4, 0);
    cur[t % 4] = 1;
    const auto ids = feed(s, make_window(t, prev, cur));
    for (auto id : ids) EXPECT_TRUE(seen.insert(id).second) << id;
  }
}

TEST(Stitch, TwoObjectsSwapPositionsKeepIdentity) {
  Stitcher s(0.5);
  const auto a = feed(s, make_window(0, {}, {1, 1, 2, 2}));
  const auto b = feed(s, make_window(1, {2, 2, 1, 1}, {2, 2, 1, 1}));
  // Window 1 instance labels follow map order: label 1 = points {2,3} of the
  // past scan, which belonged to tracklet a[1].
  EXPECT_EQ(b[0], a[1]);
  EXPECT_EQ(b[1], a[0]);
}

TEST(Stitch, OutputPartitionsPoints) {
  Stitcher s(0.5);
  feed(s, make_window(0, {}, {1, 1, 2, 0, 3}));
  feed(s, make_window(1, {1, 1, 2, 0, 3}, {1, 2, 2, 0, 0}));
  feed(s, make_window(2, {1, 2, 2, 0, 0}, {3, 3, 3, 3, 0}));
  std::set<PointKey> all;
  std::size_t total = 0;
  for (const auto& t : s.tracklets()) {
    total += t.members.size();
    all.insert(t.members.begin(), t.members.end());
  }
  EXPECT_EQ(all.size(), total);
  EXPECT_EQ(total, 4u + 3u + 4u);
}

TEST(Stitch, InstanceWithoutCurrentPointsGetsNoId) {
  Stitcher s(0.5);
  feed(s, make_window(0, {}, {1, 1}));
  const auto b = feed(s, make_window(1, {1, 1}, {0, 0}));
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], 0u);
}

TEST(Stitch, PointAssignedTwiceIsAnError) {
  Stitcher s(0.5);
  auto w = make_window(0, {}, {1, 1});
  w.instances.push_back(w.instances[0]);
  EXPECT_THROW(feed(s, w), FormatError);
}

TEST(Stitch, TrackletSemanticIsMajorityOverAllMembers) {
  Stitcher s(0.5);
  auto w0 = make_window(0, {}, {1, 1, 1}, 2);
  auto w1 = make_window(1, {1, 1, 1}, {1, 1, 1}, 1);
  w1.semantic[3] = 2;  // one current point of class 2
  feed(s, w0);
  feed(s, w1);
  ASSERT_EQ(s.tracklets().size(), 1u);
  EXPECT_EQ(s.tracklets()[0].semantic, 2);  // 4 votes for class 2, 2 for class 1
}

TEST(Stitch, SingleScanWindowsAlwaysStartNewTracklets) {
  Stitcher s(0.5);
  for (std::uint32_t t = 0; t < 3; ++t) {
    Window w;
    w.volume.window = 1;
    for (std::uint32_t i = 0; i < 3; ++i) {
      w.volume.positions.push_back(Vec3::Zero());
      w.volume.scan_index.push_back(0);
      w.volume.remission.push_back(0.f);
      w.volume.origin.push_back({t, i});
      w.semantic.push_back(1);
    }
    w.instances.push_back({{0, 1, 2}, 1});
    feed(s, w);
  }
  EXPECT_EQ(s.tracklets().size(), 3u);
}
