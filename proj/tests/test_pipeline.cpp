#include "stop4d/lidar_io.hpp"
#include "stop4d/metrics.hpp"
#include "stop4d/pipeline.hpp"
#include "stop4d/synth.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace stop4d;

namespace {

struct Fixture {
  testutil::TempDir dir{"pipeline"};
  synth::Sequence seq = synth::generate(synth::default_scene());
  Fixture() { synth::write_dataset(dir / "gt", seq); }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

metrics::EvalReport score(const pipeline::RunResult& r, const Config& cfg, const std::string& name) {
  auto& f = fixture();
  pipeline::write_run(f.dir / name, r);
  return metrics::evaluate_dirs(f.dir / "gt", f.dir / name, cfg);
}

pipeline::RunResult oracle_run(const Config& cfg) {
  pipeline::RunOptions opt;
  opt.oracle = true;
  return pipeline::run_sequence(fixture().seq.scans, cfg, opt);
}

}  // namespace

TEST(Pipeline, OracleOnDefaultSceneIsPerfect) {
  Config cfg;
  const auto r = oracle_run(cfg);
  const auto rep = score(r, cfg, "oracle");
  EXPECT_EQ(rep.s_assoc, 1.0);
  EXPECT_EQ(rep.s_cls, 1.0);
  EXPECT_EQ(rep.lstq, 1.0);
  EXPECT_EQ(r.tracklets.size(), synth::default_scene().objects.size());
}

TEST(Pipeline, EveryAggregationModeIsPerfectUnderOracle) {
  for (const char* mode : {"nms", "centers", "dbscan"}) {
    Config cfg;
    cfg.set("aggregate", mode);
    EXPECT_EQ(score(oracle_run(cfg), cfg, std::string("agg_") + mode).lstq, 1.0) << mode;
  }
}

TEST(Pipeline, GaussianVariantRuns) {
  for (const auto& p : aggregation::gaussian_presets()) {
    Config cfg;
    cfg.variant = Variant::Gaussian;
    cfg.probability_threshold = p.probability_threshold;
    cfg.selection_radius = p.selection_radius;
    const auto rep = score(oracle_run(cfg), cfg, std::string("gauss_") + p.name);
    EXPECT_GE(rep.lstq, 0.0) << p.name;
    EXPECT_LE(rep.lstq, 1.0) << p.name;
    EXPECT_EQ(rep.s_cls, 1.0) << p.name;
  }
}

TEST(Pipeline, SingleScanWindowStillSegments) {
  Config cfg;
  cfg.temporal_window = 1;
  const auto r = oracle_run(cfg);
  const auto rep = score(r, cfg, "t1");
  EXPECT_EQ(rep.s_cls, 1.0);
  // Every scan starts fresh tracklets: each GT track is split per scan.
  EXPECT_EQ(r.tracklets.size(), synth::default_scene().objects.size() * fixture().seq.scans.size());
  EXPECT_LT(rep.s_assoc, 0.2);
}

TEST(Pipeline, FourScanWindowIsPerfectUnderOracle) {
  Config cfg;
  cfg.temporal_window = 4;
  EXPECT_EQ(score(oracle_run(cfg), cfg, "t4").lstq, 1.0);
}

TEST(Pipeline, OutputIsDeterministic) {
  Config cfg;
  cfg.oracle_vote_noise = 0.3;
  score(oracle_run(cfg), cfg, "det_a");
  score(oracle_run(cfg), cfg, "det_b");
  EXPECT_TRUE(testutil::same_tree(fixture().dir / "det_a", fixture().dir / "det_b"));
}

TEST(Pipeline, TrackletsPartitionTheirPoints) {
  Config cfg;
  cfg.oracle_vote_noise = 0.5;
  const auto r = oracle_run(cfg);
  std::set<PointKey> seen;
  std::set<std::uint32_t> ids;
  for (const auto& t : r.tracklets) {
    EXPECT_TRUE(ids.insert(t.id).second);
    for (const auto& k : t.members) EXPECT_TRUE(seen.insert(k).second);
  }
  pipeline::write_run(fixture().dir / "partition", r);
  const auto back = lidar_io::read_predictions(fixture().dir / "partition");
  EXPECT_EQ(back.size(), r.tracklets.size());
}

TEST(Pipeline, ModelModeRunsWithUntrainedWeights) {
  Config cfg;
  cfg.feature_dim = 8;
  cfg.proposal_dim = 4;
  Model m(cfg);
  m.init(3);
  pipeline::RunOptions opt;
  opt.model = &m;
  const auto r = pipeline::run_sequence(fixture().seq.scans, cfg, opt);
  EXPECT_EQ(r.scan_sizes.size(), fixture().seq.scans.size());
  const auto rep = score(r, cfg, "model");
  EXPECT_GE(rep.lstq, 0.0);
  EXPECT_LE(rep.lstq, 1.0);
}

TEST(Pipeline, MissingModelOrWindowMismatchIsConfigError) {
  Config cfg;
  EXPECT_THROW(pipeline::run_sequence(fixture().seq.scans, cfg, {}), ConfigError);
  cfg.feature_dim = 8;
  cfg.proposal_dim = 4;
  Model m(cfg);
  m.init(1);
  auto other = cfg;
  other.temporal_window = 3;
  pipeline::RunOptions opt;
  opt.model = &m;
  EXPECT_THROW(pipeline::run_sequence(fixture().seq.scans, other, opt), ConfigError);
}

TEST(Pipeline, WindowStartClipsAtSequenceStart) {
  EXPECT_EQ(pipeline::window_start(0, 4), 0u);
  EXPECT_EQ(pipeline::window_start(2, 4), 0u);
  EXPECT_EQ(pipeline::window_start(3, 4), 0u);
  EXPECT_EQ(pipeline::window_start(7, 4), 4u);
  EXPECT_EQ(pipeline::window_start(7, 1), 7u);
}
