#include "dfn/mp.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "dfn/pipeline.hpp"
#include "test_util.hpp"

using namespace dfn;

namespace {

KeypointSet make_set(std::initializer_list<KeypointPair> pairs) {
  KeypointSet s;
  for (const auto& p : pairs) {
    KeypointPair q = p;
    q.displacement = (q.goal - q.initial).norm();
    s.pairs.push_back(q);
  }
  return s;
}

PointCloud sim_cloud(SpringMesh& mesh, std::uint64_t seed) {
  return surface_cloud(mesh, 1024, seed);
}

}  // namespace

TEST(DetectKeypoints, IdenticalCloudsHaveZeroDisplacement) {
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {8, 4, 2}, {1000.0, 0.3});
  const PointCloud cloud = sim_cloud(mesh, 3);
  const KeypointSet set = detect_keypoints(cloud, cloud, 50);
  ASSERT_EQ(set.pairs.size(), 50u);
  for (const auto& p : set.pairs) EXPECT_EQ(p.displacement, 0.0);
}

TEST(DetectKeypoints, TranslatedGoalGivesUniformDisplacement) {
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {8, 4, 2}, {1000.0, 0.3});
  const PointCloud cloud = sim_cloud(mesh, 5);
  const Vec3 t{0.01, -0.02, 0.005};
  const KeypointSet set = detect_keypoints(cloud, translated(cloud, t), 80);
  for (const auto& p : set.pairs) {
    EXPECT_NEAR(p.displacement, t.norm(), 1e-9);
  }
}

TEST(DetectKeypoints, DefaultKMatchesConfig) {
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {8, 4, 2}, {1000.0, 0.3});
  const PointCloud cloud = surface_cloud(mesh, 2048, 7);
  const KeypointSet set = detect_keypoints(cloud, cloud);
  EXPECT_EQ(set.pairs.size(), 200u);
}

TEST(DetectKeypoints, MissingIdsRequireFallbackOptIn) {
  Rng rng(9);
  const PointCloud a = test::random_cloud(rng, 64, 0.1);
  const PointCloud b = test::random_cloud(rng, 64, 0.1);
  EXPECT_THROW(detect_keypoints(a, b, 10), CorrespondenceError);
  EXPECT_NO_THROW(detect_keypoints(a, b, 10, /*allow_nn_fallback=*/true));
}

TEST(DetectKeypoints, KOutOfRange) {
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {4, 2, 1}, {1000.0, 0.3});
  const PointCloud cloud = surface_cloud(mesh, 128, 1);
  EXPECT_THROW(detect_keypoints(cloud, cloud, 0), SizeError);
  EXPECT_THROW(detect_keypoints(cloud, cloud, 129), SizeError);
}

TEST(SelectMpHeuristic, SingleMoverWins) {
  const KeypointSet set = make_set({
      {{0, 0, 0}, {0, 0, 0}},
      {{1, 0, 0}, {1, 0.3, 0}},
      {{0, 1, 0}, {0, 1, 0}},
  });
  const Vec3 mp = select_mp_heuristic(set, 1);
  EXPECT_DOUBLE_EQ(mp.x, 1.0);
  EXPECT_DOUBLE_EQ(mp.y, 0.0);
}

TEST(SelectMpHeuristic, WeightedAverageFormula) {
  // displacements 2d and d with M=2: (2 p1 + p2) / 3
  const KeypointSet set = make_set({
      {{1, 0, 0}, {1, 0.2, 0}},
      {{0, 1, 0}, {0, 1, 0.1}},
  });
  const Vec3 mp = select_mp_heuristic(set, 2);
  EXPECT_NEAR(mp.x, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(mp.y, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(mp.z, 0.0, 1e-12);
}

TEST(SelectMpHeuristic, NoDeformationError) {
  const KeypointSet set = make_set({
      {{0, 0, 0}, {0, 0, 0}},
      {{1, 0, 0}, {1, 0, 0}},
  });
  EXPECT_THROW(select_mp_heuristic(set, 2), NoDeformationError);
  EXPECT_THROW(select_mp_heuristic(set, 0), SizeError);
  EXPECT_THROW(select_mp_heuristic(set, 3), SizeError);
}

TEST(SelectMpHeuristic, InvariantToUniformDisplacementScaling) {
  KeypointSet set = make_set({
      {{1, 0, 0}, {1, 0.2, 0}},
      {{0, 1, 0}, {0, 1, 0.1}},
      {{0, 0, 1}, {0.05, 0, 1}},
  });
  const Vec3 mp = select_mp_heuristic(set, 2);
  KeypointSet scaled = set;
  for (auto& p : scaled.pairs) p.displacement *= 7.5;
  const Vec3 mp2 = select_mp_heuristic(scaled, 2);
  EXPECT_NEAR((mp - mp2).norm(), 0.0, 1e-12);
}

TEST(SelectMpHeuristic, ReorderingOnlyMattersThroughTieBreak) {
  KeypointSet set = make_set({
      {{1, 0, 0}, {1, 0.3, 0}},
      {{0, 1, 0}, {0, 1, 0.2}},
      {{0, 0, 1}, {0.1, 0, 1}},
      {{2, 2, 0}, {2, 2, 0.05}},
  });
  const Vec3 mp = select_mp_heuristic(set, 2);
  KeypointSet reordered;
  reordered.pairs = {set.pairs[2], set.pairs[0], set.pairs[3], set.pairs[1]};
  const Vec3 mp2 = select_mp_heuristic(reordered, 2);
  EXPECT_NEAR((mp - mp2).norm(), 0.0, 1e-12);
}

TEST(SelectMpHeuristic, ResultInsideKeypointBoundingBox) {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    KeypointSet set;
    for (int k = 0; k < 20; ++k) {
      KeypointPair p;
      p.initial = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      p.goal = p.initial +
               Vec3{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
      p.displacement = (p.goal - p.initial).norm();
      set.pairs.push_back(p);
    }
    const Vec3 mp = select_mp_heuristic(set, 5);
    EXPECT_LE(mp.x, 1.0 + 1e-12);
    EXPECT_GE(mp.x, -1.0 - 1e-12);
    EXPECT_LE(mp.y, 1.0 + 1e-12);
    EXPECT_GE(mp.y, -1.0 - 1e-12);
  }
}

TEST(SelectMp, HeuristicRecoversGraspRegionOnBendingEpisodes) {
  // end-grasped bends: the heuristic lands near the true grasp center on
  // average (per-episode scatter is expected)
  GenConfig cfg;
  cfg.cloud_size = 1024;
  cfg.mp_min_x_fraction = 0.9;
  cfg.seed = 31;
  const double diagonal = cfg.box_dims.norm();
  double mean_error = 0.0;
  const std::size_t cases = 4;
  for (std::size_t c = 0; c < cases; ++c) {
    const Episode episode = make_episode(cfg, c, 0);
    MpContext ctx;
    const Vec3 mp = select_mp(MpMethod::Heuristic, episode.initial, episode.goal, ctx);
    mean_error += (mp - episode.mp).norm();
  }
  mean_error /= static_cast<double>(cases);
  EXPECT_LT(mean_error, 0.15 * diagonal);
}

TEST(SelectMp, RegressionWithoutModelThrows) {
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {4, 2, 1}, {1000.0, 0.3});
  const PointCloud cloud = surface_cloud(mesh, 128, 1);
  MpContext ctx;
  EXPECT_THROW(select_mp(MpMethod::Regression, cloud, cloud, ctx), ModelMissingError);
}

TEST(SelectMp, ProjectsOntoMeshSurface) {
  GenConfig cfg;
  cfg.cloud_size = 512;
  cfg.seed = 17;
  const Episode episode = make_episode(cfg, 1, 0);
  SpringMesh mesh = build_box(cfg.box_dims, cfg.resolution, cfg.material);
  clamp_face(mesh, {Axis::X, Side::Min});
  MpContext ctx;
  ctx.keypoints = 64;
  ctx.mesh = &mesh;
  const Vec3 mp = select_mp(MpMethod::Heuristic, episode.initial, episode.goal, ctx);
  EXPECT_NEAR((mp - project_to_surface(mesh, mp)).norm(), 0.0, 1e-12);
}

TEST(KeypointCsv, Format) {
  const KeypointSet set = make_set({{{1, 2, 3}, {4, 5, 6}}});
  std::stringstream ss;
  write_keypoints_csv(set, ss);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "k,xi,yi,zi,xg,yg,zg,delta");
  std::string row;
  std::getline(ss, row);
  EXPECT_EQ(row.substr(0, 8), "0,1,2,3,");
}
