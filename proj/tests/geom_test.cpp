#include "dfn/geom.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace dfn;

TEST(Fps, FarthestFromSeed) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {10, 0, 0}};
  EXPECT_EQ(fps(c, 2, 0), (std::vector<std::size_t>{0, 2}));
}

TEST(Fps, FullSelectionReturnsAllIndices) {
  Rng rng(7);
  PointCloud c = test::random_cloud(rng, 9);
  auto sel = fps(c, c.size(), 0);
  EXPECT_EQ(sel.size(), c.size());
  std::sort(sel.begin(), sel.end());
  for (std::size_t i = 0; i < sel.size(); ++i) EXPECT_EQ(sel[i], i);
}

TEST(Fps, TieBreaksByLowestIndex) {
  // after picking (5,5,0), points 1 and 2 are both at distance 1 from the set
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 5, 0}};
  EXPECT_EQ(fps(c, 3, 0), (std::vector<std::size_t>{0, 3, 1}));
}

TEST(Fps, MatchesIndependentGreedyOracle) {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c = test::random_cloud(rng, 3 + rng.index(20));
    const std::size_t k = 1 + rng.index(c.size());
    EXPECT_EQ(fps(c, k, 0), test::fps_oracle(c.points, k, 0));
  }
}

TEST(Fps, DispersionWithinHalfOfOptimum) {
  Rng rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 4 + rng.index(7);  // <= 10
    PointCloud c = test::random_cloud(rng, n);
    for (std::size_t k = 2; k <= n; ++k) {
      const auto sel = fps(c, k, 0);
      const double got = test::min_pairwise_distance(c.points, sel);
      const double best = test::best_dispersion(c.points, k);
      EXPECT_GE(got, 0.5 * best - 1e-12)
          << "n=" << n << " k=" << k << " got=" << got << " best=" << best;
    }
  }
}

TEST(Fps, RejectsBadArguments) {
  PointCloud c;
  c.points = {{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(fps(c, 0, 0), SizeError);
  EXPECT_THROW(fps(c, 3, 0), SizeError);
  EXPECT_THROW(fps(c, 1, 5), SizeError);
}

TEST(Knn, ExactPointMatch) {
  PointCloud c;
  c.points = {{0, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(knn(c, {2, 0, 0}, 1), (std::vector<std::size_t>{1}));
}

TEST(Knn, SortsByDistanceThenIndex) {
  PointCloud c;
  c.points = {{0, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  EXPECT_EQ(knn(c, {2.4, 0, 0}, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(knn(c, {2.4, 0, 0}, 3), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Knn, MatchesExhaustiveSortOnRandomClouds) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    PointCloud c = test::random_cloud(rng, 2 + rng.index(99));
    const Vec3 q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const std::size_t k = 1 + rng.index(c.size());
    EXPECT_EQ(knn(c, q, k), test::knn_oracle(c, q, k));
  }
}

TEST(Knn, RejectsBadK) {
  PointCloud c;
  c.points = {{0, 0, 0}};
  EXPECT_THROW(knn(c, {0, 0, 0}, 0), SizeError);
  EXPECT_THROW(knn(c, {0, 0, 0}, 2), SizeError);
}

TEST(Chamfer, IdentityIsZero) {
  Rng rng(5);
  PointCloud c = test::random_cloud(rng, 17);
  EXPECT_EQ(chamfer(c, c), 0.0);
}

TEST(Chamfer, SinglePointPair) {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  b.points = {{1, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer(a, b), 2.0);
}

TEST(Chamfer, AsymmetricSizes) {
  PointCloud a, b;
  a.points = {{0, 0, 0}, {2, 0, 0}};
  b.points = {{1, 0, 0}};
  EXPECT_DOUBLE_EQ(chamfer(a, b), 2.0);
}

TEST(Chamfer, MatchesBruteForceExactly) {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    PointCloud a = test::random_cloud(rng, 1 + rng.index(64));
    PointCloud b = test::random_cloud(rng, 1 + rng.index(64));
    EXPECT_EQ(chamfer(a, b), test::chamfer_oracle(a, b));
  }
}

TEST(Chamfer, SymmetricBitExact) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud a = test::random_cloud(rng, 1 + rng.index(40));
    PointCloud b = test::random_cloud(rng, 1 + rng.index(40));
    EXPECT_EQ(chamfer(a, b), chamfer(b, a));
  }
}

TEST(Chamfer, TranslationInvariant) {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud a = test::random_cloud(rng, 1 + rng.index(40));
    PointCloud b = test::random_cloud(rng, 1 + rng.index(40));
    const Vec3 t{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    EXPECT_NEAR(chamfer(translated(a, t), translated(b, t)), chamfer(a, b), 1e-9);
  }
}

TEST(Chamfer, RejectsEmptyCloud) {
  PointCloud a, b;
  a.points = {{0, 0, 0}};
  EXPECT_THROW(chamfer(a, b), SizeError);
}

TEST(Xyz, RoundTrip) {
  Rng rng(31);
  PointCloud c = test::random_cloud(rng, 25);
  std::stringstream ss;
  write_xyz(c, ss);
  PointCloud back = read_xyz(ss);
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back.points[i].x, c.points[i].x);
    EXPECT_EQ(back.points[i].y, c.points[i].y);
    EXPECT_EQ(back.points[i].z, c.points[i].z);
  }
}

TEST(Xyz, BadLineReports) {
  std::stringstream ss("0 0 0\nnot a point\n");
  EXPECT_THROW(read_xyz(ss), FormatError);
}

TEST(Cloud, ValidateCatchesBadInput) {
  PointCloud c;
  EXPECT_THROW(c.validate(), SizeError);
  c.points = {{0, 0, 0}};
  c.source_ids = {1, 2};
  EXPECT_THROW(c.validate(), SizeError);
}
