#include "dfn/feat.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "dfn/softsim.hpp"
#include "test_util.hpp"

using namespace dfn;

namespace {

EncoderConfig mini_config() {
  EncoderConfig cfg;
  cfg.levels = {{16, 8, {8, 16}}, {8, 4, {16, 24}}};
  cfg.feature_dim = 32;
  return cfg;
}

PointCloud rotated(const PointCloud& cloud, const Vec3& axis_raw, double angle) {
  const Vec3 axis = axis_raw / axis_raw.norm();
  const double c = std::cos(angle), s = std::sin(angle);
  PointCloud out = cloud;
  for (Vec3& p : out.points) {
    // Rodrigues rotation
    p = p * c + axis.cross(p) * s + axis * (axis.dot(p) * (1.0 - c));
  }
  return out;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(Encode, OutputLength256WithDefaultConfig) {
  Rng rng(3);
  Encoder encoder{EncoderConfig{}};
  encoder.init(rng);
  const PointCloud cloud = test::random_cloud(rng, 400, 0.1);
  EXPECT_EQ(encoder.encode(cloud).size(), kFeatureDim);
}

TEST(Encode, PermutationInvariant) {
  Rng rng(5);
  Encoder encoder{mini_config()};
  encoder.init(rng);
  PointCloud cloud = test::random_cloud(rng, 64, 0.1);
  const auto psi = encoder.encode(cloud);

  PointCloud shuffled = cloud;
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled.points[i - 1], shuffled.points[rng.index(i)]);
  }
  const auto psi2 = encoder.encode(shuffled);
  ASSERT_EQ(psi.size(), psi2.size());
  for (std::size_t i = 0; i < psi.size(); ++i) {
    EXPECT_NEAR(psi[i], psi2[i], 1e-9);
  }
}

TEST(Encode, CenteringFlagControlsTranslationBehavior) {
  Rng rng(7);
  const Vec3 shift{0.05, 0.0, 0.0};

  EncoderConfig cfg = mini_config();
  cfg.center = false;
  Encoder raw{cfg};
  raw.init(rng);
  PointCloud cloud = test::random_cloud(rng, 64, 0.1);
  const auto a = raw.encode(cloud);
  const auto b = raw.encode(translated(cloud, shift));
  EXPECT_GT(l2(a, b), 1e-6);  // raw coordinates see the translation

  cfg.center = true;
  Encoder centered{cfg};
  centered.level_mlps = raw.level_mlps;
  centered.output_layer = raw.output_layer;
  const auto c = centered.encode(cloud);
  const auto d = centered.encode(translated(cloud, shift));
  ASSERT_EQ(c.size(), d.size());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], d[i], 1e-9);
}

TEST(Encode, RejectsTooSmallCloud) {
  Rng rng(11);
  Encoder encoder{mini_config()};
  encoder.init(rng);
  const PointCloud tiny = test::random_cloud(rng, 4, 0.1);
  EXPECT_THROW(encoder.encode(tiny), SizeError);
}

TEST(EncodeBackward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(13);
  Encoder encoder{mini_config()};
  encoder.init(rng);
  const PointCloud cloud = test::random_cloud(rng, 32, 0.1);
  const EncoderPlan plan = encoder.make_plan(cloud);
  EncoderCache cache;
  encoder.forward(plan, true, &cache, RunningStats::Defer);
  const EncoderGrads grads =
      encoder.backward(plan, cache, std::vector<double>(32, 0.0));
  for (const auto& mlp : grads.levels) {
    for (const auto& g : mlp) {
      for (double v : g.d_weights.data) EXPECT_EQ(v, 0.0);
      for (double v : g.d_bias.data) EXPECT_EQ(v, 0.0);
    }
  }
  for (double v : grads.output.d_weights.data) EXPECT_EQ(v, 0.0);
}

TEST(EncodeBackward, StaleCacheRejected) {
  Rng rng(17);
  Encoder encoder{mini_config()};
  encoder.init(rng);
  const PointCloud cloud = test::random_cloud(rng, 32, 0.1);
  const EncoderPlan plan = encoder.make_plan(cloud);
  EncoderCache cache;
  EXPECT_THROW(encoder.backward(plan, cache, std::vector<double>(32, 0.0)),
               StateError);
}

TEST(EncodeBackward, FiniteDifferenceAgreement) {
  // 2-level encoder over a 32-point cloud, all weights checked
  Rng rng(19);
  Encoder encoder{mini_config()};
  encoder.init(rng);
  const PointCloud cloud = test::random_cloud(rng, 32, 0.1);
  const EncoderPlan plan = encoder.make_plan(cloud);

  std::vector<double> upstream(32);
  for (double& u : upstream) u = rng.uniform(-1.0, 1.0);

  EncoderCache cache;
  encoder.forward(plan, true, &cache, RunningStats::Defer);
  const EncoderGrads grads = encoder.backward(plan, cache, upstream);

  auto loss = [&]() {
    const auto psi = encoder.forward(plan, true, nullptr, RunningStats::Defer);
    double s = 0.0;
    for (std::size_t i = 0; i < psi.size(); ++i) s += upstream[i] * psi[i];
    return s;
  };

  std::vector<Tensor*> params;
  encoder.collect_params(params);
  std::vector<const Tensor*> analytic;
  Encoder::collect_grads(grads, analytic);
  ASSERT_EQ(params.size(), analytic.size());

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double save = p[i];
      p[i] = save + h;
      const double up = loss();
      p[i] = save - h;
      const double down = loss();
      p[i] = save;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, test::relative_error((*analytic[t])[i], numeric));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(MaxPool, NonWinningNeighborDoesNotAffectOutput) {
  Rng rng(23);
  EncoderConfig cfg;
  cfg.levels = {{2, 4, {6}}};
  cfg.feature_dim = 8;
  cfg.center = false;
  Encoder encoder{cfg};
  encoder.init(rng);

  // two tight, well-separated clusters of four points
  PointCloud cloud;
  for (int i = 0; i < 4; ++i) {
    cloud.points.push_back({0.01 * i, 0.002 * i * i, 0.0});
    cloud.points.push_back({1.0 + 0.01 * i, -0.002 * i, 0.005 * i});
  }
  EncoderPlan plan = encoder.make_plan(cloud);
  EncoderCache cache;
  const auto psi = encoder.forward(plan, false, &cache);

  // find a base point that is no group's centroid and wins no channel
  const auto& level = plan.levels[0];
  const std::size_t k = 4;
  std::vector<bool> wins(plan.base_points.size(), false);
  for (std::size_t c = 0; c < level.centroid_idx.size(); ++c) {
    for (std::size_t f = 0; f < 6; ++f) {
      const std::size_t row = cache.levels[0].argmax[c * 6 + f];
      wins[level.neighbor_idx[row]] = true;
    }
  }
  for (std::size_t c : level.centroid_idx) wins[c] = true;
  std::size_t loser = plan.base_points.size();
  for (std::size_t i = 0; i < plan.base_points.size(); ++i) {
    if (!wins[i]) loser = i;
  }
  ASSERT_LT(loser, plan.base_points.size()) << "seed produced no non-winning point";

  plan.base_points[loser] += Vec3{1e-7, -1e-7, 1e-7};
  const auto psi2 = encoder.forward(plan, false);
  for (std::size_t i = 0; i < psi.size(); ++i) EXPECT_EQ(psi[i], psi2[i]);
}

TEST(FixedDescriptor, RotationInvariant) {
  Rng rng(29);
  const PointCloud cloud = test::random_cloud(rng, 200, 0.1);
  const auto a = fixed_descriptor(cloud);
  const auto b = fixed_descriptor(rotated(cloud, {1.0, 2.0, -0.5}, 1.234));
  ASSERT_EQ(a.size(), kFeatureDim);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(FixedDescriptor, TranslationInvariant) {
  Rng rng(31);
  const PointCloud cloud = test::random_cloud(rng, 200, 0.1);
  const auto a = fixed_descriptor(cloud);
  const auto b = fixed_descriptor(translated(cloud, {3.0, -1.0, 0.5}));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(FixedDescriptor, BlocksAreUnitSumAndNonNegative) {
  Rng rng(37);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud cloud = test::random_cloud(rng, 8 + rng.index(300), 0.2);
    const auto d = fixed_descriptor(cloud);
    double pair_sum = 0.0, eig_sum = 0.0, radial_sum = 0.0;
    for (std::size_t i = 0; i < 128; ++i) pair_sum += d[i];
    for (std::size_t i = 128; i < 131; ++i) eig_sum += d[i];
    for (std::size_t i = 131; i < 256; ++i) radial_sum += d[i];
    for (double v : d) EXPECT_GE(v, 0.0);
    EXPECT_NEAR(pair_sum, 1.0, 1e-9);
    EXPECT_NEAR(eig_sum, 1.0, 1e-9);
    EXPECT_NEAR(radial_sum, 1.0, 1e-9);
  }
}

TEST(FixedDescriptor, DegenerateCloudThrows) {
  PointCloud cloud;
  for (int i = 0; i < 10; ++i) cloud.points.push_back({1.0, 2.0, 3.0});
  EXPECT_THROW(fixed_descriptor(cloud), DegenerateGeometryError);
  PointCloud tiny;
  tiny.points = {{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(fixed_descriptor(tiny), SizeError);
}

TEST(FixedDescriptor, SeparatesVisiblyDifferentDeformations) {
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {8, 4, 2}, {1000.0, 0.3});
  clamp_face(mesh, {Axis::X, Side::Min});
  GraspHandle handle = grasp(mesh, {0.2, 0.05, 0.025}, 0.03);
  mesh.max_step = 0.06;

  move_grasp(mesh, handle, {0.0, 0.04, 0.0});
  solve_equilibrium(mesh);
  const auto bent_y = fixed_descriptor(surface_cloud(mesh, 512, 1));

  mesh.reset();
  move_grasp(mesh, handle, {0.0, 0.0, 0.04});
  solve_equilibrium(mesh);
  const auto bent_z = fixed_descriptor(surface_cloud(mesh, 512, 1));

  EXPECT_GT(l2(bent_y, bent_z), 1e-4);
}

TEST(FeatureSpace, InterShapeDistanceExceedsIntraShape) {
  // resampling the same state must land closer in feature space than
  // distinct deformations, for both extractors
  SpringMesh mesh = build_box({0.2, 0.1, 0.05}, {8, 4, 2}, {1000.0, 0.3});
  clamp_face(mesh, {Axis::X, Side::Min});
  GraspHandle handle = grasp(mesh, {0.2, 0.05, 0.025}, 0.03);
  mesh.max_step = 0.06;

  const std::vector<Vec3> offsets = {
      {0.0, 0.04, 0.0}, {0.0, -0.04, 0.0}, {0.0, 0.0, 0.04}, {0.03, 0.02, 0.0}};
  std::vector<PointCloud> sample_a, sample_b;
  for (const Vec3& offset : offsets) {
    mesh.reset();
    move_grasp(mesh, handle, offset);
    solve_equilibrium(mesh);
    sample_a.push_back(surface_cloud(mesh, 512, 100));
    sample_b.push_back(surface_cloud(mesh, 512, 200));
  }

  Rng rng(41);
  Encoder encoder{EncoderConfig{}};
  encoder.init(rng);

  auto check = [&](auto&& embed) {
    double intra = 0.0;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      intra += l2(embed(sample_a[i]), embed(sample_b[i]));
    }
    intra /= static_cast<double>(offsets.size());
    double inter = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      for (std::size_t j = i + 1; j < offsets.size(); ++j) {
        inter += l2(embed(sample_a[i]), embed(sample_a[j]));
        ++pairs;
      }
    }
    inter /= static_cast<double>(pairs);
    EXPECT_GT(inter, intra);
  };

  check([&](const PointCloud& c) { return encoder.encode(c); });
  check([&](const PointCloud& c) { return fixed_descriptor(c); });
}
