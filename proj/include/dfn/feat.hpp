#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <vector>

#include "dfn/error.hpp"
#include "dfn/geom.hpp"
#include "dfn/nn.hpp"

namespace dfn {

// Dimension of the shape feature vector psi.
inline constexpr std::size_t kFeatureDim = 256;

struct EncoderLevelConfig {
  std::size_t centroids = 0;
  std::size_t neighbors = 0;               // group size k
  std::vector<std::size_t> mlp_widths;     // shared per-point MLP
};

// Hierarchical set-abstraction encoder: per level, FPS to centroids, group k
// nearest neighbors, run a shared MLP on (neighbor - centroid, features),
// max-pool per group. A final global max-pool and a plain dense output layer
// emit the feature vector.
struct EncoderConfig {
  std::vector<EncoderLevelConfig> levels = {
      {256, 16, {32, 64}},
      {64, 16, {64, 128}},
  };
  std::size_t feature_dim = kFeatureDim;
  // Center clouds at a reference centroid before encoding. The servo pair
  // (current, goal) is centered by the current cloud's centroid so the goal
  // offset stays visible.
  bool center = true;

  void validate() const {
    if (levels.empty()) throw ParamError("encoder needs at least one level");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto& lv = levels[l];
      if (lv.centroids < 1 || lv.neighbors < 1 || lv.mlp_widths.empty()) {
        throw ParamError("encoder level has empty configuration");
      }
      if (l > 0 && lv.centroids >= levels[l - 1].centroids) {
        throw ParamError("centroid counts must strictly decrease across levels");
      }
      if (lv.centroids * lv.neighbors < 2) {
        throw ParamError("level must produce at least 2 MLP rows for batchnorm");
      }
    }
    if (feature_dim < 1) throw ParamError("feature_dim must be >= 1");
  }

  std::size_t max_neighborhood() const {
    std::size_t k = 0;
    for (const auto& lv : levels) k = std::max(k, lv.neighbors);
    return k;
  }
};

// Weight-independent structure of one encoder pass: canonical order,
// centering offset, FPS selections and neighborhoods. Reusable across
// epochs for a fixed cloud.
struct EncoderPlan {
  Vec3 center_offset;
  std::vector<Vec3> base_points;  // canonically ordered, centered
  struct Level {
    std::vector<std::size_t> centroid_idx;   // into previous level's points
    std::vector<std::size_t> neighbor_idx;   // [centroids * k], same indexing
    std::vector<Vec3> points;                // centroid positions
  };
  std::vector<Level> levels;
};

struct LevelCache {
  std::vector<DenseCache> mlp;
  Tensor pooled;                       // [centroids x C_out]
  std::vector<std::size_t> argmax;     // [centroids * C_out] winning row ids
};

struct EncoderCache {
  std::vector<LevelCache> levels;
  Tensor global_pooled;                // [1 x C_last]
  std::vector<std::size_t> global_argmax;
  DenseCache output;
  bool valid = false;
};

struct EncoderGrads {
  std::vector<std::vector<DenseGrads>> levels;
  DenseGrads output;

  void accumulate(const EncoderGrads& o) {
    for (std::size_t l = 0; l < levels.size(); ++l)
      for (std::size_t m = 0; m < levels[l].size(); ++m)
        levels[l][m].accumulate(o.levels[l][m]);
    output.accumulate(o.output);
  }
};

// How training-mode forward handles batchnorm running statistics. Deferred
// mode leaves them untouched so parallel per-cloud passes stay race-free;
// the training loop applies the cached batch statistics in sample order.
enum class RunningStats { Update, Defer };

class Encoder {
 public:
  EncoderConfig config;
  std::vector<std::vector<DenseLayer>> level_mlps;
  DenseLayer output_layer;  // plain dense, no batchnorm/relu

  Encoder() = default;

  explicit Encoder(const EncoderConfig& cfg) : config(cfg) {
    config.validate();
    // level-0 carried features are the point coordinates themselves, so the
    // encoder sees absolute positions (centering removes them when enabled)
    std::size_t carried = 3;
    for (const auto& lv : config.levels) {
      std::vector<DenseLayer> mlp;
      std::size_t in = 3 + carried;
      for (std::size_t w : lv.mlp_widths) {
        // The shared point MLPs run ReLU without batchnorm. Per-cloud batch
        // statistics would normalize every cloud to the same per-feature
        // mean/scale, erasing exactly the cross-cloud feature differences the
        // servo head consumes, and would make training and single-cloud
        // inference compute different functions. The dense head keeps
        // standard batchnorm over its sample batch.
        mlp.push_back(DenseLayer::make(in, w, /*relu=*/true, /*bn=*/false));
        in = w;
      }
      level_mlps.push_back(std::move(mlp));
      carried = lv.mlp_widths.back();
    }
    output_layer = DenseLayer::make(carried, config.feature_dim,
                                    /*relu=*/false, /*bn=*/false);
  }

  void init(Rng& rng) {
    for (auto& mlp : level_mlps)
      for (auto& layer : mlp) layer.init(rng);
    output_layer.init(rng);
  }

  void collect_params(std::vector<Tensor*>& params) {
    for (auto& mlp : level_mlps) {
      for (auto& layer : mlp) {
        params.push_back(&layer.weights);
        params.push_back(&layer.bias);
        params.push_back(&layer.bn_scale);
        params.push_back(&layer.bn_shift);
      }
    }
    params.push_back(&output_layer.weights);
    params.push_back(&output_layer.bias);
  }

  static void collect_grads(const EncoderGrads& grads,
                            std::vector<const Tensor*>& out) {
    for (const auto& mlp : grads.levels) {
      for (const auto& g : mlp) {
        out.push_back(&g.d_weights);
        out.push_back(&g.d_bias);
        out.push_back(&g.d_bn_scale);
        out.push_back(&g.d_bn_shift);
      }
    }
    out.push_back(&grads.output.d_weights);
    out.push_back(&grads.output.d_bias);
  }

  EncoderGrads zero_grads() const {
    EncoderGrads g;
    for (const auto& mlp : level_mlps) {
      std::vector<DenseGrads> lg;
      for (const auto& layer : mlp) lg.push_back(DenseGrads::zeros_like(layer));
      g.levels.push_back(std::move(lg));
    }
    g.output = DenseGrads::zeros_like(output_layer);
    return g;
  }

  // Canonical ordering (lexicographic) makes FPS and knn independent of the
  // input point order, so permutation invariance is exact.
  EncoderPlan make_plan(const PointCloud& cloud,
                        std::optional<Vec3> center_override = std::nullopt) const {
    cloud.validate();
    if (cloud.size() < config.max_neighborhood()) {
      throw SizeError("cloud smaller than encoder neighborhood");
    }
    EncoderPlan plan;
    plan.center_offset = Vec3{};
    if (config.center) {
      plan.center_offset = center_override ? *center_override : centroid(cloud);
    }
    plan.base_points = cloud.points;
    std::sort(plan.base_points.begin(), plan.base_points.end(),
              [](const Vec3& a, const Vec3& b) {
                if (a.x != b.x) return a.x < b.x;
                if (a.y != b.y) return a.y < b.y;
                return a.z < b.z;
              });
    for (Vec3& p : plan.base_points) p -= plan.center_offset;

    const std::vector<Vec3>* prev = &plan.base_points;
    for (const auto& lv : config.levels) {
      EncoderPlan::Level level;
      const std::size_t n_cent = std::min(lv.centroids, prev->size());
      level.centroid_idx = fps(*prev, n_cent, 0);
      const std::size_t k = std::min(lv.neighbors, prev->size());
      level.neighbor_idx.reserve(n_cent * k);
      level.points.reserve(n_cent);
      for (std::size_t c : level.centroid_idx) {
        level.points.push_back((*prev)[c]);
        const auto nb = knn(*prev, (*prev)[c], k);
        level.neighbor_idx.insert(level.neighbor_idx.end(), nb.begin(), nb.end());
      }
      plan.levels.push_back(std::move(level));
      prev = &plan.levels.back().points;
    }
    return plan;
  }

  // Feature vector for a prepared plan. Training mode caches intermediates
  // for backward().
  std::vector<double> forward(const EncoderPlan& plan, bool training,
                              EncoderCache* cache = nullptr,
                              RunningStats stats = RunningStats::Update) {
    const std::vector<Vec3>* prev_pts = &plan.base_points;
    Tensor feats;  // [n_prev x C], empty at level 0
    if (cache) {
      cache->levels.assign(level_mlps.size(), LevelCache{});
      cache->valid = true;
    }

    for (std::size_t l = 0; l < level_mlps.size(); ++l) {
      const auto& level = plan.levels[l];
      const std::size_t n_cent = level.centroid_idx.size();
      const std::size_t k = level.neighbor_idx.size() / n_cent;
      const bool coord_feats = l == 0;
      const std::size_t c_in = coord_feats ? 3 : feats.cols();

      Tensor rows = Tensor::zeros(n_cent * k, 3 + c_in);
      for (std::size_t c = 0; c < n_cent; ++c) {
        const Vec3& center = level.points[c];
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t nb = level.neighbor_idx[c * k + j];
          const std::size_t r = c * k + j;
          const Vec3 p = (*prev_pts)[nb];
          const Vec3 rel = p - center;
          rows(r, 0) = rel.x;
          rows(r, 1) = rel.y;
          rows(r, 2) = rel.z;
          if (coord_feats) {
            rows(r, 3) = p.x;
            rows(r, 4) = p.y;
            rows(r, 5) = p.z;
          } else {
            for (std::size_t f = 0; f < c_in; ++f) rows(r, 3 + f) = feats(nb, f);
          }
        }
      }

      std::vector<DenseCache> mlp_caches(level_mlps[l].size());
      Tensor h = rows;
      for (std::size_t m = 0; m < level_mlps[l].size(); ++m) {
        h = forward_layer(level_mlps[l][m], h, training,
                          cache ? &mlp_caches[m] : nullptr, stats);
      }

      const std::size_t c_out = h.cols();
      Tensor pooled = Tensor::zeros(n_cent, c_out);
      std::vector<std::size_t> argmax(n_cent * c_out, 0);
      for (std::size_t c = 0; c < n_cent; ++c) {
        for (std::size_t f = 0; f < c_out; ++f) {
          double best = h(c * k, f);
          std::size_t best_r = c * k;
          for (std::size_t j = 1; j < k; ++j) {
            const double v = h(c * k + j, f);
            if (v > best) {
              best = v;
              best_r = c * k + j;
            }
          }
          pooled(c, f) = best;
          argmax[c * c_out + f] = best_r;
        }
      }

      if (cache) {
        cache->levels[l].mlp = std::move(mlp_caches);
        cache->levels[l].pooled = pooled;
        cache->levels[l].argmax = std::move(argmax);
      }
      feats = std::move(pooled);
      prev_pts = &level.points;
    }

    // global max-pool over the last level's centroids
    const std::size_t n_last = feats.rows(), c_last = feats.cols();
    Tensor global = Tensor::zeros(1, c_last);
    std::vector<std::size_t> g_argmax(c_last, 0);
    for (std::size_t f = 0; f < c_last; ++f) {
      double best = feats(0, f);
      std::size_t best_r = 0;
      for (std::size_t r = 1; r < n_last; ++r) {
        if (feats(r, f) > best) {
          best = feats(r, f);
          best_r = r;
        }
      }
      global(0, f) = best;
      g_argmax[f] = best_r;
    }

    Tensor psi = forward_layer(output_layer, global, training,
                               cache ? &cache->output : nullptr, stats);
    if (cache) {
      cache->global_pooled = std::move(global);
      cache->global_argmax = std::move(g_argmax);
    }
    return psi.data;
  }

  std::vector<double> encode(const PointCloud& cloud,
                             std::optional<Vec3> center_override = std::nullopt) {
    const EncoderPlan plan = make_plan(cloud, center_override);
    return forward(plan, /*training=*/false);
  }

  // Exact gradients of the feature output w.r.t. all encoder weights.
  // Max-pool routes to the winning row; FPS/knn selections are constants.
  EncoderGrads backward(const EncoderPlan& plan, const EncoderCache& cache,
                        const std::vector<double>& upstream) {
    if (!cache.valid) throw StateError("encoder backward without cached forward");
    if (upstream.size() != config.feature_dim) {
      throw ShapeError("encoder upstream gradient has wrong length");
    }
    EncoderGrads grads = zero_grads();

    Tensor d_psi = Tensor::zeros(1, config.feature_dim);
    for (std::size_t i = 0; i < upstream.size(); ++i) d_psi(0, i) = upstream[i];
    DenseGrads d_out = dense_backward(output_layer, cache.output, d_psi);
    grads.output = d_out;

    // through the global max-pool
    const std::size_t c_last = cache.global_pooled.cols();
    const std::size_t n_last = plan.levels.back().centroid_idx.size();
    Tensor d_pooled = Tensor::zeros(n_last, c_last);
    for (std::size_t f = 0; f < c_last; ++f) {
      d_pooled(cache.global_argmax[f], f) += d_out.d_input(0, f);
    }

    for (std::size_t l = level_mlps.size(); l-- > 0;) {
      const auto& level = plan.levels[l];
      const LevelCache& lc = cache.levels[l];
      const std::size_t n_cent = level.centroid_idx.size();
      const std::size_t k = level.neighbor_idx.size() / n_cent;
      const std::size_t c_out = lc.pooled.cols();

      Tensor d_rows = Tensor::zeros(n_cent * k, c_out);
      for (std::size_t c = 0; c < n_cent; ++c) {
        for (std::size_t f = 0; f < c_out; ++f) {
          d_rows(lc.argmax[c * c_out + f], f) += d_pooled(c, f);
        }
      }

      Tensor d_h = std::move(d_rows);
      for (std::size_t m = level_mlps[l].size(); m-- > 0;) {
        DenseGrads g = dense_backward(level_mlps[l][m], lc.mlp[m], d_h);
        d_h = std::move(g.d_input);
        g.d_input = Tensor();
        grads.levels[l][m] = std::move(g);
      }

      if (l == 0) break;
      // scatter the feature part (columns 3..) back to the previous level
      const std::size_t c_in = d_h.cols() - 3;
      const std::size_t n_prev = plan.levels[l - 1].centroid_idx.size();
      d_pooled = Tensor::zeros(n_prev, c_in);
      for (std::size_t c = 0; c < n_cent; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t nb = level.neighbor_idx[c * k + j];
          for (std::size_t f = 0; f < c_in; ++f) {
            d_pooled(nb, f) += d_h(c * k + j, 3 + f);
          }
        }
      }
    }
    return grads;
  }

  // Applies the batch statistics captured in a deferred-mode cache to the
  // running means/variances, in layer order.
  void apply_running_stats(const EncoderCache& cache) {
    for (std::size_t l = 0; l < level_mlps.size(); ++l) {
      for (std::size_t m = 0; m < level_mlps[l].size(); ++m) {
        DenseLayer& layer = level_mlps[l][m];
        const DenseCache& dc = cache.levels[l].mlp[m];
        if (!layer.with_batchnorm || !dc.valid) continue;
        for (std::size_t c = 0; c < layer.out_dim(); ++c) {
          layer.running_mean[c] = (1.0 - layer.bn_momentum) * layer.running_mean[c] +
                                  layer.bn_momentum * dc.batch_mean[c];
          layer.running_var[c] = (1.0 - layer.bn_momentum) * layer.running_var[c] +
                                 layer.bn_momentum * dc.batch_var[c];
        }
      }
    }
  }

 private:
  static Tensor forward_layer(DenseLayer& layer, const Tensor& input, bool training,
                              DenseCache* cache, RunningStats stats) {
    return dense_forward(layer, input, training, cache,
                         /*update_running=*/stats == RunningStats::Update);
  }
};

// Fixed 256-d rotation/translation-invariant descriptor: a 128-bin pairwise
// distance histogram over an FPS subset, the 3 covariance eigenvalue shares,
// and a 125-bin radial distance histogram. Each block is normalized to unit
// sum. No trainable parameters.
inline std::vector<double> fixed_descriptor(const PointCloud& cloud) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (n < 8) throw SizeError("fixed_descriptor needs at least 8 points");

  const Vec3 c = centroid(cloud);
  std::vector<double> radial(n);
  double r_max = 0.0;
  std::size_t far_idx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    radial[i] = (cloud.points[i] - c).norm();
    if (radial[i] > r_max) {
      r_max = radial[i];
      far_idx = i;
    }
  }
  if (!(r_max > 1e-12)) {
    throw DegenerateGeometryError("all points coincide; descriptor undefined");
  }

  constexpr std::size_t kPairBins = 128;
  constexpr std::size_t kEigenSlots = 3;
  constexpr std::size_t kRadialBins = kFeatureDim - kPairBins - kEigenSlots;
  std::vector<double> desc(kFeatureDim, 0.0);

  // soft (linear) binning keeps the descriptor stable under the tiny
  // distance perturbations a rigid rotation introduces
  auto soft_bin = [](std::vector<double>& block, std::size_t offset,
                     std::size_t bins, double value01, double weight) {
    const double t = std::clamp(value01, 0.0, 1.0) * static_cast<double>(bins - 1);
    const std::size_t lo = std::min(static_cast<std::size_t>(t), bins - 2);
    const double w = t - static_cast<double>(lo);
    block[offset + lo] += weight * (1.0 - w);
    block[offset + lo + 1] += weight * w;
  };

  // block 1: pairwise distances over an FPS subset seeded at the point
  // farthest from the centroid (a rotation-invariant anchor)
  const std::size_t subset_size = std::min<std::size_t>(64, n);
  const std::vector<std::size_t> subset = fps(cloud.points, subset_size, far_idx);
  double d_max = 0.0;
  std::vector<double> pair_d;
  pair_d.reserve(subset_size * (subset_size - 1) / 2);
  for (std::size_t a = 0; a < subset_size; ++a) {
    for (std::size_t b = a + 1; b < subset_size; ++b) {
      const double d =
          (cloud.points[subset[a]] - cloud.points[subset[b]]).norm();
      pair_d.push_back(d);
      d_max = std::max(d_max, d);
    }
  }
  const double pair_w = 1.0 / static_cast<double>(pair_d.size());
  for (double d : pair_d) soft_bin(desc, 0, kPairBins, d / d_max, pair_w);

  // block 2: covariance eigenvalue shares
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = cloud.points[i] - c;
    Eigen::Vector3d v(d.x, d.y, d.z);
    cov += v * v.transpose();
  }
  cov /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d ev = eig.eigenvalues();  // ascending
  const double ev_sum = ev.sum();
  desc[kPairBins + 0] = ev[2] / ev_sum;
  desc[kPairBins + 1] = ev[1] / ev_sum;
  desc[kPairBins + 2] = ev[0] / ev_sum;

  // block 3: radial distances from the centroid
  const double radial_w = 1.0 / static_cast<double>(n);
  for (double r : radial) {
    soft_bin(desc, kPairBins + kEigenSlots, kRadialBins, r / r_max, radial_w);
  }
  return desc;
}

}  // namespace dfn
