#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dfn/binio.hpp"
#include "dfn/error.hpp"
#include "dfn/feat.hpp"
#include "dfn/geom.hpp"
#include "dfn/nn.hpp"
#include "dfn/rng.hpp"

namespace dfn {

enum class ModelVariant : std::uint32_t {
  Deformer = 0,      // delta_p = head(psi_goal - psi_current)
  MpRegression = 1,  // x_m = head(psi_goal - psi_initial), de-centered
  Baseline = 2,      // head on fixed-descriptor differences
};

struct TrainingSample {
  PointCloud cloud_current;
  PointCloud cloud_goal;
  Vec3 delta_p;  // applied gripper displacement, m
  Vec3 mp;       // ground-truth manipulation point, m
};

// Shared-weight encoder on both clouds, feature difference, dense head
// (128, 64, 32 with batchnorm+relu) to a 3-vector output layer.
struct DeformerNet {
  ModelVariant variant = ModelVariant::Deformer;
  Encoder encoder;                // unused for Baseline
  std::vector<DenseLayer> head;

  bool uses_encoder() const { return variant != ModelVariant::Baseline; }

  std::size_t feature_dim() const {
    return uses_encoder() ? encoder.config.feature_dim : kFeatureDim;
  }

  static DeformerNet make(ModelVariant variant, std::uint64_t seed,
                          const EncoderConfig& enc_cfg = EncoderConfig{},
                          const std::vector<std::size_t>& head_widths = {128, 64, 32}) {
    DeformerNet net;
    net.variant = variant;
    Rng rng(derive_seed(seed, {0x11}));
    if (net.uses_encoder()) {
      net.encoder = Encoder(enc_cfg);
      net.encoder.init(rng);
    }
    std::size_t in = variant == ModelVariant::Baseline ? kFeatureDim
                                                       : enc_cfg.feature_dim;
    for (std::size_t w : head_widths) {
      net.head.push_back(DenseLayer::make(in, w, /*relu=*/true, /*bn=*/true));
      in = w;
    }
    net.head.push_back(DenseLayer::make(in, 3, /*relu=*/false, /*bn=*/false));
    for (auto& layer : net.head) layer.init(rng);
    return net;
  }

  void collect_params(std::vector<Tensor*>& params) {
    if (uses_encoder()) encoder.collect_params(params);
    for (auto& layer : head) {
      params.push_back(&layer.weights);
      params.push_back(&layer.bias);
      if (layer.with_batchnorm) {
        params.push_back(&layer.bn_scale);
        params.push_back(&layer.bn_shift);
      }
    }
  }

  // Feature difference for one pair in inference mode. The reference cloud's
  // centroid centers both clouds when centering is enabled.
  Tensor feature_difference(const PointCloud& reference, const PointCloud& goal) {
    Tensor row = Tensor::zeros(1, feature_dim());
    if (uses_encoder()) {
      const Vec3 offset = encoder.config.center ? centroid(reference) : Vec3{};
      const std::vector<double> psi_ref = encoder.encode(reference, offset);
      const std::vector<double> psi_goal = encoder.encode(goal, offset);
      for (std::size_t i = 0; i < psi_ref.size(); ++i) {
        row(0, i) = psi_goal[i] - psi_ref[i];
      }
    } else {
      const std::vector<double> a = fixed_descriptor(reference);
      const std::vector<double> b = fixed_descriptor(goal);
      for (std::size_t i = 0; i < a.size(); ++i) row(0, i) = b[i] - a[i];
    }
    return row;
  }

  Vec3 head_inference(const Tensor& row) {
    Tensor h = row;
    for (auto& layer : head) h = dense_forward(layer, h, /*training=*/false);
    return {h(0, 0), h(0, 1), h(0, 2)};
  }

  // Commanded gripper displacement toward the goal shape, meters.
  Vec3 forward(const PointCloud& current, const PointCloud& goal) {
    if (variant == ModelVariant::MpRegression) {
      throw StateError("forward() called on an MP-regression model");
    }
    return head_inference(feature_difference(current, goal));
  }

  // Absolute manipulation-point position in the observation frame.
  Vec3 forward_mp(const PointCloud& initial, const PointCloud& goal) {
    if (variant != ModelVariant::MpRegression) {
      throw StateError("forward_mp() requires an MP-regression model");
    }
    const Vec3 offset = encoder.config.center ? centroid(initial) : Vec3{};
    const Vec3 out = head_inference(feature_difference(initial, goal));
    return out + offset;  // the centering offset is added back
  }
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  LrSchedule schedule;
  std::uint64_t seed = 0;
  ModelVariant variant = ModelVariant::Deformer;
  double test_fraction = 0.1;  // fraction of episodes held out
  EncoderConfig encoder;       // reduced configs for small experiments
  std::vector<std::size_t> head_widths = {128, 64, 32};

  void validate() const {
    if (epochs < 1) throw ParamError("epochs must be >= 1");
    if (batch_size < 1) throw ParamError("batch_size must be >= 1");
    schedule.validate();
  }
};

struct EpochStats {
  std::size_t epoch = 0;  // completed epochs; 0 = untrained anchor
  double lr = 0.0;
  double train_mse_mm2 = 0.0;
  double test_mse_mm2 = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  DeformerNet model;
  std::vector<EpochStats> curve;
};

// Weight-independent per-sample state reused across epochs: encoder plans
// (canonical order, FPS, knn) or fixed descriptors, plus the regression
// target in the centered frame.
struct PreparedSample {
  EncoderPlan plan_ref;   // current (Deformer) / initial (MpRegression)
  EncoderPlan plan_goal;
  std::vector<double> desc_ref, desc_goal;  // Baseline
  Vec3 target;
};

inline PreparedSample prepare_sample(DeformerNet& model, const TrainingSample& s) {
  PreparedSample p;
  switch (model.variant) {
    case ModelVariant::Deformer: {
      const Vec3 offset = model.encoder.config.center ? centroid(s.cloud_current) : Vec3{};
      p.plan_ref = model.encoder.make_plan(s.cloud_current, offset);
      p.plan_goal = model.encoder.make_plan(s.cloud_goal, offset);
      p.target = s.delta_p;
      break;
    }
    case ModelVariant::MpRegression: {
      const Vec3 offset = model.encoder.config.center ? centroid(s.cloud_current) : Vec3{};
      p.plan_ref = model.encoder.make_plan(s.cloud_current, offset);
      p.plan_goal = model.encoder.make_plan(s.cloud_goal, offset);
      p.target = s.mp - offset;  // learn in the centered frame
      break;
    }
    case ModelVariant::Baseline: {
      p.desc_ref = fixed_descriptor(s.cloud_current);
      p.desc_goal = fixed_descriptor(s.cloud_goal);
      p.target = s.delta_p;
      break;
    }
  }
  return p;
}

struct ParamGrads {
  EncoderGrads encoder;
  std::vector<DenseGrads> head;
};

// Stripped batchnorm statistics of one forward pass, applied to the running
// stats after the (possibly parallel) pass completes.
namespace detail {

inline void strip_cache(DenseCache& c) {
  c.input = Tensor();
  c.pre_bn = Tensor();
  c.normalized = Tensor();
}

inline void strip_cache(EncoderCache& c) {
  for (auto& level : c.levels)
    for (auto& dc : level.mlp) strip_cache(dc);
  strip_cache(c.output);
}

inline void apply_layer_stats(DenseLayer& layer, const DenseCache& cache) {
  if (!layer.with_batchnorm || cache.batch_mean.size() == 0) return;
  for (std::size_t c = 0; c < layer.out_dim(); ++c) {
    layer.running_mean[c] = (1.0 - layer.bn_momentum) * layer.running_mean[c] +
                            layer.bn_momentum * cache.batch_mean[c];
    layer.running_var[c] = (1.0 - layer.bn_momentum) * layer.running_var[c] +
                           layer.bn_momentum * cache.batch_var[c];
  }
}

inline Tensor targets_of(const std::vector<const PreparedSample*>& batch) {
  Tensor t = Tensor::zeros(batch.size(), 3);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    t(i, 0) = batch[i]->target.x;
    t(i, 1) = batch[i]->target.y;
    t(i, 2) = batch[i]->target.z;
  }
  return t;
}

}  // namespace detail

struct BatchResult {
  double loss_m2 = 0.0;  // mse in m^2
  Tensor predictions;    // [batch x 3]
  ParamGrads grads;
  // stripped caches holding batch statistics, in deterministic order
  std::vector<EncoderCache> encoder_stats;  // ref, goal per sample
  std::vector<DenseCache> head_stats;
};

// Training-mode batch loss with no side effects (running stats untouched).
// Used by the finite-difference oracle and internally by batch_gradients.
inline double batch_loss(DeformerNet& model,
                         const std::vector<const PreparedSample*>& batch) {
  const std::size_t n = batch.size();
  Tensor rows = Tensor::zeros(n, model.feature_dim());
  if (model.uses_encoder()) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      const auto s = static_cast<std::size_t>(i);
      const auto psi_ref = model.encoder.forward(batch[s]->plan_ref, true, nullptr,
                                                 RunningStats::Defer);
      const auto psi_goal = model.encoder.forward(batch[s]->plan_goal, true, nullptr,
                                                  RunningStats::Defer);
      for (std::size_t f = 0; f < psi_ref.size(); ++f) {
        rows(s, f) = psi_goal[f] - psi_ref[f];
      }
    }
  } else {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t f = 0; f < kFeatureDim; ++f) {
        rows(s, f) = batch[s]->desc_goal[f] - batch[s]->desc_ref[f];
      }
    }
  }
  Tensor h = rows;
  for (auto& layer : model.head) {
    h = dense_forward(layer, h, /*training=*/true, nullptr, /*update_running=*/false);
  }
  return mse(h, detail::targets_of(batch));
}

// One training step's loss and exact gradients. Per-sample encoder work runs
// in parallel; gradients are reduced in sample order so the result is
// independent of the thread count. No running-stat mutation (the caller
// applies the returned batch statistics).
inline BatchResult batch_gradients(DeformerNet& model,
                                   const std::vector<const PreparedSample*>& batch) {
  const std::size_t n = batch.size();
  BatchResult result;

  Tensor rows = Tensor::zeros(n, model.feature_dim());
  std::vector<EncoderCache> caches;
  if (model.uses_encoder()) {
    caches.assign(2 * n, EncoderCache{});
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      const auto s = static_cast<std::size_t>(i);
      const auto psi_ref = model.encoder.forward(batch[s]->plan_ref, true,
                                                 &caches[2 * s], RunningStats::Defer);
      const auto psi_goal = model.encoder.forward(
          batch[s]->plan_goal, true, &caches[2 * s + 1], RunningStats::Defer);
      for (std::size_t f = 0; f < psi_ref.size(); ++f) {
        rows(s, f) = psi_goal[f] - psi_ref[f];
      }
    }
  } else {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t f = 0; f < kFeatureDim; ++f) {
        rows(s, f) = batch[s]->desc_goal[f] - batch[s]->desc_ref[f];
      }
    }
  }

  // head forward/backward over the whole batch
  std::vector<DenseCache> head_caches(model.head.size());
  Tensor h = rows;
  for (std::size_t m = 0; m < model.head.size(); ++m) {
    h = dense_forward(model.head[m], h, /*training=*/true, &head_caches[m],
                      /*update_running=*/false);
  }
  const Tensor targets = detail::targets_of(batch);
  result.loss_m2 = mse(h, targets);
  result.predictions = h;

  Tensor d = mse_gradient(h, targets);
  result.grads.head.resize(model.head.size());
  for (std::size_t m = model.head.size(); m-- > 0;) {
    DenseGrads g = dense_backward(model.head[m], head_caches[m], d);
    d = std::move(g.d_input);
    g.d_input = Tensor();
    result.grads.head[m] = std::move(g);
  }

  if (model.uses_encoder()) {
    std::vector<EncoderGrads> sample_grads(n);
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      const auto s = static_cast<std::size_t>(i);
      std::vector<double> up_goal(model.feature_dim()), up_ref(model.feature_dim());
      for (std::size_t f = 0; f < up_goal.size(); ++f) {
        up_goal[f] = d(s, f);
        up_ref[f] = -d(s, f);
      }
      sample_grads[s] =
          model.encoder.backward(batch[s]->plan_ref, caches[2 * s], up_ref);
      sample_grads[s].accumulate(
          model.encoder.backward(batch[s]->plan_goal, caches[2 * s + 1], up_goal));
      detail::strip_cache(caches[2 * s]);
      detail::strip_cache(caches[2 * s + 1]);
    }
    result.grads.encoder = std::move(sample_grads[0]);
    for (std::size_t s = 1; s < n; ++s) {
      result.grads.encoder.accumulate(sample_grads[s]);
    }
    result.encoder_stats = std::move(caches);
  }

  result.head_stats = std::move(head_caches);
  for (auto& c : result.head_stats) detail::strip_cache(c);
  return result;
}

// Inference-mode MSE over a set of prepared samples, in m^2.
inline double dataset_mse(DeformerNet& model,
                          const std::vector<const PreparedSample*>& samples) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = samples.size();
  std::vector<double> errors(n, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const auto s = static_cast<std::size_t>(i);
    Tensor row = Tensor::zeros(1, model.feature_dim());
    if (model.uses_encoder()) {
      const auto psi_ref =
          model.encoder.forward(samples[s]->plan_ref, /*training=*/false);
      const auto psi_goal =
          model.encoder.forward(samples[s]->plan_goal, /*training=*/false);
      for (std::size_t f = 0; f < psi_ref.size(); ++f) {
        row(0, f) = psi_goal[f] - psi_ref[f];
      }
    } else {
      for (std::size_t f = 0; f < kFeatureDim; ++f) {
        row(0, f) = samples[s]->desc_goal[f] - samples[s]->desc_ref[f];
      }
    }
    const Vec3 pred = model.head_inference(row);
    errors[s] = (pred - samples[s]->target).squared_norm() / 3.0;
  }
  double sum = 0.0;
  for (double e : errors) sum += e;
  return sum / static_cast<double>(n);
}

// Splits sample indices into train/test by episode (samples sharing a
// manipulation point belong to one episode).
inline void split_by_episode(const std::vector<TrainingSample>& samples,
                             double test_fraction, std::uint64_t seed,
                             std::vector<std::size_t>& train_idx,
                             std::vector<std::size_t>& test_idx) {
  std::map<std::array<double, 3>, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::array<double, 3> key = {samples[i].mp.x, samples[i].mp.y,
                                       samples[i].mp.z};
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      group_of.emplace(key, groups.size());
      groups.push_back({i});
    } else {
      groups[it->second].push_back(i);
    }
  }
  std::vector<std::size_t> order(groups.size());
  for (std::size_t g = 0; g < order.size(); ++g) order[g] = g;
  Rng rng(derive_seed(seed, {0x51}));
  for (std::size_t g = order.size(); g > 1; --g) {
    std::swap(order[g - 1], order[rng.index(g)]);
  }
  const std::size_t n_test_groups =
      static_cast<std::size_t>(test_fraction * static_cast<double>(groups.size()));
  train_idx.clear();
  test_idx.clear();
  for (std::size_t g = 0; g < order.size(); ++g) {
    auto& dst = g < n_test_groups ? test_idx : train_idx;
    for (std::size_t i : groups[order[g]]) dst.push_back(i);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
}

// End-to-end training with Adam and the step-decay schedule. Deterministic
// per seed; the loss curve is reported in mm^2. curve[0] is the untrained
// model's full train/test MSE; curve[e] for e >= 1 holds the running
// training loss of epoch e and the post-epoch test MSE.
inline TrainResult train(const std::vector<TrainingSample>& dataset,
                         const TrainConfig& config) {
  config.validate();
  if (dataset.empty()) throw SizeError("train: dataset is empty");

  TrainResult result;
  result.model = DeformerNet::make(config.variant, config.seed, config.encoder,
                                   config.head_widths);
  DeformerNet& model = result.model;

  // per-sample preparation is weight-independent; do it once
  std::vector<PreparedSample> prepared(dataset.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(dataset.size()); ++i) {
    prepared[static_cast<std::size_t>(i)] =
        prepare_sample(model, dataset[static_cast<std::size_t>(i)]);
  }

  std::vector<std::size_t> train_idx, test_idx;
  split_by_episode(dataset, config.test_fraction, config.seed, train_idx, test_idx);

  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<const PreparedSample*> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(&prepared[i]);
    return out;
  };
  const std::vector<const PreparedSample*> train_set = gather(train_idx);
  const std::vector<const PreparedSample*> test_set = gather(test_idx);

  std::vector<Tensor*> params;
  model.collect_params(params);
  AdamState adam = AdamState::for_params(params);

  constexpr double kMm2 = 1e6;  // m^2 -> mm^2
  EpochStats anchor;
  anchor.epoch = 0;
  anchor.lr = config.schedule.lr_at(0);
  anchor.train_mse_mm2 = dataset_mse(model, train_set) * kMm2;
  anchor.test_mse_mm2 = dataset_mse(model, test_set) * kMm2;
  result.curve.push_back(anchor);

  std::vector<std::size_t> order(train_idx.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.schedule.lr_at(epoch);
    Rng shuffle_rng(derive_seed(config.seed, {0x5e, epoch}));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    }

    double loss_weighted = 0.0;
    std::size_t seen = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      std::size_t take = std::min(config.batch_size, order.size() - pos);
      // batchnorm needs >= 2 rows; fold a trailing singleton into the previous
      // batch, or duplicate it when the whole training set is one sample
      if (order.size() - pos - take == 1 && take == config.batch_size) take += 1;
      std::vector<const PreparedSample*> batch;
      batch.reserve(take + 1);
      for (std::size_t i = 0; i < take; ++i) {
        batch.push_back(train_set[order[pos + i]]);
      }
      if (batch.size() == 1) batch.push_back(batch[0]);
      pos += take;

      BatchResult step = batch_gradients(model, batch);
      if (std::isnan(step.loss_m2)) {
        throw DivergenceError("training loss is NaN", epoch);
      }
      loss_weighted += step.loss_m2 * static_cast<double>(batch.size());
      seen += batch.size();

      if (model.uses_encoder()) {
        for (const EncoderCache& c : step.encoder_stats) {
          model.encoder.apply_running_stats(c);
        }
      }
      for (std::size_t m = 0; m < model.head.size(); ++m) {
        detail::apply_layer_stats(model.head[m], step.head_stats[m]);
      }

      // gradient list aligned with collect_params()
      std::vector<const Tensor*> aligned;
      aligned.reserve(params.size());
      if (model.uses_encoder()) Encoder::collect_grads(step.grads.encoder, aligned);
      for (std::size_t m = 0; m < model.head.size(); ++m) {
        const DenseGrads& g = step.grads.head[m];
        aligned.push_back(&g.d_weights);
        aligned.push_back(&g.d_bias);
        if (model.head[m].with_batchnorm) {
          aligned.push_back(&g.d_bn_scale);
          aligned.push_back(&g.d_bn_shift);
        }
      }
      adam_step(params, aligned, adam, lr);
    }

    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.train_mse_mm2 = loss_weighted / static_cast<double>(seen) * kMm2;
    stats.test_mse_mm2 = dataset_mse(model, test_set) * kMm2;
    result.curve.push_back(stats);
  }
  return result;
}

// The fixed-descriptor baseline: identical head, no trainable encoder.
inline TrainResult train_baseline_head(const std::vector<TrainingSample>& dataset,
                                       TrainConfig config) {
  config.variant = ModelVariant::Baseline;
  return train(dataset, config);
}

inline void write_loss_csv(const std::vector<EpochStats>& curve, std::ostream& os) {
  os << "epoch,lr,train_mse_mm2,test_mse_mm2\n";
  os.precision(12);
  for (const EpochStats& e : curve) {
    os << e.epoch << ',' << e.lr << ',' << e.train_mse_mm2 << ','
       << e.test_mse_mm2 << '\n';
  }
}

inline void write_loss_csv(const std::vector<EpochStats>& curve,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ParamError("cannot open for writing: " + path);
  write_loss_csv(curve, f);
}

// ---------------------------------------------------------------------------
// DFNM checkpoints: magic, version, layer-spec table, then all parameters
// and running stats as f32 in declaration order.

namespace detail {

inline void write_layer_spec(BinWriter& w, const DenseLayer& layer) {
  w.u32(1);  // type tag: dense
  w.u32(static_cast<std::uint32_t>(layer.in_dim()));
  w.u32(static_cast<std::uint32_t>(layer.out_dim()));
  std::uint32_t flags = 0;
  if (layer.with_relu) flags |= 1u;
  if (layer.with_batchnorm) flags |= 2u;
  w.u32(flags);
}

inline void check_layer_spec(BinReader& r, const DenseLayer& layer,
                             const std::string& what) {
  const std::uint64_t at = r.offset();
  const std::uint32_t tag = r.u32();
  const std::uint32_t in = r.u32();
  const std::uint32_t out = r.u32();
  const std::uint32_t flags = r.u32();
  const std::uint32_t want_flags =
      (layer.with_relu ? 1u : 0u) | (layer.with_batchnorm ? 2u : 0u);
  if (tag != 1 || in != layer.in_dim() || out != layer.out_dim() ||
      flags != want_flags) {
    throw FormatError("layer spec mismatch in " + what, at);
  }
}

inline void write_layer_params(BinWriter& w, const DenseLayer& layer) {
  w.f32_array(layer.weights.data.data(), layer.weights.size());
  w.f32_array(layer.bias.data.data(), layer.bias.size());
  if (layer.with_batchnorm) {
    w.f32_array(layer.bn_scale.data.data(), layer.bn_scale.size());
    w.f32_array(layer.bn_shift.data.data(), layer.bn_shift.size());
    w.f32_array(layer.running_mean.data.data(), layer.running_mean.size());
    w.f32_array(layer.running_var.data.data(), layer.running_var.size());
  }
}

inline void read_layer_params(BinReader& r, DenseLayer& layer) {
  r.f32_array(layer.weights.data.data(), layer.weights.size());
  r.f32_array(layer.bias.data.data(), layer.bias.size());
  if (layer.with_batchnorm) {
    r.f32_array(layer.bn_scale.data.data(), layer.bn_scale.size());
    r.f32_array(layer.bn_shift.data.data(), layer.bn_shift.size());
    r.f32_array(layer.running_mean.data.data(), layer.running_mean.size());
    r.f32_array(layer.running_var.data.data(), layer.running_var.size());
  }
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'D', 'F', 'N', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const DeformerNet& model, std::ostream& os) {
  BinWriter w(os);
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(model.variant));
  if (model.uses_encoder()) {
    const EncoderConfig& cfg = model.encoder.config;
    w.u32(cfg.center ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(cfg.feature_dim));
    w.u32(static_cast<std::uint32_t>(cfg.levels.size()));
    for (const auto& lv : cfg.levels) {
      w.u32(static_cast<std::uint32_t>(lv.centroids));
      w.u32(static_cast<std::uint32_t>(lv.neighbors));
      w.u32(static_cast<std::uint32_t>(lv.mlp_widths.size()));
      for (std::size_t width : lv.mlp_widths) {
        w.u32(static_cast<std::uint32_t>(width));
      }
    }
  } else {
    w.u32(0);
    w.u32(static_cast<std::uint32_t>(kFeatureDim));
    w.u32(0);
  }
  // layer-spec table, encoder first then head
  std::uint32_t n_layers = static_cast<std::uint32_t>(model.head.size());
  if (model.uses_encoder()) {
    for (const auto& mlp : model.encoder.level_mlps) {
      n_layers += static_cast<std::uint32_t>(mlp.size());
    }
    n_layers += 1;  // encoder output layer
  }
  w.u32(n_layers);
  if (model.uses_encoder()) {
    for (const auto& mlp : model.encoder.level_mlps)
      for (const auto& layer : mlp) detail::write_layer_spec(w, layer);
    detail::write_layer_spec(w, model.encoder.output_layer);
  }
  for (const auto& layer : model.head) detail::write_layer_spec(w, layer);

  if (model.uses_encoder()) {
    for (const auto& mlp : model.encoder.level_mlps)
      for (const auto& layer : mlp) detail::write_layer_params(w, layer);
    detail::write_layer_params(w, model.encoder.output_layer);
  }
  for (const auto& layer : model.head) detail::write_layer_params(w, layer);
}

inline void write_checkpoint(const DeformerNet& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParamError("cannot open for writing: " + path);
  write_checkpoint(model, f);
}

inline DeformerNet read_checkpoint(std::istream& is) {
  BinReader r(is);
  r.expect_magic(kCheckpointMagic, "DFNM checkpoint");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version", version_at);
  }
  const std::uint32_t variant_at = r.offset();
  const std::uint32_t variant_raw = r.u32();
  if (variant_raw > 2) throw FormatError("unknown model variant", variant_at);
  const ModelVariant variant = static_cast<ModelVariant>(variant_raw);

  const bool center = r.u32() != 0;
  const std::uint32_t feature_dim = r.u32();
  const std::uint32_t n_levels = r.u32();
  EncoderConfig cfg;
  cfg.levels.clear();
  cfg.feature_dim = feature_dim;
  cfg.center = center;
  for (std::uint32_t l = 0; l < n_levels; ++l) {
    EncoderLevelConfig lv;
    lv.centroids = r.u32();
    lv.neighbors = r.u32();
    const std::uint32_t n_widths = r.u32();
    for (std::uint32_t i = 0; i < n_widths; ++i) lv.mlp_widths.push_back(r.u32());
    cfg.levels.push_back(std::move(lv));
  }

  DeformerNet model;
  model.variant = variant;
  std::uint32_t n_encoder_layers = 0;
  if (model.uses_encoder()) {
    model.encoder = Encoder(cfg);
    for (const auto& mlp : model.encoder.level_mlps) {
      n_encoder_layers += static_cast<std::uint32_t>(mlp.size());
    }
    n_encoder_layers += 1;  // output layer
  }

  const std::uint64_t n_layers_at = r.offset();
  const std::uint32_t n_layers = r.u32();
  if (n_layers <= n_encoder_layers) {
    throw FormatError("layer count mismatch", n_layers_at);
  }
  if (model.uses_encoder()) {
    for (const auto& mlp : model.encoder.level_mlps)
      for (const auto& layer : mlp) detail::check_layer_spec(r, layer, "encoder");
    detail::check_layer_spec(r, model.encoder.output_layer, "encoder output");
  }
  // head layers are rebuilt from the spec table
  std::size_t expect_in = model.feature_dim();
  for (std::uint32_t m = n_encoder_layers; m < n_layers; ++m) {
    const std::uint64_t at = r.offset();
    const std::uint32_t tag = r.u32();
    const std::uint32_t in = r.u32();
    const std::uint32_t out = r.u32();
    const std::uint32_t flags = r.u32();
    if (tag != 1 || in != expect_in) {
      throw FormatError("head layer spec mismatch", at);
    }
    model.head.push_back(DenseLayer::make(in, out, flags & 1u, flags & 2u));
    expect_in = out;
  }
  if (expect_in != 3) {
    throw FormatError("head output width must be 3", n_layers_at);
  }

  if (model.uses_encoder()) {
    for (auto& mlp : model.encoder.level_mlps)
      for (auto& layer : mlp) detail::read_layer_params(r, layer);
    detail::read_layer_params(r, model.encoder.output_layer);
  }
  for (auto& layer : model.head) detail::read_layer_params(r, layer);
  return model;
}

inline DeformerNet read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParamError("cannot open for reading: " + path);
  return read_checkpoint(f);
}

}  // namespace dfn
