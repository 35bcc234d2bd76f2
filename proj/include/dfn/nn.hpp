#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "dfn/error.hpp"
#include "dfn/rng.hpp"

namespace dfn {

// Row-major dense tensor of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::initializer_list<std::size_t> s) : shape(s) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    data.assign(n, 0.0);
  }
  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor{rows, cols};
  }
  static Tensor zeros(std::size_t n) { return Tensor{n}; }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>;

inline MatMap as_matrix(Tensor& t) {
  return MatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
inline ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

// Fully-connected layer with optional batch normalization and ReLU, applied
// in the order dense -> batchnorm -> relu. Output layers carry neither.
struct DenseLayer {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]
  bool with_relu = false;
  bool with_batchnorm = false;

  // batchnorm state (unused unless with_batchnorm)
  Tensor bn_scale, bn_shift, running_mean, running_var;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }

  static DenseLayer make(std::size_t in, std::size_t out, bool relu, bool bn) {
    DenseLayer layer;
    layer.weights = Tensor::zeros(out, in);
    layer.bias = Tensor::zeros(out);
    layer.with_relu = relu;
    layer.with_batchnorm = bn;
    layer.bn_scale = Tensor::zeros(out);
    layer.bn_shift = Tensor::zeros(out);
    layer.running_mean = Tensor::zeros(out);
    layer.running_var = Tensor::zeros(out);
    for (std::size_t j = 0; j < out; ++j) {
      layer.bn_scale[j] = 1.0;
      layer.running_var[j] = 1.0;
    }
    return layer;
  }

  // Glorot-uniform weights, zero bias, identity batchnorm.
  void init(Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in_dim() + out_dim()));
    for (double& w : weights.data) w = rng.uniform(-bound, bound);
    for (double& b : bias.data) b = 0.0;
    for (std::size_t j = 0; j < out_dim(); ++j) {
      bn_scale[j] = 1.0;
      bn_shift[j] = 0.0;
      running_mean[j] = 0.0;
      running_var[j] = 1.0;
    }
  }
};

// Cached intermediates of one training-mode forward pass. The post-relu
// output is not stored; backward reconstructs the relu mask bit-exactly from
// pre_bn / normalized.
struct DenseCache {
  Tensor input;        // [batch x in]
  Tensor pre_bn;       // dense output z
  Tensor normalized;   // x_hat (batchnorm only)
  Tensor batch_mean, batch_var, inv_std;
  bool training = false;
  bool valid = false;
};

// y = relu(batchnorm(W x + b)); batch statistics in training mode, running
// statistics in inference mode. Running stats update only in training mode;
// update_running=false defers that side effect (the caller applies the cached
// batch statistics later, keeping parallel passes race-free).
inline Tensor dense_forward(DenseLayer& layer, const Tensor& input, bool training,
                            DenseCache* cache = nullptr, bool update_running = true) {
  if (input.cols() != layer.in_dim()) {
    throw ShapeError("dense_forward: input width " + std::to_string(input.cols()) +
                     " != layer in_dim " + std::to_string(layer.in_dim()));
  }
  const std::size_t batch = input.rows();
  const std::size_t out = layer.out_dim();
  if (training && layer.with_batchnorm && batch < 2) {
    throw DegenerateBatchError("training-mode batchnorm needs batch >= 2");
  }

  Tensor z = Tensor::zeros(batch, out);
  as_matrix(z).noalias() = as_matrix(input) * as_matrix(layer.weights).transpose();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < out; ++c) z(r, c) += layer.bias[c];

  if (cache) {
    cache->input = input;
    cache->pre_bn = z;
    cache->training = training;
    cache->valid = true;
  }

  Tensor y = z;
  if (layer.with_batchnorm) {
    Tensor mean = Tensor::zeros(out), var = Tensor::zeros(out), inv_std = Tensor::zeros(out);
    if (training) {
      for (std::size_t c = 0; c < out; ++c) {
        double m = 0.0;
        for (std::size_t r = 0; r < batch; ++r) m += z(r, c);
        m /= static_cast<double>(batch);
        double v = 0.0;
        for (std::size_t r = 0; r < batch; ++r) {
          const double d = z(r, c) - m;
          v += d * d;
        }
        v /= static_cast<double>(batch);  // biased variance throughout
        mean[c] = m;
        var[c] = v;
        if (update_running) {
          layer.running_mean[c] = (1.0 - layer.bn_momentum) * layer.running_mean[c] +
                                  layer.bn_momentum * m;
          layer.running_var[c] = (1.0 - layer.bn_momentum) * layer.running_var[c] +
                                 layer.bn_momentum * v;
        }
      }
    } else {
      mean = layer.running_mean;
      var = layer.running_var;
    }
    for (std::size_t c = 0; c < out; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + layer.bn_eps);
    Tensor xhat = Tensor::zeros(batch, out);
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t c = 0; c < out; ++c) {
        xhat(r, c) = (z(r, c) - mean[c]) * inv_std[c];
        y(r, c) = layer.bn_scale[c] * xhat(r, c) + layer.bn_shift[c];
      }
    }
    if (cache) {
      cache->normalized = xhat;
      cache->batch_mean = mean;
      cache->batch_var = var;
      cache->inv_std = inv_std;
    }
  }

  if (layer.with_relu) {
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  }
  return y;
}

struct DenseGrads {
  Tensor d_weights, d_bias, d_bn_scale, d_bn_shift;
  Tensor d_input;

  static DenseGrads zeros_like(const DenseLayer& layer) {
    DenseGrads g;
    g.d_weights = Tensor::zeros(layer.out_dim(), layer.in_dim());
    g.d_bias = Tensor::zeros(layer.out_dim());
    g.d_bn_scale = Tensor::zeros(layer.out_dim());
    g.d_bn_shift = Tensor::zeros(layer.out_dim());
    return g;
  }

  void accumulate(const DenseGrads& o) {
    for (std::size_t i = 0; i < d_weights.size(); ++i) d_weights[i] += o.d_weights[i];
    for (std::size_t i = 0; i < d_bias.size(); ++i) d_bias[i] += o.d_bias[i];
    for (std::size_t i = 0; i < d_bn_scale.size(); ++i) d_bn_scale[i] += o.d_bn_scale[i];
    for (std::size_t i = 0; i < d_bn_shift.size(); ++i) d_bn_shift[i] += o.d_bn_shift[i];
  }
};

// Exact chain-rule gradients for one layer. Requires the cache of a
// training-mode forward pass.
inline DenseGrads dense_backward(const DenseLayer& layer, const DenseCache& cache,
                                 const Tensor& upstream) {
  if (!cache.valid || !cache.training) {
    throw StateError("dense_backward without cached training-mode forward");
  }
  if (!upstream.same_shape(cache.pre_bn)) {
    throw ShapeError("dense_backward: upstream shape mismatch");
  }
  const std::size_t batch = cache.input.rows();
  const std::size_t out = layer.out_dim();

  DenseGrads grads = DenseGrads::zeros_like(layer);

  // relu: zero exactly where the forward output was zero (the pre-relu value
  // is reconstructed with the same expression the forward used)
  Tensor g = upstream;
  if (layer.with_relu) {
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t c = 0; c < out; ++c) {
        const double pre =
            layer.with_batchnorm
                ? layer.bn_scale[c] * cache.normalized(r, c) + layer.bn_shift[c]
                : cache.pre_bn(r, c);
        if (!(pre > 0.0)) g(r, c) = 0.0;
      }
    }
  }

  // batchnorm backward (training statistics)
  Tensor dz = g;
  if (layer.with_batchnorm) {
    for (std::size_t c = 0; c < out; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t r = 0; r < batch; ++r) {
        sum_g += g(r, c);
        sum_gx += g(r, c) * cache.normalized(r, c);
      }
      grads.d_bn_shift[c] = sum_g;
      grads.d_bn_scale[c] = sum_gx;
      const double inv_n = 1.0 / static_cast<double>(batch);
      const double coeff = layer.bn_scale[c] * cache.inv_std[c];
      for (std::size_t r = 0; r < batch; ++r) {
        dz(r, c) = coeff * (g(r, c) - sum_g * inv_n -
                            cache.normalized(r, c) * sum_gx * inv_n);
      }
    }
  }

  as_matrix(grads.d_weights).noalias() =
      as_matrix(dz).transpose() * as_matrix(cache.input);
  for (std::size_t c = 0; c < out; ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < batch; ++r) s += dz(r, c);
    grads.d_bias[c] = s;
  }
  grads.d_input = Tensor::zeros(batch, layer.in_dim());
  as_matrix(grads.d_input).noalias() = as_matrix(dz) * as_matrix(layer.weights);
  return grads;
}

// Mean squared error over all elements.
inline double mse(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw ShapeError("mse: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

inline Tensor mse_gradient(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw ShapeError("mse: shape mismatch");
  Tensor g = pred;
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

// Adam with bias correction. One state per parameter tensor list; call with
// the same ordering every step.
struct AdamState {
  std::vector<Tensor> m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  static AdamState for_params(const std::vector<Tensor*>& params) {
    AdamState s;
    for (const Tensor* p : params) {
      Tensor zm = *p, zv = *p;
      std::fill(zm.data.begin(), zm.data.end(), 0.0);
      std::fill(zv.data.begin(), zv.data.end(), 0.0);
      s.m.push_back(std::move(zm));
      s.v.push_back(std::move(zv));
    }
    return s;
  }
};

inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads, AdamState& state,
                      double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Tensor& p = *params[t];
    const Tensor& g = *grads[t];
    if (!p.same_shape(g)) throw ShapeError("adam_step: gradient shape mismatch");
    Tensor& m = state.m[t];
    Tensor& v = state.v[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

// Step decay: lr(epoch) = initial * factor^floor(epoch / every), 0-indexed.
struct LrSchedule {
  double initial_lr = 1e-3;
  double decay_factor = 0.1;
  std::size_t decay_every = 50;

  void validate() const {
    if (!(initial_lr > 0.0)) throw ParamError("initial_lr must be > 0");
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) {
      throw ParamError("decay_factor must be in (0, 1)");
    }
    if (decay_every < 1) throw ParamError("decay_every must be >= 1");
  }

  double lr_at(std::size_t epoch) const {
    return initial_lr *
           std::pow(decay_factor, static_cast<double>(epoch / decay_every));
  }
};

inline double lr_at(const LrSchedule& schedule, std::size_t epoch) {
  return schedule.lr_at(epoch);
}

}  // namespace dfn
