// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tpd/autodiff.hpp"
#include "tpd/rng.hpp"

namespace tpd {
namespace nn {

using ag::NodePtr;

// Named parameter registry. Models register every learnable tensor here so
// optimizers and the checkpoint container can walk them by name.
template <typename T>
class ParamStore {
 public:
  NodePtr<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
    for (auto& [n, p] : params_) TPD_CHECK_MSG(n != name, "duplicate param " << name);
    NodePtr<T> node = trainable ? ag::param(std::move(init)) : ag::constant(std::move(init));
    params_.emplace_back(name, node);
    return node;
  }

  const std::vector<std::pair<std::string, NodePtr<T>>>& items() const { return params_; }

  std::vector<NodePtr<T>> nodes() const {
    std::vector<NodePtr<T>> out;
    for (auto& [n, p] : params_) out.push_back(p);
    return out;
  }

  NodePtr<T> find(const std::string& name) const {
    for (auto& [n, p] : params_)
      if (n == name) return p;
    TPD_CHECK_MSG(false, "param not found: " << name);
    return nullptr;
  }

  int64_t count_scalars() const {
    int64_t n = 0;
    for (auto& [name, p] : params_) n += p->value.numel();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& [n, p] : params_) p->requires_grad = on;
  }

  void merge_prefixed(const std::string& prefix, const ParamStore<T>& other) {
    for (auto& [n, p] : other.params_) params_.emplace_back(prefix + n, p);
  }

 private:
  std::vector<std::pair<std::string, NodePtr<T>>> params_;
};

template <typename T>
Tensor<T> kaiming_normal(Rng& rng, Shape shape, int64_t fan_in) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  return rng.normal_tensor<T>(std::move(shape), std);
}

// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  NodePtr<T> weight;  // [out, in]
  NodePtr<T> bias;    // [out]
  int64_t in = 0, out = 0;

  void init(ParamStore<T>& store, const std::string& name, int64_t in_f, int64_t out_f, Rng& rng,
            double weight_gain = 1.0, T bias_fill = T(0)) {
    in = in_f;
    out = out_f;
    Tensor<T> w = rng.normal_tensor<T>(Shape{out_f, in_f}, weight_gain / std::sqrt(double(in_f)));
    weight = store.add(name + ".weight", std::move(w));
    bias = store.add(name + ".bias", Tensor<T>::full(Shape{out_f}, bias_fill));
  }

  NodePtr<T> forward(const NodePtr<T>& x) const {
    return ag::add_bias_rows(ag::bmm(x, weight, false, true), bias);
  }

  int64_t macs(int64_t batch) const { return batch * in * out; }
};

template <typename T>
struct Conv2d {
  NodePtr<T> weight;  // [out_c, in_c, k, k]
  NodePtr<T> bias;    // [out_c]
  int64_t in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;

  void init(ParamStore<T>& store, const std::string& name, int64_t in_channels, int64_t out_channels,
            int64_t kernel, int64_t stride_, int64_t pad_, Rng& rng, double weight_gain = 1.0) {
    in_c = in_channels;
    out_c = out_channels;
    k = kernel;
    stride = stride_;
    pad = pad_;
    int64_t fan_in = in_c * k * k;
    Tensor<T> w = rng.normal_tensor<T>(Shape{out_c, in_c, k, k}, weight_gain / std::sqrt(double(fan_in)));
    weight = store.add(name + ".weight", std::move(w));
    bias = store.add(name + ".bias", Tensor<T>(Shape{out_c}));
  }

  ag::Conv2dGeom geom(const Shape& xs) const {
    TPD_CHECK_MSG(xs.rank() == 4 && xs[1] == in_c,
                  "conv input " << xs.str() << " expects in_c=" << in_c);
    return ag::Conv2dGeom{in_c, xs[2], xs[3], k, k, stride, pad};
  }

  NodePtr<T> forward(const NodePtr<T>& x) const {
    auto geo = geom(x->shape());
    auto cols = ag::im2col(x, geo);
    auto w2 = ag::reshape(weight, Shape{out_c, in_c * k * k});
    auto y = ag::bmm(w2, cols);  // [N, out_c, OH*OW]
    y = ag::reshape(y, Shape{x->shape()[0], out_c, geo.out_h(), geo.out_w()});
    return ag::add_bias_nchw(y, bias);
  }

  int64_t macs(int64_t batch, int64_t in_h, int64_t in_w) const {
    ag::Conv2dGeom geo{in_c, in_h, in_w, k, k, stride, pad};
    return batch * out_c * in_c * k * k * geo.out_h() * geo.out_w();
  }
};

// Style-modulated 3x3 convolution: weights are scaled per input channel by an
// affine function of the style code, then demodulated per output channel.
// Implemented by the equivalent input/output channel scalings
//   conv(x, w * s)[o] == conv(x * s, w)[o],
// which keeps the batched GEMM shared across samples.
template <typename T>
struct ModulatedConv2d {
  NodePtr<T> weight;  // [out_c, in_c, k, k]
  NodePtr<T> bias;    // [out_c]
  Linear<T> affine;   // style -> per-input-channel scale
  int64_t in_c = 0, out_c = 0, k = 3;
  bool demodulate = true;

  void init(ParamStore<T>& store, const std::string& name, int64_t in_channels, int64_t out_channels,
            int64_t style_dim, Rng& rng, int64_t kernel = 3) {
    in_c = in_channels;
    out_c = out_channels;
    k = kernel;
    int64_t fan_in = in_c * k * k;
    weight = store.add(name + ".weight",
                       rng.normal_tensor<T>(Shape{out_c, in_c, k, k}, 1.0 / std::sqrt(double(fan_in))));
    bias = store.add(name + ".bias", Tensor<T>(Shape{out_c}));
    affine.init(store, name + ".affine", style_dim, in_c, rng, 1.0, T(1));  // styles start at 1
  }

  NodePtr<T> forward(const NodePtr<T>& x, const NodePtr<T>& style) const {
    const Shape& xs = x->shape();
    TPD_CHECK(xs.rank() == 4 && xs[1] == in_c);
    int64_t n = xs[0], h = xs[2], w = xs[3];
    auto s = affine.forward(style);  // [N, in_c]
    auto xm = ag::scale_channels(x, s);
    ag::Conv2dGeom geo{in_c, h, w, k, k, 1, (k - 1) / 2};
    auto cols = ag::im2col(xm, geo);
    auto w2 = ag::reshape(weight, Shape{out_c, in_c * k * k});
    auto y = ag::reshape(ag::bmm(w2, cols), Shape{n, out_c, geo.out_h(), geo.out_w()});
    if (demodulate) {
      // d[n,o] = 1/sqrt(sum_i s[n,i]^2 * sum_kk w[o,i,kk]^2 + eps)
      auto wsq = ag::sum_axis(ag::reshape(ag::square(weight), Shape{out_c, in_c, k * k}), 2);
      auto dsq = ag::add_scalar(ag::bmm(ag::square(s), wsq, false, true), T(1e-8));
      auto ones = ag::constant(Tensor<T>::full(Shape{n, out_c}, T(1)));
      auto d = ag::div(ones, ag::sqrt_(dsq));
      y = ag::scale_channels(y, d);
    }
    return ag::add_bias_nchw(y, bias);
  }

  int64_t macs(int64_t batch, int64_t h, int64_t w) const {
    return batch * (out_c * in_c * k * k * h * w + affine.in * affine.out);
  }
};

template <typename T>
NodePtr<T> leaky(const NodePtr<T>& x) {
  return ag::leaky_relu(x, T(0.2));
}

// Small fully-connected stack with leaky-relu hidden activations.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  void init(ParamStore<T>& store, const std::string& name, const std::vector<int64_t>& dims, Rng& rng) {
    TPD_CHECK(dims.size() >= 2);
    layers.resize(dims.size() - 1);
    for (size_t i = 0; i + 1 < dims.size(); ++i)
      layers[i].init(store, name + ".fc" + std::to_string(i), dims[i], dims[i + 1], rng,
                     i + 2 < dims.size() ? std::sqrt(2.0) : 1.0);
  }

  NodePtr<T> forward(NodePtr<T> x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(x);
      if (i + 1 < layers.size()) x = leaky(x);
    }
    return x;
  }

  int64_t macs(int64_t batch) const {
    int64_t n = 0;
    for (const auto& l : layers) n += l.macs(batch);
    return n;
  }
};

}  // namespace nn
}  // namespace tpd
