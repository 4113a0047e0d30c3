// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense tensors. Backward passes are themselves
// built from graph ops, so grad(..., create_graph=true) yields differentiable
// gradients (needed for the R1 penalty). Ops whose backward falls outside the
// op set (plane_sample) are flagged create-graph-unsafe and reject a second
// differentiation instead of silently returning wrong values.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tpd/common.hpp"
#include "tpd/tensor.hpp"

namespace tpd {
namespace ag {

template <typename T>
struct Node;
template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  bool create_graph_safe = true;
  const char* op = "leaf";
  std::vector<NodePtr<T>> parents;
  std::function<std::vector<NodePtr<T>>(const NodePtr<T>& self, const NodePtr<T>& grad)> backward;

  const Shape& shape() const { return value.shape(); }
};

// Graph recording is on by default; renderers and samplers switch it off for
// inference so intermediates free as soon as they go out of scope.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
NodePtr<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
NodePtr<T> param(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

template <typename T>
NodePtr<T> scalar_node(T v) {
  return constant(Tensor<T>::scalar(v));
}

template <typename T, typename BackwardFn>
NodePtr<T> make_op(const char* op, Tensor<T> value, std::vector<NodePtr<T>> parents, BackwardFn bwd,
                   bool create_graph_safe = true) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  bool need = false;
  if (grad_mode()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) need = true;
  }
  if (need) {
    n->requires_grad = true;
    n->create_graph_safe = create_graph_safe;
    n->parents = std::move(parents);
    n->backward = std::move(bwd);
  }
  return n;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b);
template <typename T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b);
template <typename T>
NodePtr<T> neg(const NodePtr<T>& a);

template <typename T, typename F, typename BackwardFn>
NodePtr<T> unary_op(const char* name, const NodePtr<T>& a, F f, BackwardFn bwd) {
  Tensor<T> out(a->shape());
  const T* in = a->value.data();
  T* o = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) o[i] = f(in[i]);
  return make_op<T>(name, std::move(out), {a}, std::move(bwd));
}

template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
  TPD_CHECK_MSG(a->shape() == b->shape(), "add " << a->shape().str() << " vs " << b->shape().str());
  Tensor<T> out(a->shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  return make_op<T>("add", std::move(out), {a, b},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{g, g};
                    });
}

template <typename T>
NodePtr<T> sub(const NodePtr<T>& a, const NodePtr<T>& b) {
  TPD_CHECK_MSG(a->shape() == b->shape(), "sub " << a->shape().str() << " vs " << b->shape().str());
  Tensor<T> out(a->shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  return make_op<T>("sub", std::move(out), {a, b},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{g, neg(g)};
                    });
}

template <typename T>
NodePtr<T> neg(const NodePtr<T>& a) {
  return unary_op<T>("neg", a, [](T x) { return -x; },
                     [](const NodePtr<T>&, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{neg(g)};
                     });
}

template <typename T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
  TPD_CHECK_MSG(a->shape() == b->shape(), "mul " << a->shape().str() << " vs " << b->shape().str());
  Tensor<T> out(a->shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return make_op<T>("mul", std::move(out), {a, b},
                    [](const NodePtr<T>& self, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{mul(g, self->parents[1]), mul(g, self->parents[0])};
                    });
}

template <typename T>
NodePtr<T> div(const NodePtr<T>& a, const NodePtr<T>& b) {
  TPD_CHECK(a->shape() == b->shape());
  Tensor<T> out(a->shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] / b->value[i];
  return make_op<T>("div", std::move(out), {a, b},
                    [](const NodePtr<T>& self, const NodePtr<T>& g) {
                      auto& a_ = self->parents[0];
                      auto& b_ = self->parents[1];
                      auto ga = div(g, b_);
                      auto gb = neg(mul(g, div(a_, mul(b_, b_))));
                      return std::vector<NodePtr<T>>{ga, gb};
                    });
}

template <typename T>
NodePtr<T> add_scalar(const NodePtr<T>& a, T c) {
  return unary_op<T>("add_scalar", a, [c](T x) { return x + c; },
                     [](const NodePtr<T>&, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{g};
                     });
}

template <typename T>
NodePtr<T> mul_scalar(const NodePtr<T>& a, T c) {
  return unary_op<T>("mul_scalar", a, [c](T x) { return x * c; },
                     [c](const NodePtr<T>&, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{mul_scalar(g, c)};
                     });
}

template <typename T>
NodePtr<T> exp_(const NodePtr<T>& a) {
  return unary_op<T>("exp", a, [](T x) { return std::exp(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{mul(g, self)};
                     });
}

template <typename T>
NodePtr<T> log_(const NodePtr<T>& a) {
  return unary_op<T>("log", a, [](T x) { return std::log(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{div(g, self->parents[0])};
                     });
}

template <typename T>
NodePtr<T> square(const NodePtr<T>& a) {
  return unary_op<T>("square", a, [](T x) { return x * x; },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{mul(g, mul_scalar(self->parents[0], T(2)))};
                     });
}

template <typename T>
NodePtr<T> sqrt_(const NodePtr<T>& a) {
  return unary_op<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{div(mul_scalar(g, T(0.5)), self)};
                     });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& a) {
  return unary_op<T>("sigmoid", a, [](T x) { return stable_sigmoid(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       auto one_minus = add_scalar(neg(self), T(1));
                       return std::vector<NodePtr<T>>{mul(g, mul(self, one_minus))};
                     });
}

template <typename T>
NodePtr<T> tanh_(const NodePtr<T>& a) {
  return unary_op<T>("tanh", a, [](T x) { return std::tanh(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{mul(g, add_scalar(neg(square(self)), T(1)))};
                     });
}

template <typename T>
T stable_softplus(T x) {
  if (x > T(20)) return x;
  if (x < T(-20)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
NodePtr<T> softplus(const NodePtr<T>& a) {
  return unary_op<T>("softplus", a, [](T x) { return stable_softplus(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       return std::vector<NodePtr<T>>{mul(g, sigmoid(self->parents[0]))};
                     });
}

// Derivative masks of piecewise-linear activations are constants of the input
// values (zero second derivative a.e.), so these stay create-graph safe.
template <typename T>
NodePtr<T> leaky_relu(const NodePtr<T>& a, T slope) {
  return unary_op<T>("leaky_relu", a, [slope](T x) { return x >= 0 ? x : slope * x; },
                     [slope](const NodePtr<T>& self, const NodePtr<T>& g) {
                       Tensor<T> mask(self->parents[0]->shape());
                       const Tensor<T>& x = self->parents[0]->value;
                       for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = x[i] >= 0 ? T(1) : slope;
                       return std::vector<NodePtr<T>>{mul(g, constant(std::move(mask)))};
                     });
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& a) {
  return leaky_relu(a, T(0));
}

template <typename T>
NodePtr<T> abs_(const NodePtr<T>& a) {
  return unary_op<T>("abs", a, [](T x) { return std::abs(x); },
                     [](const NodePtr<T>& self, const NodePtr<T>& g) {
                       Tensor<T> s(self->parents[0]->shape());
                       const Tensor<T>& x = self->parents[0]->value;
                       for (int64_t i = 0; i < s.numel(); ++i) s[i] = x[i] >= 0 ? T(1) : T(-1);
                       return std::vector<NodePtr<T>>{mul(g, constant(std::move(s)))};
                     });
}

// select by a constant 0/1 mask: mask*a + (1-mask)*b
template <typename T>
NodePtr<T> where_mask(const Tensor<T>& mask, const NodePtr<T>& a, const NodePtr<T>& b) {
  TPD_CHECK(mask.shape() == a->shape() && mask.shape() == b->shape());
  Tensor<T> out(a->shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = mask[i] != T(0) ? a->value[i] : b->value[i];
  Tensor<T> m = mask;
  return make_op<T>("where_mask", std::move(out), {a, b},
                    [m](const NodePtr<T>&, const NodePtr<T>& g) {
                      Tensor<T> inv(m.shape());
                      for (int64_t i = 0; i < inv.numel(); ++i) inv[i] = m[i] != T(0) ? T(0) : T(1);
                      Tensor<T> mm = m;
                      return std::vector<NodePtr<T>>{mul(g, constant(std::move(mm))),
                                                     mul(g, constant(std::move(inv)))};
                    });
}

// ---------------------------------------------------------------------------
// reshape / slicing / concat
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> reshape(const NodePtr<T>& a, Shape s) {
  Tensor<T> out = a->value.reshaped(s);
  Shape orig = a->shape();
  return make_op<T>("reshape", std::move(out), {a},
                    [orig](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{reshape(g, orig)};
                    });
}

namespace detail {
// generic slice/pad along an axis of a rank-2 or rank-3 tensor flattened as
// [outer, axis, inner]
template <typename T>
Tensor<T> slice_axis_impl(const Tensor<T>& x, int64_t outer, int64_t axis, int64_t inner, int64_t a0,
                          int64_t a1) {
  std::vector<int64_t> dims = x.shape().dims();
  Tensor<T> out(Shape{outer, a1 - a0, inner});
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = a0; k < a1; ++k) {
      const T* src = x.data() + (o * axis + k) * inner;
      T* dst = out.data() + (o * (a1 - a0) + (k - a0)) * inner;
      std::copy(src, src + inner, dst);
    }
  return out;
}

template <typename T>
Tensor<T> pad_axis_impl(const Tensor<T>& g, int64_t outer, int64_t axis, int64_t inner, int64_t a0,
                        int64_t a1) {
  Tensor<T> out(Shape{outer, axis, inner});
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t k = a0; k < a1; ++k) {
      const T* src = g.data() + (o * (a1 - a0) + (k - a0)) * inner;
      T* dst = out.data() + (o * axis + k) * inner;
      std::copy(src, src + inner, dst);
    }
  return out;
}
}  // namespace detail

// slice along axis `ax` of any-rank tensor; adjoint zero-pads back.
template <typename T>
NodePtr<T> slice_axis(const NodePtr<T>& x, int64_t ax, int64_t a0, int64_t a1) {
  const Shape& s = x->shape();
  TPD_CHECK(ax >= 0 && ax < s.rank());
  TPD_CHECK_MSG(a0 >= 0 && a1 <= s[ax] && a0 < a1, "slice [" << a0 << "," << a1 << ") of " << s.str());
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < ax; ++i) outer *= s[i];
  for (int64_t i = ax + 1; i < s.rank(); ++i) inner *= s[i];
  Tensor<T> flat = detail::slice_axis_impl(x->value, outer, s[ax], inner, a0, a1);
  std::vector<int64_t> dims = s.dims();
  dims[static_cast<size_t>(ax)] = a1 - a0;
  Tensor<T> out = flat.reshaped(Shape(dims));
  Shape orig = s;
  return make_op<T>("slice_axis", std::move(out), {x},
                    [orig, ax, a0, a1, outer, inner](const NodePtr<T>&, const NodePtr<T>& g) {
                      Tensor<T> padded =
                          detail::pad_axis_impl(g->value, outer, orig[ax], inner, a0, a1).reshaped(orig);
                      // pad is linear data movement of g; build it as a direct op on g
                      auto pg = make_op<T>("pad_axis", std::move(padded), {g},
                                           [orig, ax, a0, a1, outer, inner](const NodePtr<T>&,
                                                                            const NodePtr<T>& gg) {
                                             return std::vector<NodePtr<T>>{slice_axis(gg, ax, a0, a1)};
                                           });
                      return std::vector<NodePtr<T>>{pg};
                    });
}

// concat along an axis; adjoint slices.
template <typename T>
NodePtr<T> concat_axis(const NodePtr<T>& a, const NodePtr<T>& b, int64_t ax) {
  const Shape& sa = a->shape();
  const Shape& sb = b->shape();
  TPD_CHECK(sa.rank() == sb.rank() && ax >= 0 && ax < sa.rank());
  for (int64_t i = 0; i < sa.rank(); ++i)
    if (i != ax) TPD_CHECK_MSG(sa[i] == sb[i], "concat " << sa.str() << " vs " << sb.str());
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < ax; ++i) outer *= sa[i];
  for (int64_t i = ax + 1; i < sa.rank(); ++i) inner *= sa[i];
  int64_t ka = sa[ax], kb = sb[ax];
  std::vector<int64_t> dims = sa.dims();
  dims[static_cast<size_t>(ax)] = ka + kb;
  Tensor<T> out{Shape(dims)};
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(a->value.data() + o * ka * inner, a->value.data() + (o + 1) * ka * inner,
              out.data() + o * (ka + kb) * inner);
    std::copy(b->value.data() + o * kb * inner, b->value.data() + (o + 1) * kb * inner,
              out.data() + (o * (ka + kb) + ka) * inner);
  }
  return make_op<T>("concat_axis", std::move(out), {a, b},
                    [ax, ka, kb](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{slice_axis(g, ax, 0, ka),
                                                     slice_axis(g, ax, ka, ka + kb)};
                    });
}

template <typename T>
NodePtr<T> stack_axis0(const std::vector<NodePtr<T>>& xs) {
  TPD_CHECK(!xs.empty());
  const Shape& s0 = xs[0]->shape();
  std::vector<int64_t> dims;
  dims.push_back(static_cast<int64_t>(xs.size()));
  for (int64_t d : s0.dims()) dims.push_back(d);
  Tensor<T> out{Shape(dims)};
  int64_t per = s0.numel();
  for (size_t i = 0; i < xs.size(); ++i) {
    TPD_CHECK(xs[i]->shape() == s0);
    std::copy(xs[i]->value.data(), xs[i]->value.data() + per, out.data() + static_cast<int64_t>(i) * per);
  }
  std::vector<NodePtr<T>> parents = xs;
  Shape item_shape = s0;
  return make_op<T>("stack_axis0", std::move(out), std::move(parents),
                    [item_shape](const NodePtr<T>& self, const NodePtr<T>& g) {
                      std::vector<NodePtr<T>> grads;
                      int64_t n = static_cast<int64_t>(self->parents.size());
                      for (int64_t i = 0; i < n; ++i)
                        grads.push_back(reshape(slice_axis(g, 0, i, i + 1), item_shape));
                      return grads;
                    });
}

// ---------------------------------------------------------------------------
// reductions and broadcasts (adjoint pairs)
// ---------------------------------------------------------------------------

template <typename T>
NodePtr<T> broadcast_full(const NodePtr<T>& a, Shape s);

template <typename T>
NodePtr<T> sum_all(const NodePtr<T>& a) {
  T acc = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
  Shape orig = a->shape();
  return make_op<T>("sum_all", Tensor<T>::scalar(acc), {a},
                    [orig](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{broadcast_full(g, orig)};
                    });
}

template <typename T>
NodePtr<T> broadcast_full(const NodePtr<T>& a, Shape s) {
  TPD_CHECK(a->value.numel() == 1);
  Tensor<T> out = Tensor<T>::full(s, a->value[0]);
  return make_op<T>("broadcast_full", std::move(out), {a},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{sum_all(g)};
                    });
}

template <typename T>
NodePtr<T> mean_all(const NodePtr<T>& a) {
  int64_t n = a->value.numel();
  return mul_scalar(sum_all(a), T(1) / static_cast<T>(n));
}

namespace detail {
// reduce [outer, axis, inner] -> [outer, inner] by summing the middle axis
template <typename T>
Tensor<T> sum_mid(const Tensor<T>& x, int64_t outer, int64_t axis, int64_t inner) {
  Tensor<T> out(Shape{outer, inner});
  for (int64_t o = 0; o < outer; ++o) {
    T* dst = out.data() + o * inner;
    for (int64_t k = 0; k < axis; ++k) {
      const T* src = x.data() + (o * axis + k) * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return out;
}

template <typename T>
Tensor<T> repeat_mid(const Tensor<T>& x, int64_t outer, int64_t axis, int64_t inner) {
  Tensor<T> out(Shape{outer, axis, inner});
  for (int64_t o = 0; o < outer; ++o) {
    const T* src = x.data() + o * inner;
    for (int64_t k = 0; k < axis; ++k)
      std::copy(src, src + inner, out.data() + (o * axis + k) * inner);
  }
  return out;
}
}  // namespace detail

template <typename T>
NodePtr<T> broadcast_axis(const NodePtr<T>& a, int64_t ax, int64_t n);

// sum over one axis, e.g. sum_axis([N,C,H,W], 0) -> [C,H,W]
template <typename T>
NodePtr<T> sum_axis(const NodePtr<T>& a, int64_t ax) {
  const Shape& s = a->shape();
  TPD_CHECK(ax >= 0 && ax < s.rank());
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < ax; ++i) outer *= s[i];
  for (int64_t i = ax + 1; i < s.rank(); ++i) inner *= s[i];
  Tensor<T> flat = detail::sum_mid(a->value, outer, s[ax], inner);
  std::vector<int64_t> dims;
  for (int64_t i = 0; i < s.rank(); ++i)
    if (i != ax) dims.push_back(s[i]);
  if (dims.empty()) dims.push_back(1);
  Tensor<T> out = flat.reshaped(Shape(dims));
  int64_t n = s[ax];
  return make_op<T>("sum_axis", std::move(out), {a},
                    [ax, n](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{broadcast_axis(g, ax, n)};
                    });
}

// insert an axis of size n at position ax by repetition; adjoint of sum_axis
template <typename T>
NodePtr<T> broadcast_axis(const NodePtr<T>& a, int64_t ax, int64_t n) {
  const Shape& s = a->shape();
  TPD_CHECK(ax >= 0 && ax <= s.rank());
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < ax; ++i) outer *= s[i];
  for (int64_t i = ax; i < s.rank(); ++i) inner *= s[i];
  Tensor<T> flat = detail::repeat_mid(a->value, outer, n, inner);
  std::vector<int64_t> dims;
  for (int64_t i = 0; i < ax; ++i) dims.push_back(s[i]);
  dims.push_back(n);
  for (int64_t i = ax; i < s.rank(); ++i) dims.push_back(s[i]);
  Tensor<T> out = flat.reshaped(Shape(dims));
  return make_op<T>("broadcast_axis", std::move(out), {a},
                    [ax](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{sum_axis(g, ax)};
                    });
}

// cumulative sum along the last axis of a rank-2 tensor
template <typename T>
NodePtr<T> cumsum_cols(const NodePtr<T>& a, bool exclusive, bool reverse) {
  const Shape& s = a->shape();
  TPD_CHECK(s.rank() == 2);
  int64_t rows = s[0], cols = s[1];
  Tensor<T> out(s);
  for (int64_t r = 0; r < rows; ++r) {
    const T* src = a->value.data() + r * cols;
    T* dst = out.data() + r * cols;
    T acc = 0;
    if (!reverse) {
      for (int64_t c = 0; c < cols; ++c) {
        if (exclusive) {
          dst[c] = acc;
          acc += src[c];
        } else {
          acc += src[c];
          dst[c] = acc;
        }
      }
    } else {
      for (int64_t c = cols - 1; c >= 0; --c) {
        if (exclusive) {
          dst[c] = acc;
          acc += src[c];
        } else {
          acc += src[c];
          dst[c] = acc;
        }
      }
    }
  }
  return make_op<T>("cumsum_cols", std::move(out), {a},
                    [exclusive, reverse](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{cumsum_cols(g, exclusive, !reverse)};
                    });
}

// ---------------------------------------------------------------------------
// matmul / batched matmul
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

template <typename T>
void gemm(const T* a, int64_t am, int64_t an, bool ta, const T* b, int64_t bm, int64_t bn, bool tb,
          T* c) {
  ECMap<T> A(a, am, an), B(b, bm, bn);
  int64_t m = ta ? an : am;
  int64_t n = tb ? bm : bn;
  EMap<T> C(c, m, n);
  if (!ta && !tb)
    C.noalias() = A * B;
  else if (ta && !tb)
    C.noalias() = A.transpose() * B;
  else if (!ta && tb)
    C.noalias() = A * B.transpose();
  else
    C.noalias() = A.transpose() * B.transpose();
}
}  // namespace detail

// Batched matmul with optional transposes. Operands are rank-3 [B,M,K] or
// rank-2 [M,K] (broadcast over the batch); result is rank-3 if either operand
// is batched, else rank-2.
template <typename T>
NodePtr<T> bmm(const NodePtr<T>& a, const NodePtr<T>& b, bool ta = false, bool tb = false) {
  const Shape& sa = a->shape();
  const Shape& sb = b->shape();
  TPD_CHECK(sa.rank() == 2 || sa.rank() == 3);
  TPD_CHECK(sb.rank() == 2 || sb.rank() == 3);
  int64_t batch_a = sa.rank() == 3 ? sa[0] : 0;
  int64_t batch_b = sb.rank() == 3 ? sb[0] : 0;
  int64_t batch = std::max<int64_t>({batch_a, batch_b, 1});
  if (batch_a > 0 && batch_b > 0) TPD_CHECK(batch_a == batch_b);
  int64_t am = sa[sa.rank() - 2], an = sa[sa.rank() - 1];
  int64_t bm = sb[sb.rank() - 2], bn = sb[sb.rank() - 1];
  int64_t m = ta ? an : am, k = ta ? am : an;
  int64_t k2 = tb ? bn : bm, n = tb ? bm : bn;
  TPD_CHECK_MSG(k == k2, "bmm inner dims " << k << " vs " << k2);
  bool batched = batch_a > 0 || batch_b > 0;
  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  for (int64_t i = 0; i < batch; ++i) {
    const T* pa = a->value.data() + (batch_a > 0 ? i * am * an : 0);
    const T* pb = b->value.data() + (batch_b > 0 ? i * bm * bn : 0);
    detail::gemm(pa, am, an, ta, pb, bm, bn, tb, out.data() + i * m * n);
  }
  return make_op<T>("bmm", std::move(out), {a, b},
                    [ta, tb, batch_a, batch_b](const NodePtr<T>& self, const NodePtr<T>& g) {
                      const auto& A = self->parents[0];
                      const auto& B = self->parents[1];
                      NodePtr<T> ga = ta ? bmm(B, g, tb, true) : bmm(g, B, false, !tb);
                      NodePtr<T> gb = tb ? bmm(g, A, true, ta) : bmm(A, g, !ta, false);
                      // broadcast operands accumulate over the batch
                      if (batch_a == 0 && ga->shape().rank() == 3) ga = sum_axis(ga, 0);
                      if (batch_b == 0 && gb->shape().rank() == 3) gb = sum_axis(gb, 0);
                      return std::vector<NodePtr<T>>{ga, gb};
                    });
}

template <typename T>
NodePtr<T> matmul(const NodePtr<T>& a, const NodePtr<T>& b) {
  return bmm(a, b, false, false);
}

template <typename T>
NodePtr<T> transpose2d(const NodePtr<T>& a) {
  const Shape& s = a->shape();
  TPD_CHECK(s.rank() == 2);
  int64_t m = s[0], n = s[1];
  Tensor<T> out(Shape{n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = a->value[i * n + j];
  return make_op<T>("transpose2d", std::move(out), {a},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{transpose2d(g)};
                    });
}

// ---------------------------------------------------------------------------
// bias / channel scaling
// ---------------------------------------------------------------------------

// x:[N,F] + b:[F]
template <typename T>
NodePtr<T> add_bias_rows(const NodePtr<T>& x, const NodePtr<T>& b) {
  const Shape& s = x->shape();
  TPD_CHECK(s.rank() == 2 && b->shape().rank() == 1 && b->shape()[0] == s[1]);
  Tensor<T> out(s);
  int64_t n = s[0], f = s[1];
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < f; ++j) out[i * f + j] = x->value[i * f + j] + b->value[j];
  return make_op<T>("add_bias_rows", std::move(out), {x, b},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{g, sum_axis(g, 0)};
                    });
}

// x:[N,C,H,W] + b:[C]
template <typename T>
NodePtr<T> add_bias_nchw(const NodePtr<T>& x, const NodePtr<T>& b) {
  const Shape& s = x->shape();
  TPD_CHECK(s.rank() == 4 && b->shape().rank() == 1 && b->shape()[0] == s[1]);
  Tensor<T> out(s);
  int64_t n = s[0], c = s[1], hw = s[2] * s[3];
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T bj = b->value[j];
      const T* src = x->value.data() + (i * c + j) * hw;
      T* dst = out.data() + (i * c + j) * hw;
      for (int64_t k = 0; k < hw; ++k) dst[k] = src[k] + bj;
    }
  return make_op<T>("add_bias_nchw", std::move(out), {x, b},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      // db = sum over N,H,W
                      auto gb = sum_axis(sum_axis(sum_axis(g, 3), 2), 0);
                      return std::vector<NodePtr<T>>{g, gb};
                    });
}

// x:[N,C,H,W] * s:[N,C] (per-sample per-channel scale)
template <typename T>
NodePtr<T> scale_channels(const NodePtr<T>& x, const NodePtr<T>& s) {
  const Shape& xs = x->shape();
  TPD_CHECK(xs.rank() == 4 && s->shape().rank() == 2 && s->shape()[0] == xs[0] && s->shape()[1] == xs[1]);
  Tensor<T> out(xs);
  int64_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const T sj = s->value[i * c + j];
      const T* src = x->value.data() + (i * c + j) * hw;
      T* dst = out.data() + (i * c + j) * hw;
      for (int64_t k = 0; k < hw; ++k) dst[k] = src[k] * sj;
    }
  return make_op<T>("scale_channels", std::move(out), {x, s},
                    [](const NodePtr<T>& self, const NodePtr<T>& g) {
                      const auto& x_ = self->parents[0];
                      const auto& s_ = self->parents[1];
                      int64_t H = x_->shape()[2], W = x_->shape()[3];
                      auto s4 = broadcast_axis(broadcast_axis(s_, 2, H), 3, W);
                      auto gx = mul(g, s4);
                      auto gs = sum_axis(sum_axis(mul(g, x_), 3), 2);
                      return std::vector<NodePtr<T>>{gx, gs};
                    });
}

// ---------------------------------------------------------------------------
// im2col / col2im (convolution support)
// ---------------------------------------------------------------------------

struct Conv2dGeom {
  int64_t in_c, in_h, in_w;
  int64_t kh, kw, stride, pad;
  int64_t out_h() const { return (in_h + 2 * pad - kh) / stride + 1; }
  int64_t out_w() const { return (in_w + 2 * pad - kw) / stride + 1; }
};

namespace detail {
template <typename T>
Tensor<T> im2col_impl(const Tensor<T>& x, const Conv2dGeom& geo) {
  int64_t n = x.shape()[0];
  int64_t oh = geo.out_h(), ow = geo.out_w();
  Tensor<T> out(Shape{n, geo.in_c * geo.kh * geo.kw, oh * ow});
  for (int64_t b = 0; b < n; ++b) {
    const T* img = x.data() + b * geo.in_c * geo.in_h * geo.in_w;
    T* col = out.data() + b * geo.in_c * geo.kh * geo.kw * oh * ow;
    for (int64_t c = 0; c < geo.in_c; ++c)
      for (int64_t ki = 0; ki < geo.kh; ++ki)
        for (int64_t kj = 0; kj < geo.kw; ++kj) {
          T* dst = col + ((c * geo.kh + ki) * geo.kw + kj) * oh * ow;
          for (int64_t oy = 0; oy < oh; ++oy) {
            int64_t iy = oy * geo.stride + ki - geo.pad;
            if (iy < 0 || iy >= geo.in_h) {
              std::fill(dst + oy * ow, dst + (oy + 1) * ow, T(0));
              continue;
            }
            const T* row = img + (c * geo.in_h + iy) * geo.in_w;
            for (int64_t ox = 0; ox < ow; ++ox) {
              int64_t ix = ox * geo.stride + kj - geo.pad;
              dst[oy * ow + ox] = (ix >= 0 && ix < geo.in_w) ? row[ix] : T(0);
            }
          }
        }
  }
  return out;
}

template <typename T>
Tensor<T> col2im_impl(const Tensor<T>& cols, const Conv2dGeom& geo) {
  int64_t n = cols.shape()[0];
  int64_t oh = geo.out_h(), ow = geo.out_w();
  Tensor<T> out(Shape{n, geo.in_c, geo.in_h, geo.in_w});
  for (int64_t b = 0; b < n; ++b) {
    const T* col = cols.data() + b * geo.in_c * geo.kh * geo.kw * oh * ow;
    T* img = out.data() + b * geo.in_c * geo.in_h * geo.in_w;
    for (int64_t c = 0; c < geo.in_c; ++c)
      for (int64_t ki = 0; ki < geo.kh; ++ki)
        for (int64_t kj = 0; kj < geo.kw; ++kj) {
          const T* src = col + ((c * geo.kh + ki) * geo.kw + kj) * oh * ow;
          for (int64_t oy = 0; oy < oh; ++oy) {
            int64_t iy = oy * geo.stride + ki - geo.pad;
            if (iy < 0 || iy >= geo.in_h) continue;
            T* row = img + (c * geo.in_h + iy) * geo.in_w;
            for (int64_t ox = 0; ox < ow; ++ox) {
              int64_t ix = ox * geo.stride + kj - geo.pad;
              if (ix >= 0 && ix < geo.in_w) row[ix] += src[oy * ow + ox];
            }
          }
        }
  }
  return out;
}
}  // namespace detail

template <typename T>
NodePtr<T> col2im(const NodePtr<T>& cols, const Conv2dGeom& geo);

template <typename T>
NodePtr<T> im2col(const NodePtr<T>& x, const Conv2dGeom& geo) {
  const Shape& s = x->shape();
  TPD_CHECK(s.rank() == 4 && s[1] == geo.in_c && s[2] == geo.in_h && s[3] == geo.in_w);
  return make_op<T>("im2col", detail::im2col_impl(x->value, geo), {x},
                    [geo](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{col2im(g, geo)};
                    });
}

template <typename T>
NodePtr<T> col2im(const NodePtr<T>& cols, const Conv2dGeom& geo) {
  return make_op<T>("col2im", detail::col2im_impl(cols->value, geo), {cols},
                    [geo](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{im2col(g, geo)};
                    });
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

namespace detail {
// Half-pixel-center bilinear weights for integer-factor resizing. Shared by
// the forward op and its adjoint so the pair stays an exact transpose.
struct ResampleTap {
  int64_t i0, i1;
  double w0, w1;
};
inline ResampleTap resample_tap(int64_t out_idx, int64_t factor, int64_t in_size) {
  double src = (static_cast<double>(out_idx) + 0.5) / static_cast<double>(factor) - 0.5;
  double f = std::floor(src);
  int64_t i0 = static_cast<int64_t>(f);
  double t = src - f;
  ResampleTap tap;
  tap.i0 = std::clamp<int64_t>(i0, 0, in_size - 1);
  tap.i1 = std::clamp<int64_t>(i0 + 1, 0, in_size - 1);
  tap.w0 = 1.0 - t;
  tap.w1 = t;
  return tap;
}
}  // namespace detail

template <typename T>
NodePtr<T> upsample_bilinear_adjoint(const NodePtr<T>& g, int64_t factor, int64_t in_h, int64_t in_w);

// x:[N,C,H,W] -> [N,C,H*f,W*f]
template <typename T>
NodePtr<T> upsample_bilinear(const NodePtr<T>& x, int64_t factor) {
  const Shape& s = x->shape();
  TPD_CHECK(s.rank() == 4 && factor >= 1);
  int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  int64_t oh = h * factor, ow = w * factor;
  Tensor<T> out(Shape{n, c, oh, ow});
  for (int64_t oy = 0; oy < oh; ++oy) {
    auto ty = detail::resample_tap(oy, factor, h);
    for (int64_t ox = 0; ox < ow; ++ox) {
      auto tx = detail::resample_tap(ox, factor, w);
      for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
          const T* img = x->value.data() + (b * c + ch) * h * w;
          out[((b * c + ch) * oh + oy) * ow + ox] =
              static_cast<T>(ty.w0 * (tx.w0 * img[ty.i0 * w + tx.i0] + tx.w1 * img[ty.i0 * w + tx.i1]) +
                             ty.w1 * (tx.w0 * img[ty.i1 * w + tx.i0] + tx.w1 * img[ty.i1 * w + tx.i1]));
        }
    }
  }
  return make_op<T>("upsample_bilinear", std::move(out), {x},
                    [factor, h, w](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{upsample_bilinear_adjoint(g, factor, h, w)};
                    });
}

template <typename T>
NodePtr<T> upsample_bilinear_adjoint(const NodePtr<T>& g, int64_t factor, int64_t in_h, int64_t in_w) {
  const Shape& s = g->shape();
  TPD_CHECK(s.rank() == 4 && s[2] == in_h * factor && s[3] == in_w * factor);
  int64_t n = s[0], c = s[1], oh = s[2], ow = s[3];
  Tensor<T> out(Shape{n, c, in_h, in_w});
  for (int64_t oy = 0; oy < oh; ++oy) {
    auto ty = detail::resample_tap(oy, factor, in_h);
    for (int64_t ox = 0; ox < ow; ++ox) {
      auto tx = detail::resample_tap(ox, factor, in_w);
      for (int64_t b = 0; b < n; ++b)
        for (int64_t ch = 0; ch < c; ++ch) {
          T* img = out.data() + (b * c + ch) * in_h * in_w;
          T gv = g->value[((b * c + ch) * oh + oy) * ow + ox];
          img[ty.i0 * in_w + tx.i0] += static_cast<T>(ty.w0 * tx.w0) * gv;
          img[ty.i0 * in_w + tx.i1] += static_cast<T>(ty.w0 * tx.w1) * gv;
          img[ty.i1 * in_w + tx.i0] += static_cast<T>(ty.w1 * tx.w0) * gv;
          img[ty.i1 * in_w + tx.i1] += static_cast<T>(ty.w1 * tx.w1) * gv;
        }
    }
  }
  return make_op<T>("upsample_bilinear_adjoint", std::move(out), {g},
                    [factor](const NodePtr<T>&, const NodePtr<T>& gg) {
                      return std::vector<NodePtr<T>>{upsample_bilinear(gg, factor)};
                    });
}

// Depthwise [1 2 1]^T [1 2 1] / 16 smoothing with zero padding; symmetric
// kernel + zero pad makes the op self-adjoint.
template <typename T>
NodePtr<T> blur3x3(const NodePtr<T>& x) {
  const Shape& s = x->shape();
  TPD_CHECK(s.rank() == 4);
  int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  static const double k[3] = {0.25, 0.5, 0.25};
  Tensor<T> out(s);
  for (int64_t bc = 0; bc < n * c; ++bc) {
    const T* img = x->value.data() + bc * h * w;
    T* dst = out.data() + bc * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        double acc = 0;
        for (int64_t dy = -1; dy <= 1; ++dy) {
          int64_t yy = y + dy;
          if (yy < 0 || yy >= h) continue;
          for (int64_t dx = -1; dx <= 1; ++dx) {
            int64_t xc = xx + dx;
            if (xc < 0 || xc >= w) continue;
            acc += k[dy + 1] * k[dx + 1] * static_cast<double>(img[yy * w + xc]);
          }
        }
        dst[y * w + xx] = static_cast<T>(acc);
      }
  }
  return make_op<T>("blur3x3", std::move(out), {x},
                    [](const NodePtr<T>&, const NodePtr<T>& g) {
                      return std::vector<NodePtr<T>>{blur3x3(g)};
                    });
}

// ---------------------------------------------------------------------------
// plane_sample: bilinear lookup into a [C,N,N] feature plane at [P,2]
// coordinates in [-1,1]^2 (align-corners grid, border clamp). Backward is a
// custom kernel, so this op cannot appear inside a create_graph region.
// ---------------------------------------------------------------------------

namespace detail {
struct PlaneTap {
  int64_t x0, x1, y0, y1;
  double wx, wy;     // fractional weights toward x1/y1
  double dwx, dwy;   // d(frac)/d(coord); zero in the clamped region
};

inline PlaneTap plane_tap(double u, double v, int64_t n) {
  auto axis = [n](double coord, int64_t& i0, int64_t& i1, double& frac, double& dfrac) {
    double gx = (coord + 1.0) * 0.5 * static_cast<double>(n - 1);
    double lo = 0.0, hi = static_cast<double>(n - 1);
    bool clamped = gx <= lo || gx >= hi;
    gx = std::clamp(gx, lo, hi);
    double f = std::floor(gx);
    i0 = std::min<int64_t>(static_cast<int64_t>(f), n - 2);
    i0 = std::max<int64_t>(i0, 0);
    i1 = i0 + 1;
    frac = gx - static_cast<double>(i0);
    dfrac = clamped ? 0.0 : 0.5 * static_cast<double>(n - 1);
  };
  PlaneTap t;
  axis(u, t.x0, t.x1, t.wx, t.dwx);
  axis(v, t.y0, t.y1, t.wy, t.dwy);
  return t;
}
}  // namespace detail

template <typename T>
NodePtr<T> plane_sample(const NodePtr<T>& plane, const NodePtr<T>& uv) {
  const Shape& ps = plane->shape();
  const Shape& us = uv->shape();
  TPD_CHECK_MSG(ps.rank() == 3 && ps[1] == ps[2], "plane must be [C,N,N], got " << ps.str());
  TPD_CHECK(us.rank() == 2 && us[1] == 2);
  int64_t c = ps[0], n = ps[1], p = us[0];
  Tensor<T> out(Shape{p, c});
  for (int64_t i = 0; i < p; ++i) {
    auto t = detail::plane_tap(static_cast<double>(uv->value[i * 2]),
                               static_cast<double>(uv->value[i * 2 + 1]), n);
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* pl = plane->value.data() + ch * n * n;
      double v00 = pl[t.y0 * n + t.x0], v01 = pl[t.y0 * n + t.x1];
      double v10 = pl[t.y1 * n + t.x0], v11 = pl[t.y1 * n + t.x1];
      out[i * c + ch] = static_cast<T>((1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) +
                                       t.wy * ((1 - t.wx) * v10 + t.wx * v11));
    }
  }
  return make_op<T>(
      "plane_sample", std::move(out), {plane, uv},
      [](const NodePtr<T>& self, const NodePtr<T>& g) {
        const auto& plane_ = self->parents[0];
        const auto& uv_ = self->parents[1];
        int64_t c = plane_->shape()[0], n = plane_->shape()[1], p = uv_->shape()[0];
        Tensor<T> gplane(plane_->shape());
        Tensor<T> guv(uv_->shape());
        for (int64_t i = 0; i < p; ++i) {
          auto t = detail::plane_tap(static_cast<double>(uv_->value[i * 2]),
                                     static_cast<double>(uv_->value[i * 2 + 1]), n);
          double du = 0, dv = 0;
          for (int64_t ch = 0; ch < c; ++ch) {
            double gv = static_cast<double>(g->value[i * c + ch]);
            T* gp = gplane.data() + ch * n * n;
            gp[t.y0 * n + t.x0] += static_cast<T>((1 - t.wy) * (1 - t.wx) * gv);
            gp[t.y0 * n + t.x1] += static_cast<T>((1 - t.wy) * t.wx * gv);
            gp[t.y1 * n + t.x0] += static_cast<T>(t.wy * (1 - t.wx) * gv);
            gp[t.y1 * n + t.x1] += static_cast<T>(t.wy * t.wx * gv);
            const T* pl = plane_->value.data() + ch * n * n;
            double v00 = pl[t.y0 * n + t.x0], v01 = pl[t.y0 * n + t.x1];
            double v10 = pl[t.y1 * n + t.x0], v11 = pl[t.y1 * n + t.x1];
            du += gv * ((1 - t.wy) * (v01 - v00) + t.wy * (v11 - v10)) * t.dwx;
            dv += gv * ((1 - t.wx) * (v10 - v00) + t.wx * (v11 - v01)) * t.dwy;
          }
          guv[i * 2] = static_cast<T>(du);
          guv[i * 2 + 1] = static_cast<T>(dv);
        }
        return std::vector<NodePtr<T>>{constant(std::move(gplane)), constant(std::move(guv))};
      },
      /*create_graph_safe=*/false);
}

// ---------------------------------------------------------------------------
// grad
// ---------------------------------------------------------------------------

template <typename T>
std::vector<NodePtr<T>> grad(const NodePtr<T>& root, const std::vector<NodePtr<T>>& wrt,
                             bool create_graph = false) {
  TPD_CHECK_MSG(root->value.numel() == 1, "grad root must be scalar");
  TPD_CHECK_MSG(root->requires_grad, "grad root does not require grad");

  // iterative DFS post-order
  std::vector<NodePtr<T>> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<NodePtr<T>, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      NodePtr<T> p = node->parents[idx++];
      if (p && p->requires_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is post-order: parents before children; iterate in reverse
  std::unordered_map<Node<T>*, NodePtr<T>> gmap;
  gmap[root.get()] = constant(Tensor<T>::full(root->shape(), T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr<T>& node = *it;
    auto git = gmap.find(node.get());
    if (git == gmap.end() || !node->backward) continue;
    if (create_graph && !node->create_graph_safe)
      throw CheckError(std::string("op '") + node->op + "' does not support create_graph");
    std::vector<NodePtr<T>> pgrads = node->backward(node, git->second);
    TPD_CHECK(pgrads.size() == node->parents.size());
    for (size_t i = 0; i < pgrads.size(); ++i) {
      const NodePtr<T>& p = node->parents[i];
      if (!p || !p->requires_grad || !pgrads[i]) continue;
      TPD_CHECK_MSG(pgrads[i]->shape() == p->shape(),
                    "grad shape " << pgrads[i]->shape().str() << " vs value " << p->shape().str()
                                  << " for op " << node->op);
      auto pit = gmap.find(p.get());
      if (pit == gmap.end())
        gmap[p.get()] = pgrads[i];
      else
        pit->second = add(pit->second, pgrads[i]);
    }
  }
  std::vector<NodePtr<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = gmap.find(w.get());
    result.push_back(it != gmap.end() ? it->second : constant(Tensor<T>(w->shape())));
  }
  return result;
}

}  // namespace ag
}  // namespace tpd
