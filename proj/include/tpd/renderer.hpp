// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-pass volumetric rendering over a tri-plane field: stratified coarse
// samples, importance resampling from the coarse compositing weights, then
// standard NeRF quadrature alpha = 1 - exp(-sigma*delta) composited onto a
// black background. The last interval's delta is far - last_depth, which
// keeps constant-density transmittance exact.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tpd/autodiff.hpp"
#include "tpd/camera.hpp"
#include "tpd/triplane.hpp"

namespace tpd {

struct RenderConfig {
  int64_t resolution = 32;
  int64_t n_coarse = 48;
  int64_t n_fine = 48;
  double near = 1.5;
  double far = 3.9;
  bool jitter = false;  // false: deterministic bin-midpoint evaluation mode
};

template <typename T>
struct RaySamples {
  Tensor<T> depths;     // [R,S], strictly increasing per ray
  Tensor<T> deltas;     // [R,S], >= 0; last = far - last_depth
  Tensor<T> positions;  // [R*S,3]
};

namespace detail {
template <typename T>
void fill_positions(const RayBatch<T>& rays, const Tensor<T>& depths, Tensor<T>& positions) {
  int64_t r = depths.shape()[0], s = depths.shape()[1];
  for (int64_t i = 0; i < r; ++i)
    for (int64_t k = 0; k < s; ++k)
      for (int64_t a = 0; a < 3; ++a)
        positions[(i * s + k) * 3 + a] =
            rays.origins[i * 3 + a] + depths[i * s + k] * rays.directions[i * 3 + a];
}

template <typename T>
void fill_deltas(const Tensor<T>& depths, double far, Tensor<T>& deltas) {
  int64_t r = depths.shape()[0], s = depths.shape()[1];
  for (int64_t i = 0; i < r; ++i) {
    for (int64_t k = 0; k + 1 < s; ++k)
      deltas[i * s + k] = depths[i * s + k + 1] - depths[i * s + k];
    deltas[i * s + s - 1] = static_cast<T>(far) - depths[i * s + s - 1];
  }
}
}  // namespace detail

// One jittered sample per uniform bin of [near, far]; with rng == nullptr the
// bin midpoints are used (evaluation mode).
template <typename T>
RaySamples<T> stratified_samples(const RayBatch<T>& rays, double near, double far, int64_t n_coarse,
                                 Rng* rng) {
  TPD_CHECK_MSG(near < far, "near must be < far");
  TPD_CHECK(n_coarse >= 1);
  int64_t r = rays.origins.shape()[0];
  RaySamples<T> out{Tensor<T>(Shape{r, n_coarse}), Tensor<T>(Shape{r, n_coarse}),
                    Tensor<T>(Shape{r * n_coarse, 3})};
  double bin = (far - near) / static_cast<double>(n_coarse);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t k = 0; k < n_coarse; ++k) {
      double u = rng ? rng->uniform() : 0.5;
      out.depths[i * n_coarse + k] = static_cast<T>(near + (static_cast<double>(k) + u) * bin);
    }
  detail::fill_deltas(out.depths, far, out.deltas);
  detail::fill_positions(rays, out.depths, out.positions);
  return out;
}

template <typename T>
struct CompositeOutput {
  ag::NodePtr<T> features;  // [R,C]
  ag::NodePtr<T> weights;   // [R,S]
  ag::NodePtr<T> alpha;     // [R]
};

// sigma: [R,S] (>= 0), features: [R,S,C], deltas: [R,S] constants.
template <typename T>
CompositeOutput<T> composite(const ag::NodePtr<T>& sigma, const ag::NodePtr<T>& features,
                             const Tensor<T>& deltas) {
  const Shape& ss = sigma->shape();
  const Shape& fs = features->shape();
  TPD_CHECK(ss.rank() == 2 && fs.rank() == 3 && fs[0] == ss[0] && fs[1] == ss[1]);
  TPD_CHECK(deltas.shape() == ss);
  for (int64_t i = 0; i < sigma->value.numel(); ++i)
    TPD_CHECK_MSG(sigma->value[i] >= 0, "negative density in composite");

  auto tau = ag::mul(sigma, ag::constant(deltas));
  auto transmittance = ag::exp_(ag::neg(ag::cumsum_cols(tau, /*exclusive=*/true, /*reverse=*/false)));
  auto alpha_k = ag::add_scalar(ag::neg(ag::exp_(ag::neg(tau))), T(1));  // 1 - exp(-tau)
  auto w = ag::mul(transmittance, alpha_k);
  auto wf = ag::mul(ag::broadcast_axis(w, 2, fs[2]), features);
  CompositeOutput<T> out;
  out.features = ag::sum_axis(wf, 1);
  out.weights = w;
  out.alpha = ag::sum_axis(w, 1);
  return out;
}

// Inverse CDF of the piecewise-constant PDF proportional to per-bin weights
// over the uniform partition of [near, far]. Zero total weight falls back to
// the uniform PDF.
template <typename T>
double inverse_cdf_depth(std::span<const T> weights, double near, double far, double u) {
  int64_t s = static_cast<int64_t>(weights.size());
  double total = 0;
  for (T w : weights) {
    TPD_CHECK_MSG(w >= 0, "negative weight in inverse_cdf_depth");
    total += static_cast<double>(w);
  }
  double bin = (far - near) / static_cast<double>(s);
  if (total <= 0) return near + u * (far - near);
  double target = u * total, cum = 0;
  for (int64_t k = 0; k < s; ++k) {
    double wk = static_cast<double>(weights[static_cast<size_t>(k)]);
    if (cum + wk >= target || k == s - 1) {
      double frac = wk > 0 ? (target - cum) / wk : 0.0;
      return near + (static_cast<double>(k) + std::clamp(frac, 0.0, 1.0)) * bin;
    }
    cum += wk;
  }
  return far;
}

// Fine depths per ray, sorted. `coarse_weights` come from the coarse pass and
// index the same uniform bins used by stratified_samples.
template <typename T>
Tensor<T> hierarchical_resample(const Tensor<T>& coarse_weights, double near, double far,
                                int64_t n_fine, Rng& rng) {
  const Shape& s = coarse_weights.shape();
  TPD_CHECK(s.rank() == 2 && n_fine >= 1);
  int64_t r = s[0], nb = s[1];
  Tensor<T> fine(Shape{r, n_fine});
  for (int64_t i = 0; i < r; ++i) {
    std::span<const T> row(coarse_weights.data() + i * nb, static_cast<size_t>(nb));
    for (int64_t k = 0; k < n_fine; ++k)
      fine[i * n_fine + k] = static_cast<T>(inverse_cdf_depth(row, near, far, rng.uniform()));
    std::sort(fine.data() + i * n_fine, fine.data() + (i + 1) * n_fine);
  }
  return fine;
}

template <typename T>
struct RenderOutput {
  ag::NodePtr<T> feature_image;  // [32,H,W]; channels 0..2 are the low-res RGB
  ag::NodePtr<T> alpha;          // [H,W]
  Tensor<T> weights;             // [R,S] compositing weights (final pass)
};

template <typename T>
struct FieldRef {
  const TriPlanes<T>* planes;
  const FieldDecoder<T>* decoder;
};

namespace detail {
template <typename T>
std::pair<ag::NodePtr<T>, ag::NodePtr<T>> eval_field(const FieldRef<T>& field,
                                                     const Tensor<T>& positions, int64_t r,
                                                     int64_t s) {
  auto feats_in = query_triplane(*field.planes, ag::constant(positions));
  auto dec = field.decoder->decode(feats_in);
  auto sigma = ag::reshape(dec.density, Shape{r, s});
  auto features = ag::reshape(dec.features, Shape{r, s, kFeatureChannels});
  return {sigma, features};
}
}  // namespace detail

// Full coarse+fine pipeline for one pose. Deterministic when cfg.jitter is
// false. Rays and importance depths are treated as constants; gradients flow
// through densities and features only.
template <typename T>
RenderOutput<T> render_view(const FieldRef<T>& field, const CameraPose& pose,
                            const RenderConfig& cfg, Rng* rng = nullptr) {
  field.planes->validate();
  TPD_CHECK(cfg.n_coarse >= 1 && cfg.n_fine >= 0);
  Rng* jitter_rng = cfg.jitter ? rng : nullptr;
  if (cfg.jitter) TPD_CHECK_MSG(rng != nullptr, "jitter mode needs an rng");

  auto rays = generate_rays<T>(pose, cfg.resolution);
  int64_t r = rays.origins.shape()[0];
  RaySamples<T> coarse = stratified_samples(rays, cfg.near, cfg.far, cfg.n_coarse, jitter_rng);

  Tensor<T> depths = coarse.depths;
  if (cfg.n_fine > 0) {
    // coarse pass only steers sampling; keep it off the autodiff tape
    Tensor<T> coarse_w;
    {
      ag::NoGradGuard ng;
      auto [sigma_c, feats_c] = detail::eval_field(field, coarse.positions, r, cfg.n_coarse);
      auto comp_c = composite(sigma_c, feats_c, coarse.deltas);
      coarse_w = comp_c.weights->value;
    }
    Rng fallback(0x5eed);
    Tensor<T> fine = hierarchical_resample(coarse_w, cfg.near, cfg.far, cfg.n_fine,
                                           rng ? *rng : fallback);
    // sorted union of coarse and fine depths
    Tensor<T> merged(Shape{r, cfg.n_coarse + cfg.n_fine});
    for (int64_t i = 0; i < r; ++i)
      std::merge(coarse.depths.data() + i * cfg.n_coarse, coarse.depths.data() + (i + 1) * cfg.n_coarse,
                 fine.data() + i * cfg.n_fine, fine.data() + (i + 1) * cfg.n_fine,
                 merged.data() + i * (cfg.n_coarse + cfg.n_fine));
    depths = std::move(merged);
  }

  int64_t s = depths.shape()[1];
  Tensor<T> deltas(Shape{r, s});
  Tensor<T> positions(Shape{r * s, 3});
  detail::fill_deltas(depths, cfg.far, deltas);
  detail::fill_positions(rays, depths, positions);

  auto [sigma, features] = detail::eval_field(field, positions, r, s);
  auto comp = composite(sigma, features, deltas);

  RenderOutput<T> out;
  out.feature_image = ag::reshape(ag::transpose2d(comp.features),
                                  Shape{kFeatureChannels, cfg.resolution, cfg.resolution});
  out.alpha = ag::reshape(comp.alpha, Shape{cfg.resolution, cfg.resolution});
  out.weights = comp.weights->value;
  return out;
}

// Multiply-accumulate count of one render; scales with the depth-sample
// configuration, unlike the convolutional path.
template <typename T>
int64_t render_macs(const FieldRef<T>& field, const RenderConfig& cfg) {
  int64_t rays = cfg.resolution * cfg.resolution;
  int64_t points = rays * (cfg.n_coarse + (cfg.n_fine > 0 ? cfg.n_coarse + cfg.n_fine : 0));
  int64_t per_point = 3 * 4 * field.planes->channels()  // three bilinear gathers
                      + field.decoder->macs_per_point();
  return points * per_point;
}

}  // namespace tpd
