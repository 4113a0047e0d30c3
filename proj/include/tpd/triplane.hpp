// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tri-plane field: three axis-aligned feature planes (XY, XZ, YZ); a point's
// feature vector is the sum of one bilinear lookup per plane, and a small
// softplus-hidden MLP decodes it to density (softplus) and 32 feature
// channels (sigmoid; channels 0..2 are RGB).

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "tpd/autodiff.hpp"
#include "tpd/nn.hpp"
#include "tpd/rng.hpp"

namespace tpd {

inline constexpr int64_t kFeatureChannels = 32;  // render feature channels, RGB first

struct FieldConfig {
  int64_t plane_resolution = 64;
  int64_t plane_channels = 32;
  int64_t decoder_hidden = 64;
  double bound = 1.0;  // half-extent of the scene box mapped to [-1,1]^3
};

template <typename T>
struct TriPlanes {
  std::array<ag::NodePtr<T>, 3> planes;  // XY, XZ, YZ, each [C,N,N]
  double bound = 1.0;

  int64_t resolution() const { return planes[0]->shape()[1]; }
  int64_t channels() const { return planes[0]->shape()[0]; }

  void validate() const {
    TPD_CHECK(bound > 0);
    const Shape& s0 = planes[0]->shape();
    TPD_CHECK(s0.rank() == 3 && s0[1] == s0[2]);
    for (const auto& p : planes) {
      TPD_CHECK_MSG(p->shape() == s0, "planes must share N and C");
      TPD_CHECK_MSG(p->value.all_finite(), "plane has non-finite entries");
    }
  }
};

// positions: [P,3] world coords. Out-of-bounds lookups clamp to the border.
template <typename T>
ag::NodePtr<T> query_triplane(const TriPlanes<T>& tp, const ag::NodePtr<T>& positions) {
  const Shape& s = positions->shape();
  TPD_CHECK(s.rank() == 2 && s[1] == 3);
  auto scaled = ag::mul_scalar(positions, static_cast<T>(1.0 / tp.bound));
  auto xy = ag::slice_axis(scaled, 1, 0, 2);
  auto xz = ag::concat_axis(ag::slice_axis(scaled, 1, 0, 1), ag::slice_axis(scaled, 1, 2, 3), 1);
  auto yz = ag::slice_axis(scaled, 1, 1, 3);
  auto f = ag::plane_sample(tp.planes[0], xy);
  f = ag::add(f, ag::plane_sample(tp.planes[1], xz));
  f = ag::add(f, ag::plane_sample(tp.planes[2], yz));
  return f;
}

// Lightweight field decoder: C -> hidden (softplus) -> 1 + 32.
template <typename T>
struct FieldDecoder {
  ag::NodePtr<T> w1, b1;  // [H,C], [H]
  ag::NodePtr<T> w2, b2;  // [1+32,H], [1+32]

  void init_random(nn::ParamStore<T>& store, const std::string& name, int64_t channels,
                   int64_t hidden, Rng& rng) {
    w1 = store.add(name + ".w1", rng.normal_tensor<T>(Shape{hidden, channels},
                                                      std::sqrt(2.0 / double(channels))));
    b1 = store.add(name + ".b1", Tensor<T>(Shape{hidden}));
    w2 = store.add(name + ".w2", rng.normal_tensor<T>(Shape{1 + kFeatureChannels, hidden},
                                                      1.0 / std::sqrt(double(hidden))));
    b2 = store.add(name + ".b2", Tensor<T>(Shape{1 + kFeatureChannels}));
  }

  struct Decoded {
    ag::NodePtr<T> density;   // [P,1], nonnegative
    ag::NodePtr<T> features;  // [P,32] in (0,1), channels 0..2 are RGB
  };

  Decoded decode(const ag::NodePtr<T>& features_in) const {
    const Shape& s = features_in->shape();
    TPD_CHECK(s.rank() == 2 && s[1] == w1->shape()[1]);
    auto h = ag::softplus(ag::add_bias_rows(ag::bmm(features_in, w1, false, true), b1));
    auto raw = ag::add_bias_rows(ag::bmm(h, w2, false, true), b2);
    auto density = ag::softplus(ag::slice_axis(raw, 1, 0, 1));
    auto feats = ag::sigmoid(ag::slice_axis(raw, 1, 1, 1 + kFeatureChannels));
    return {density, feats};
  }

  int64_t macs_per_point() const {
    return w1->shape()[0] * w1->shape()[1] + w2->shape()[0] * w2->shape()[1];
  }
};

// Single-point decode result.
struct FieldSample {
  double density = 0;
  std::array<double, kFeatureChannels> features{};
};

template <typename T>
FieldSample decode_field_point(const FieldDecoder<T>& dec, const std::vector<T>& feature_vec) {
  ag::NoGradGuard ng;
  Tensor<T> f(Shape{1, static_cast<int64_t>(feature_vec.size())});
  for (size_t i = 0; i < feature_vec.size(); ++i) f[static_cast<int64_t>(i)] = feature_vec[i];
  auto d = dec.decode(ag::constant(std::move(f)));
  FieldSample out;
  out.density = static_cast<double>(d.density->value[0]);
  for (int64_t c = 0; c < kFeatureChannels; ++c)
    out.features[static_cast<size_t>(c)] = static_cast<double>(d.features->value[c]);
  return out;
}

// ---------------------------------------------------------------------------
// Procedural teacher field: the latent deterministically parameterizes K
// colored Gaussian blobs. Blob i occupies plane channel i; the shared decoder
// approximates sigma = softplus(g(v)) with g = softplus^{-1}(exp(v)) built
// from a fixed softplus knot bank, so the decoded density tracks the analytic
// Gaussian sum A*exp(-d^2/2r^2).
// ---------------------------------------------------------------------------

struct Blob {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.1;
  double amplitude = 15.0;
  std::array<double, 3> color{};
  double phase = 0.0;  // seeds the non-RGB feature pattern
};

struct BlobScene {
  std::vector<Blob> blobs;

  double density(const Eigen::Vector3d& x) const {
    double s = 0;
    for (const Blob& b : blobs)
      s += b.amplitude * std::exp(-(x - b.center).squaredNorm() / (2 * b.radius * b.radius));
    return s;
  }
  double peak_amplitude() const {
    double a = 0;
    for (const Blob& b : blobs) a = std::max(a, b.amplitude);
    return a;
  }
};

namespace blobfield {

inline constexpr double kFloor = 8.0;        // density floor exp(-kFloor) per blob
inline constexpr double kAmpMin = 12.0;
inline constexpr double kAmpMax = 25.0;
inline constexpr int kKnots = 28;
inline constexpr double kRampLo = -1.386;    // ramp thresholds in log-density
inline constexpr double kRampHi = 0.0;
inline constexpr double kRampSharp = 5.0;
inline constexpr double kFeatureBias = -2.0;

// softplus^{-1}(exp(v))
inline double g_of_v(double v) {
  double ev = std::exp(v);
  if (ev > 30) return ev;
  if (ev < 1e-8) return v;
  return std::log(std::expm1(ev));
}

struct KnotBank {
  std::vector<double> t, k, c;
  double bias = 0;
};

// Fixed softplus-knot approximation of g on [-kFloor, log(kAmpMax)]; knots are
// spaced to equalize sqrt(g'') mass per segment, then the whole bank is
// shifted by the median excess to cancel the softplus smoothing bias.
inline KnotBank build_knot_bank(int n_knots = kKnots) {
  const double vlo = -kFloor, vhi = std::log(kAmpMax) + 0.05;
  const int grid = 4001;
  std::vector<double> vs(grid), gv(grid);
  for (int i = 0; i < grid; ++i) {
    vs[static_cast<size_t>(i)] = vlo + (vhi - vlo) * i / (grid - 1);
    gv[static_cast<size_t>(i)] = g_of_v(vs[static_cast<size_t>(i)]);
  }
  double h = vs[1] - vs[0];
  std::vector<double> cum(grid, 0.0);
  auto gpp = [&](int i) {
    int a = std::clamp(i, 1, grid - 2);
    return std::max((gv[static_cast<size_t>(a + 1)] - 2 * gv[static_cast<size_t>(a)] +
                     gv[static_cast<size_t>(a - 1)]) / (h * h),
                    1e-9);
  };
  for (int i = 1; i < grid; ++i)
    cum[static_cast<size_t>(i)] =
        cum[static_cast<size_t>(i - 1)] + 0.5 * (std::sqrt(gpp(i)) + std::sqrt(gpp(i - 1))) * h;
  std::vector<double> knots(static_cast<size_t>(n_knots));
  for (int j = 0; j < n_knots; ++j) {
    double target = cum.back() * j / (n_knots - 1);
    auto it = std::lower_bound(cum.begin(), cum.end(), target);
    size_t hi_i = std::min<size_t>(static_cast<size_t>(it - cum.begin()), grid - 1);
    size_t lo_i = hi_i > 0 ? hi_i - 1 : 0;
    double frac = (cum[hi_i] - cum[lo_i]) > 0 ? (target - cum[lo_i]) / (cum[hi_i] - cum[lo_i]) : 0.0;
    knots[static_cast<size_t>(j)] = vs[lo_i] + frac * (vs[hi_i] - vs[lo_i]);
  }

  KnotBank bank;
  double prev_slope = 0.0;
  for (int j = 0; j + 1 < n_knots; ++j) {
    double m = (g_of_v(knots[static_cast<size_t>(j + 1)]) - g_of_v(knots[static_cast<size_t>(j)])) /
               (knots[static_cast<size_t>(j + 1)] - knots[static_cast<size_t>(j)]);
    double dm = m - prev_slope;
    prev_slope = m;
    double kj = std::max(dm * 14.0, 8.0);
    bank.t.push_back(knots[static_cast<size_t>(j)]);
    bank.k.push_back(kj);
    bank.c.push_back(dm / kj);
  }
  bank.bias = g_of_v(knots[0]);

  // median bias correction over the working range
  const int m = 2000;
  std::vector<double> excess(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double v = (vlo + 0.5) + (vhi - (vlo + 0.5)) * i / (m - 1);
    double acc = bank.bias;
    for (size_t j = 0; j < bank.t.size(); ++j)
      acc += bank.c[j] * ag::stable_softplus(bank.k[j] * (v - bank.t[j]));
    excess[static_cast<size_t>(i)] = acc - g_of_v(v);
  }
  std::nth_element(excess.begin(), excess.begin() + m / 2, excess.end());
  bank.bias -= excess[static_cast<size_t>(m / 2)];
  return bank;
}

inline double squash01(double x) { return ag::stable_sigmoid(x); }

// Fixed reference blob present in every anchored scene. Camera pose is not
// identifiable from images of a lone latent-positioned blob (scene position
// and viewpoint are confounded); a marker at a known world position makes the
// pose observable, the way canonical structure does for face datasets.
inline Blob anchor_blob() {
  Blob b;
  b.center = Eigen::Vector3d(0.3, -0.45, 0.0);
  b.radius = 0.06;
  b.amplitude = 22.0;
  b.color = {0.95, 0.85, 0.30};
  b.phase = 0.777;
  return b;
}

// Deterministic latent -> blob parameters. Blobs beyond the first sit on a
// ring in the xz plane so their supports never overlap materially; free-box
// centers that land near the anchor are mirrored away from it.
inline BlobScene blobs_from_latent(const std::vector<double>& z, int num_blobs,
                                   bool include_anchor = true) {
  TPD_CHECK_MSG(z.size() >= 6, "procedural field needs d_z >= 6");
  TPD_CHECK(num_blobs >= 1);
  BlobScene scene;
  int dz = static_cast<int>(z.size());
  for (int i = 0; i < num_blobs; ++i) {
    auto zat = [&](int j) { return z[static_cast<size_t>((6 * i + j) % dz)]; };
    Blob b;
    if (num_blobs == 1) {
      b.center = 0.4 * Eigen::Vector3d(std::tanh(zat(0)), std::tanh(zat(1)), std::tanh(zat(2)));
      if (include_anchor && (b.center - anchor_blob().center).norm() < 0.38) b.center = -b.center;
    } else {
      double theta = M_PI / 4 + 2.0 * M_PI * i / num_blobs + 0.25 * std::tanh(zat(0));
      double rho = 0.38 + 0.08 * squash01(zat(1));
      b.center = Eigen::Vector3d(rho * std::cos(theta), 0.2 * std::tanh(zat(2)),
                                 rho * std::sin(theta));
    }
    b.radius = 0.08 + (num_blobs == 1 ? 0.04 : 0.03) * squash01(zat(3));
    b.amplitude = kAmpMin + (kAmpMax - kAmpMin) * squash01(zat(4));
    b.phase = zat(5);
    for (int c = 0; c < 3; ++c) b.color[static_cast<size_t>(c)] = 0.5 + 0.45 * std::sin(b.phase + 2.094 * c);
    scene.blobs.push_back(b);
  }
  if (include_anchor) scene.blobs.push_back(anchor_blob());
  return scene;
}

inline double feature_pattern(const Blob& b, int channel) {
  return 0.5 + 0.45 * std::sin(1.7 * b.phase + 0.9 * (channel + 3));
}

}  // namespace blobfield

// Planes for a blob scene: channel i of the XY plane carries
// log A_i - ((x-cx)^2+(y-cy)^2)/(2 r_i^2); XZ and YZ each carry half of the
// z term, so the three lookups sum to v_i = log A_i - d^2/(2 r_i^2).
template <typename T>
TriPlanes<T> blob_triplanes(const BlobScene& scene, const FieldConfig& cfg) {
  int64_t n = cfg.plane_resolution, c = cfg.plane_channels;
  TPD_CHECK_MSG(static_cast<int64_t>(scene.blobs.size()) <= c,
                "more blobs than plane channels");
  std::array<Tensor<T>, 3> planes{Tensor<T>(Shape{c, n, n}), Tensor<T>(Shape{c, n, n}),
                                  Tensor<T>(Shape{c, n, n})};
  // grid value at index i: -1 + 2i/(n-1), scaled by bound to world coords
  auto grid = [&](int64_t i) { return cfg.bound * (-1.0 + 2.0 * double(i) / double(n - 1)); };
  for (size_t bi = 0; bi < scene.blobs.size(); ++bi) {
    const Blob& b = scene.blobs[bi];
    double inv2r2 = 1.0 / (2.0 * b.radius * b.radius);
    double loga = std::log(b.amplitude);
    for (int64_t row = 0; row < n; ++row)
      for (int64_t col = 0; col < n; ++col) {
        // plane[ch][row][col]: row indexes the second coord, col the first
        double u = grid(col), v = grid(row);
        int64_t at = (static_cast<int64_t>(bi) * n + row) * n + col;
        double dxy = (u - b.center.x()) * (u - b.center.x()) + (v - b.center.y()) * (v - b.center.y());
        planes[0][at] = static_cast<T>(loga - dxy * inv2r2);
        double dz2 = (v - b.center.z()) * (v - b.center.z());
        planes[1][at] = static_cast<T>(-dz2 * inv2r2 * 0.5);  // (x,z) lookup, z is second coord
        planes[2][at] = static_cast<T>(-dz2 * inv2r2 * 0.5);  // (y,z) lookup
      }
  }
  TriPlanes<T> tp;
  tp.bound = cfg.bound;
  for (int i = 0; i < 3; ++i) tp.planes[static_cast<size_t>(i)] = ag::constant(std::move(planes[static_cast<size_t>(i)]));
  return tp;
}

// Constructed decoder weights realizing the blob field. Built for exactly
// `num_blobs` per-blob channels (unused channels must not feed the knot
// bank), and latent-independent: per-blob amplitudes live in the planes.
template <typename T>
FieldDecoder<T> make_procedural_decoder(nn::ParamStore<T>& store, const std::string& name,
                                        const FieldConfig& cfg, int num_blobs) {
  namespace bf = blobfield;
  int64_t units_per_blob = bf::kKnots - 1 + 2;
  TPD_CHECK_MSG(num_blobs * units_per_blob <= cfg.decoder_hidden,
                "decoder_hidden too small: need " << num_blobs * units_per_blob);
  TPD_CHECK(num_blobs >= 1 && num_blobs <= cfg.plane_channels);
  bf::KnotBank bank = bf::build_knot_bank();

  int64_t hid = cfg.decoder_hidden, ch = cfg.plane_channels;
  Tensor<T> w1(Shape{hid, ch}), b1(Shape{hid});
  Tensor<T> w2(Shape{1 + kFeatureChannels, hid}), b2(Shape{1 + kFeatureChannels});

  for (int blob = 0; blob < num_blobs; ++blob) {
    int64_t base = blob * units_per_blob;
    for (size_t j = 0; j < bank.t.size(); ++j) {
      int64_t u = base + static_cast<int64_t>(j);
      w1[u * ch + blob] = static_cast<T>(bank.k[j]);
      b1[u] = static_cast<T>(-bank.k[j] * bank.t[j]);
      w2[0 * hid + u] = static_cast<T>(bank.c[j]);
    }
    // two softplus units form the saturating in-blob indicator ramp
    int64_t ra = base + static_cast<int64_t>(bank.t.size());
    int64_t rb = ra + 1;
    w1[ra * ch + blob] = static_cast<T>(bf::kRampSharp);
    b1[ra] = static_cast<T>(-bf::kRampSharp * bf::kRampLo);
    w1[rb * ch + blob] = static_cast<T>(bf::kRampSharp);
    b1[rb] = static_cast<T>(-bf::kRampSharp * bf::kRampHi);
  }
  // density bias: floor once, plus one (bias+floor) lift per blob channel
  b2[0] = static_cast<T>(-bf::kFloor + num_blobs * (bank.bias + bf::kFloor));
  for (int64_t f = 0; f < kFeatureChannels; ++f) b2[1 + f] = static_cast<T>(bf::kFeatureBias);

  FieldDecoder<T> dec;
  dec.w1 = store.add(name + ".w1", std::move(w1), /*trainable=*/false);
  dec.b1 = store.add(name + ".b1", std::move(b1), false);
  dec.w2 = store.add(name + ".w2", std::move(w2), false);
  dec.b2 = store.add(name + ".b2", std::move(b2), false);
  return dec;
}

// The procedural teacher field: planes + analytic scene for one latent.
template <typename T>
struct ProceduralField {
  TriPlanes<T> planes;
  BlobScene scene;
};

template <typename T>
ProceduralField<T> procedural_triplanes(const std::vector<double>& z, const FieldConfig& cfg,
                                        int num_blobs, bool include_anchor = true) {
  BlobScene scene = blobfield::blobs_from_latent(z, num_blobs, include_anchor);
  return {blob_triplanes<T>(scene, cfg), scene};
}

// Per-scene color rows of the output layer (the knot/ramp rows are scene
// independent; colors ride on the ramp units).
template <typename T>
void set_procedural_colors(FieldDecoder<T>& dec, const BlobScene& scene, const FieldConfig& cfg) {
  namespace bf = blobfield;
  int64_t hid = cfg.decoder_hidden;
  int64_t units_per_blob = bf::kKnots - 1 + 2;
  double ramp_gain = bf::kRampSharp * (bf::kRampHi - bf::kRampLo);
  Tensor<T>& w2 = dec.w2->value;
  for (size_t bi = 0; bi < scene.blobs.size(); ++bi) {
    const Blob& b = scene.blobs[bi];
    int64_t ra = static_cast<int64_t>(bi) * units_per_blob + (bf::kKnots - 1);
    int64_t rb = ra + 1;
    for (int64_t f = 0; f < kFeatureChannels; ++f) {
      double target = f < 3 ? b.color[static_cast<size_t>(f)] : bf::feature_pattern(b, static_cast<int>(f));
      target = std::clamp(target, 0.02, 0.98);
      double logit = std::log(target / (1.0 - target));
      double gain = (logit - bf::kFeatureBias) / ramp_gain;
      w2[(1 + f) * hid + ra] = static_cast<T>(gain);
      w2[(1 + f) * hid + rb] = static_cast<T>(-gain);
    }
  }
}

}  // namespace tpd
