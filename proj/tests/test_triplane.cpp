// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "tpd/triplane.hpp"

using namespace tpd;
using ag::NodePtr;

namespace {

TriPlanes<double> random_planes(Rng& rng, int64_t c, int64_t n, double bound = 1.0) {
  TriPlanes<double> tp;
  tp.bound = bound;
  for (int i = 0; i < 3; ++i)
    tp.planes[static_cast<size_t>(i)] = ag::param(rng.normal_tensor<double>(Shape{c, n, n}));
  return tp;
}

// independent 4-corner bilinear oracle (clamped, align-corners grid)
double bilinear_oracle(const Tensor<double>& plane, int64_t ch, double u, double v) {
  int64_t n = plane.shape()[1];
  auto idx = [&](double coord) {
    double gx = (coord + 1.0) / 2.0 * double(n - 1);
    return std::clamp(gx, 0.0, double(n - 1));
  };
  double gx = idx(u), gy = idx(v);
  int64_t x0 = std::min<int64_t>(int64_t(std::floor(gx)), n - 2);
  int64_t y0 = std::min<int64_t>(int64_t(std::floor(gy)), n - 2);
  double fx = gx - double(x0), fy = gy - double(y0);
  auto at = [&](int64_t y, int64_t x) { return plane[(ch * n + y) * n + x]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

double query_oracle(const TriPlanes<double>& tp, double x, double y, double z, int64_t ch) {
  double u = x / tp.bound, v = y / tp.bound, w = z / tp.bound;
  return bilinear_oracle(tp.planes[0]->value, ch, u, v) +
         bilinear_oracle(tp.planes[1]->value, ch, u, w) +
         bilinear_oracle(tp.planes[2]->value, ch, v, w);
}

}  // namespace

TEST_CASE("query at a shared grid node sums the stored vectors", "[triplane]") {
  Rng rng(21);
  const int64_t n = 8, c = 4;
  auto tp = random_planes(rng, c, n);
  // grid node index 5 on each axis -> coord -1 + 2*5/7
  double g5 = -1.0 + 2.0 * 5 / (n - 1), g2 = -1.0 + 2.0 * 2 / (n - 1), g3 = -1.0 + 2.0 * 3 / (n - 1);
  Tensor<double> pos(Shape{1, 3}, {g5, g2, g3});
  auto out = query_triplane(tp, ag::constant(pos));
  for (int64_t ch = 0; ch < c; ++ch) {
    double expect = tp.planes[0]->value[(ch * n + 2) * n + 5] +   // XY at (x=5, y=2)
                    tp.planes[1]->value[(ch * n + 3) * n + 5] +   // XZ at (x=5, z=3)
                    tp.planes[2]->value[(ch * n + 3) * n + 2];    // YZ at (y=2, z=3)
    CHECK(out->value[ch] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("all-zero planes give the zero vector", "[triplane]") {
  TriPlanes<double> tp;
  tp.bound = 1.0;
  for (int i = 0; i < 3; ++i) tp.planes[static_cast<size_t>(i)] = ag::constant(Tensor<double>(Shape{4, 8, 8}));
  Rng rng(22);
  auto pos = ag::constant(rng.uniform_tensor<double>(Shape{16, 3}, -1.5, 1.5));
  auto out = query_triplane(tp, pos);
  for (int64_t i = 0; i < out->value.numel(); ++i) CHECK(out->value[i] == 0.0);
}

TEST_CASE("query matches the brute-force bilinear oracle", "[triplane]") {
  Rng rng(23);
  auto tp = random_planes(rng, 6, 16, 1.3);
  const int64_t p = 10000;
  Tensor<double> pos = rng.uniform_tensor<double>(Shape{p, 3}, -1.6, 1.6);  // includes clamped region
  auto out = query_triplane(tp, ag::constant(pos));
  double worst = 0;
  for (int64_t i = 0; i < p; ++i)
    for (int64_t ch = 0; ch < 6; ++ch)
      worst = std::max(worst, std::abs(out->value[i * 6 + ch] -
                                       query_oracle(tp, pos[i * 3], pos[i * 3 + 1], pos[i * 3 + 2], ch)));
  CHECK(worst < 1e-6);

  // the spec's named case: a cell midpoint
  int64_t n = 16;
  double mid = -1.0 + 2.0 * 3.5 / double(n - 1);
  Tensor<double> pm(Shape{1, 3}, {mid * 1.3, mid * 1.3, mid * 1.3});
  auto om = query_triplane(tp, ag::constant(pm));
  CHECK(om->value[0] == Catch::Approx(query_oracle(tp, pm[0], pm[1], pm[2], 0)).margin(1e-6));
}

TEST_CASE("query is linear in the plane contents", "[triplane]") {
  Rng rng(24);
  auto a = random_planes(rng, 3, 12);
  auto b = random_planes(rng, 3, 12);
  double alpha = 0.37, beta = -1.21;
  TriPlanes<double> mix;
  mix.bound = 1.0;
  for (int i = 0; i < 3; ++i) {
    Tensor<double> m(Shape{3, 12, 12});
    for (int64_t j = 0; j < m.numel(); ++j)
      m[j] = alpha * a.planes[static_cast<size_t>(i)]->value[j] + beta * b.planes[static_cast<size_t>(i)]->value[j];
    mix.planes[static_cast<size_t>(i)] = ag::constant(std::move(m));
  }
  auto pos = ag::constant(rng.uniform_tensor<double>(Shape{64, 3}, -1.2, 1.2));
  auto qm = query_triplane(mix, pos);
  auto qa = query_triplane(a, pos);
  auto qb = query_triplane(b, pos);
  for (int64_t i = 0; i < qm->value.numel(); ++i)
    CHECK(std::abs(qm->value[i] - (alpha * qa->value[i] + beta * qb->value[i])) < 1e-10);
}

TEST_CASE("query gradients match finite differences", "[triplane]") {
  Rng rng(25);
  auto tp = random_planes(rng, 2, 6);
  auto pos = ag::param(rng.uniform_tensor<double>(Shape{5, 3}, -0.9, 0.9));
  Rng wrng(88);
  auto w = ag::constant(wrng.normal_tensor<double>(Shape{5, 2}));
  auto build = [&]() { return ag::sum_all(ag::mul(query_triplane(tp, pos), w)); };
  std::vector<NodePtr<double>> leaves{tp.planes[0], tp.planes[1], tp.planes[2], pos};
  CHECK(testutil::gradcheck<double>(build, leaves, 1e-6, 60) < 1e-4);
}

TEST_CASE("decoder: zero features through zero final layer", "[triplane]") {
  Rng rng(26);
  nn::ParamStore<double> store;
  FieldDecoder<double> dec;
  dec.init_random(store, "dec", 8, 16, rng);
  // zero the final layer
  for (int64_t i = 0; i < dec.w2->value.numel(); ++i) dec.w2->value[i] = 0;
  for (int64_t i = 0; i < dec.b2->value.numel(); ++i) dec.b2->value[i] = 0;
  FieldSample s = decode_field_point(dec, std::vector<double>(8, 0.0));
  CHECK(s.density == Catch::Approx(std::log(2.0)));
  for (int c = 0; c < 3; ++c) CHECK(s.features[static_cast<size_t>(c)] == Catch::Approx(0.5));
}

TEST_CASE("decoder: density nonnegative, outputs deterministic", "[triplane]") {
  Rng rng(27);
  nn::ParamStore<double> store;
  FieldDecoder<double> dec;
  dec.init_random(store, "dec", 16, 32, rng);
  auto feats = ag::constant(rng.normal_tensor<double>(Shape{10000, 16}, 3.0));
  auto out = dec.decode(feats);
  for (int64_t i = 0; i < out.density->value.numel(); ++i) CHECK(out.density->value[i] >= 0.0);
  auto out2 = dec.decode(feats);
  CHECK(bitwise_equal(out.density->value, out2.density->value));
  CHECK(bitwise_equal(out.features->value, out2.features->value));
}

TEST_CASE("procedural planes are bit-identical for the same latent", "[triplane]") {
  FieldConfig cfg;
  std::vector<double> z{0.3, -1.2, 0.8, 0.1, -0.4, 2.0, 0.9, -0.7};
  auto a = procedural_triplanes<float>(z, cfg, 1);
  auto b = procedural_triplanes<float>(z, cfg, 1);
  REQUIRE(a.scene.blobs.size() == 2);  // latent blob + anchor
  for (int i = 0; i < 3; ++i)
    CHECK(bitwise_equal(a.planes.planes[static_cast<size_t>(i)]->value, b.planes.planes[static_cast<size_t>(i)]->value));
  CHECK(a.scene.blobs[0].center == b.scene.blobs[0].center);
}

namespace {
double field_density(const TriPlanes<double>& tp, const FieldDecoder<double>& dec,
                     const Eigen::Vector3d& x) {
  Tensor<double> pos(Shape{1, 3}, {x.x(), x.y(), x.z()});
  auto feats = query_triplane(tp, ag::constant(pos));
  auto out = dec.decode(feats);
  return out.density->value[0];
}
}  // namespace

TEST_CASE("procedural blob density falls off from the center", "[triplane]") {
  FieldConfig cfg;
  std::vector<double> z(8, 0.0);  // tanh(0)=0 -> blob at the origin
  auto field = procedural_triplanes<double>(z, cfg, 1, /*include_anchor=*/false);
  nn::ParamStore<double> store;
  auto dec = make_procedural_decoder<double>(store, "dec", cfg, 1);
  set_procedural_colors(dec, field.scene, cfg);
  const Blob& b = field.scene.blobs[0];
  CHECK(b.center.norm() < 1e-12);
  double at_center = field_density(field.planes, dec, b.center);
  double at_2r = field_density(field.planes, dec, b.center + Eigen::Vector3d(2 * b.radius, 0, 0));
  CHECK(at_center > at_2r);
  CHECK(at_center > 0.5 * b.amplitude);
}

TEST_CASE("procedural field matches the analytic Gaussian-sum oracle", "[triplane]") {
  FieldConfig cfg;
  Rng rng(31);
  for (int num_blobs : {1, 2}) {
    for (bool anchor : {false, true}) {
      std::vector<double> z;
      for (int i = 0; i < 12; ++i) z.push_back(rng.normal());
      FieldConfig trial_cfg = cfg;
      int channels = num_blobs + (anchor ? 1 : 0);
      if (channels > 2) trial_cfg.decoder_hidden = 96;
      auto field = procedural_triplanes<double>(z, trial_cfg, num_blobs, anchor);
      nn::ParamStore<double> store;
      auto dec = make_procedural_decoder<double>(store, "dec", trial_cfg, channels);
      set_procedural_colors(dec, field.scene, trial_cfg);
      // relative error floored at 1% of the peak amplitude: below that level
      // the field is considered empty by construction
      double floor = 0.01 * field.scene.peak_amplitude();
      double worst = 0;
      for (int i = 0; i < 100; ++i) {
        Eigen::Vector3d x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        double got = field_density(field.planes, dec, x);
        double want = field.scene.density(x);
        worst = std::max(worst, std::abs(got - want) / std::max(want, floor));
      }
      INFO("blobs=" << num_blobs << " anchor=" << anchor);
      CHECK(worst < 0.10);
    }
  }
}

TEST_CASE("procedural colors decode inside the blob", "[triplane]") {
  FieldConfig cfg;
  std::vector<double> z{0.2, -0.5, 0.4, 0.0, 1.0, 0.7, 0.0, 0.0};
  auto field = procedural_triplanes<double>(z, cfg, 1, /*include_anchor=*/false);
  nn::ParamStore<double> store;
  auto dec = make_procedural_decoder<double>(store, "dec", cfg, 1);
  set_procedural_colors(dec, field.scene, cfg);
  const Blob& b = field.scene.blobs[0];
  Tensor<double> pos(Shape{1, 3}, {b.center.x(), b.center.y(), b.center.z()});
  auto out = dec.decode(query_triplane(field.planes, ag::constant(pos)));
  for (int c = 0; c < 3; ++c)
    CHECK(out.features->value[c] == Catch::Approx(b.color[static_cast<size_t>(c)]).margin(0.02));
}
