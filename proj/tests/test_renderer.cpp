// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "tpd/renderer.hpp"

using namespace tpd;
using ag::NodePtr;

namespace {
RayBatch<double> unit_rays(int64_t n) {
  RayBatch<double> rays{Tensor<double>(Shape{n, 3}), Tensor<double>(Shape{n, 3})};
  for (int64_t i = 0; i < n; ++i) rays.directions[i * 3 + 2] = 1.0;
  return rays;
}
}  // namespace

TEST_CASE("stratified midpoints hit the bin centers", "[renderer]") {
  auto rays = unit_rays(2);
  auto s = stratified_samples(rays, 0.0, 1.0, 4, nullptr);
  const double expect[4] = {0.125, 0.375, 0.625, 0.875};
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t k = 0; k < 4; ++k) CHECK(s.depths[r * 4 + k] == Catch::Approx(expect[k]));
  // deltas: diffs then far - last
  CHECK(s.deltas[0] == Catch::Approx(0.25));
  CHECK(s.deltas[3] == Catch::Approx(0.125));
  // positions = origin + t*dir
  CHECK(s.positions[2] == Catch::Approx(0.125));
}

TEST_CASE("stratified jitter stays inside its bin", "[renderer]") {
  auto rays = unit_rays(8);
  Rng rng(5);
  auto s = stratified_samples(rays, 1.5, 3.9, 16, &rng);
  double bin = (3.9 - 1.5) / 16;
  for (int64_t r = 0; r < 8; ++r)
    for (int64_t k = 0; k < 16; ++k) {
      double d = s.depths[r * 16 + k];
      CHECK(d >= 1.5 + k * bin);
      CHECK(d <= 1.5 + (k + 1) * bin);
    }
}

TEST_CASE("stratified rejects bad ranges", "[renderer]") {
  auto rays = unit_rays(1);
  CHECK_THROWS_AS(stratified_samples(rays, 2.0, 2.0, 4, nullptr), CheckError);
}

TEST_CASE("composite: empty space yields zeros", "[renderer]") {
  auto sigma = ag::constant(Tensor<double>(Shape{3, 5}));
  Rng rng(6);
  auto feats = ag::constant(rng.uniform_tensor<double>(Shape{3, 5, 4}, 0, 1));
  Tensor<double> deltas = Tensor<double>::full(Shape{3, 5}, 0.2);
  auto out = composite(sigma, feats, deltas);
  for (int64_t i = 0; i < out.features->value.numel(); ++i) CHECK(out.features->value[i] == 0.0);
  for (int64_t i = 0; i < out.weights->value.numel(); ++i) CHECK(out.weights->value[i] == 0.0);
}

TEST_CASE("composite: opaque sample captures full weight", "[renderer]") {
  auto sigma = ag::constant(Tensor<double>(Shape{1, 1}, {500.0}));
  auto feats = ag::constant(Tensor<double>(Shape{1, 1, 2}, {0.7, 0.3}));
  Tensor<double> deltas = Tensor<double>::full(Shape{1, 1}, 0.1);  // sigma*delta = 50
  auto out = composite(sigma, feats, deltas);
  CHECK(std::abs(out.weights->value[0] - 1.0) < 1e-6);
  CHECK(out.features->value[0] == Catch::Approx(0.7).margin(1e-6));
  CHECK(out.features->value[1] == Catch::Approx(0.3).margin(1e-6));
}

TEST_CASE("composite rejects negative density", "[renderer]") {
  auto sigma = ag::constant(Tensor<double>(Shape{1, 2}, {0.5, -0.1}));
  auto feats = ag::constant(Tensor<double>(Shape{1, 2, 1}, {1.0, 1.0}));
  Tensor<double> deltas = Tensor<double>::full(Shape{1, 2}, 0.5);
  CHECK_THROWS_AS(composite(sigma, feats, deltas), CheckError);
}

TEST_CASE("constant-density accumulated alpha matches 1-exp(-sigma)", "[renderer]") {
  // independent fine-grid oracle: explicit transmittance loop
  auto oracle = [](double sig, int64_t k) {
    double t = 1.0, acc = 0.0, d = 1.0 / double(k);
    for (int64_t i = 0; i < k; ++i) {
      double a = 1.0 - std::exp(-sig * d);
      acc += t * a;
      t *= (1.0 - a);
    }
    return acc;
  };
  for (double sig : {0.3, 1.0, 4.0}) {
    double closed = 1.0 - std::exp(-sig);
    CHECK(std::abs(oracle(sig, 10000) - closed) < 1e-9);  // oracle agrees at K=1e4
    for (int64_t k : {8L, 64L}) {
      auto sigma = ag::constant(Tensor<double>::full(Shape{1, k}, sig));
      auto feats = ag::constant(Tensor<double>::full(Shape{1, k, 1}, 1.0));
      Tensor<double> deltas = Tensor<double>::full(Shape{1, k}, 1.0 / double(k));
      auto out = composite(sigma, feats, deltas);
      CHECK(std::abs(out.alpha->value[0] - closed) < 1e-12);
      CHECK(std::abs(out.alpha->value[0] - oracle(sig, k)) < 1e-12);
    }
  }
}

TEST_CASE("interval-split invariance", "[renderer]") {
  // constant sigma & features on one interval vs the same interval split in two
  double sig = 1.7, feat = 0.42, len = 0.6;
  auto one = composite(ag::constant(Tensor<double>::full(Shape{1, 1}, sig)),
                       ag::constant(Tensor<double>::full(Shape{1, 1, 1}, feat)),
                       Tensor<double>::full(Shape{1, 1}, len));
  auto two = composite(ag::constant(Tensor<double>::full(Shape{1, 2}, sig)),
                       ag::constant(Tensor<double>::full(Shape{1, 2, 1}, feat)),
                       Tensor<double>::full(Shape{1, 2}, len / 2));
  CHECK(std::abs(one.features->value[0] - two.features->value[0]) < 1e-10);
  CHECK(std::abs(one.alpha->value[0] - two.alpha->value[0]) < 1e-10);
}

TEST_CASE("composite weights are nonnegative and sum to alpha <= 1", "[renderer]") {
  Rng rng(7);
  auto sigma = ag::constant(rng.uniform_tensor<double>(Shape{16, 24}, 0.0, 5.0));
  auto feats = ag::constant(rng.uniform_tensor<double>(Shape{16, 24, 3}, 0, 1));
  Tensor<double> deltas = Tensor<double>::full(Shape{16, 24}, 0.05);
  auto out = composite(sigma, feats, deltas);
  for (int64_t r = 0; r < 16; ++r) {
    double sum = 0;
    for (int64_t k = 0; k < 24; ++k) {
      CHECK(out.weights->value[r * 24 + k] >= 0.0);
      sum += out.weights->value[r * 24 + k];
    }
    CHECK(sum == Catch::Approx(out.alpha->value[r]).margin(1e-12));
    CHECK(out.alpha->value[r] <= 1.0 + 1e-6);
  }
}

TEST_CASE("composite gradients match finite differences", "[renderer]") {
  Rng rng(8);
  auto sigma = ag::param(rng.uniform_tensor<double>(Shape{3, 6}, 0.1, 2.0));
  auto feats = ag::param(rng.uniform_tensor<double>(Shape{3, 6, 4}, 0, 1));
  Tensor<double> deltas = rng.uniform_tensor<double>(Shape{3, 6}, 0.05, 0.2);
  Rng wrng(87);
  auto w = ag::constant(wrng.normal_tensor<double>(Shape{3, 4}));
  auto build = [&]() { return ag::sum_all(ag::mul(composite(sigma, feats, deltas).features, w)); };
  CHECK(testutil::gradcheck<double>(build, {sigma, feats}) < 1e-4);
}

TEST_CASE("hierarchical resample: delta PDF concentrates samples", "[renderer]") {
  Tensor<double> w(Shape{1, 8});
  w[3] = 2.5;  // all weight in bin 3
  Rng rng(9);
  auto fine = hierarchical_resample(w, 0.0, 8.0, 64, rng);
  for (int64_t k = 0; k < 64; ++k) {
    CHECK(fine[k] >= 3.0);
    CHECK(fine[k] <= 4.0);
  }
}

TEST_CASE("hierarchical resample: uniform weights pass a KS test", "[renderer]") {
  const int64_t n = 100000;
  Tensor<double> w = Tensor<double>::full(Shape{1, 16}, 0.25);
  Rng rng(10);
  auto fine = hierarchical_resample(w, 0.0, 1.0, n, rng);
  // already sorted per ray
  double d = 0;
  for (int64_t i = 0; i < n; ++i) {
    double s = fine[i];
    d = std::max(d, std::abs(double(i + 1) / n - s));
    d = std::max(d, std::abs(s - double(i) / n));
  }
  // alpha = 0.01 critical value
  CHECK(d < 1.628 / std::sqrt(double(n)));
}

TEST_CASE("inverse CDF matches a bisection oracle at the median", "[renderer]") {
  Tensor<double> w(Shape{1, 6}, {0.1, 0.6, 0.0, 1.2, 0.4, 0.2});
  std::span<const double> row(w.data(), 6);
  // independent oracle: bisection on the CDF
  auto cdf = [&](double depth) {
    double total = 0, acc = 0, bin = 1.0 / 6.0;
    for (int64_t k = 0; k < 6; ++k) total += w[k];
    for (int64_t k = 0; k < 6; ++k) {
      double lo = k * bin, hi = (k + 1) * bin;
      if (depth >= hi)
        acc += w[k];
      else if (depth > lo)
        acc += w[k] * (depth - lo) / bin;
    }
    return acc / total;
  };
  double lo = 0, hi = 1;
  for (int iter = 0; iter < 60; ++iter) {
    double mid = 0.5 * (lo + hi);
    (cdf(mid) < 0.5 ? lo : hi) = mid;
  }
  double got = inverse_cdf_depth(row, 0.0, 1.0, 0.5);
  CHECK(std::abs(got - 0.5 * (lo + hi)) < 1e-6);
}

TEST_CASE("all-zero weights fall back to the uniform PDF", "[renderer]") {
  Tensor<double> w(Shape{1, 4});
  std::span<const double> row(w.data(), 4);
  CHECK(inverse_cdf_depth(row, 2.0, 4.0, 0.5) == Catch::Approx(3.0));
  CHECK(inverse_cdf_depth(row, 2.0, 4.0, 0.0) == Catch::Approx(2.0));
}

namespace {
struct TestField {
  nn::ParamStore<double> store;
  TriPlanes<double> planes;
  FieldDecoder<double> decoder;
  BlobScene scene;
};

TestField make_blob_field(const std::vector<double>& z, int num_blobs) {
  TestField f;
  FieldConfig cfg;
  auto field = procedural_triplanes<double>(z, cfg, num_blobs, /*include_anchor=*/false);
  f.planes = field.planes;
  f.scene = field.scene;
  f.decoder = make_procedural_decoder<double>(f.store, "dec", cfg, num_blobs);
  set_procedural_colors(f.decoder, f.scene, cfg);
  return f;
}
}  // namespace

TEST_CASE("render_view: empty field renders black with zero alpha", "[renderer]") {
  TestField f = make_blob_field(std::vector<double>(8, 0.0), 1);
  // overwrite the decoder output layer: sigma raw = -60 everywhere
  for (int64_t i = 0; i < f.decoder.w2->value.numel(); ++i) f.decoder.w2->value[i] = 0;
  for (int64_t i = 0; i < f.decoder.b2->value.numel(); ++i) f.decoder.b2->value[i] = 0;
  f.decoder.b2->value[0] = -60.0;
  RenderConfig cfg;
  cfg.resolution = 8;
  PosePrior prior;
  auto out = render_view(FieldRef<double>{&f.planes, &f.decoder}, orbit_pose(prior, 0.2, 0.1), cfg);
  for (int64_t i = 0; i < out.feature_image->value.numel(); ++i)
    CHECK(std::abs(out.feature_image->value[i]) < 1e-12);
  for (int64_t i = 0; i < out.alpha->value.numel(); ++i) CHECK(out.alpha->value[i] < 1e-12);
}

TEST_CASE("render_view is deterministic in evaluation mode", "[renderer]") {
  std::vector<double> z{0.4, -0.3, 0.9, 0.2, 0.5, -1.0, 0.1, 0.8};
  TestField f = make_blob_field(z, 1);
  RenderConfig cfg;
  cfg.resolution = 16;
  PosePrior prior;
  CameraPose pose = orbit_pose(prior, -0.3, 0.2);
  FieldRef<double> ref{&f.planes, &f.decoder};
  auto a = render_view(ref, pose, cfg);
  auto b = render_view(ref, pose, cfg);
  CHECK(bitwise_equal(a.feature_image->value, b.feature_image->value));
  CHECK(bitwise_equal(a.alpha->value, b.alpha->value));
}

TEST_CASE("rendered blob centroid matches the pinhole projection", "[renderer]") {
  Rng rng(33);
  PosePrior prior;
  RenderConfig cfg;
  cfg.resolution = 64;
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<double> z;
    for (int i = 0; i < 8; ++i) z.push_back(rng.normal());
    TestField f = make_blob_field(z, 1);
    SampledPose sp = sample_pose(prior, rng);
    auto out = render_view(FieldRef<double>{&f.planes, &f.decoder}, sp.pose, cfg);

    // luminance centroid of the RGB channels
    double mass = 0, cx = 0, cy = 0;
    const auto& img = out.feature_image->value;  // [32,64,64]
    for (int64_t y = 0; y < 64; ++y)
      for (int64_t x = 0; x < 64; ++x) {
        double lum = (img[(0 * 64 + y) * 64 + x] + img[(1 * 64 + y) * 64 + x] +
                      img[(2 * 64 + y) * 64 + x]) / 3.0;
        mass += lum;
        cx += lum * double(x);
        cy += lum * double(y);
      }
    REQUIRE(mass > 1.0);
    cx /= mass;
    cy /= mass;
    Eigen::Vector2d proj = project_point(sp.pose, f.scene.blobs[0].center, 64);
    INFO("trial " << trial << ": centroid (" << cx << "," << cy << ") vs proj (" << proj.x() << ","
                  << proj.y() << ")");
    CHECK(std::hypot(cx - proj.x(), cy - proj.y()) < 2.0);
  }
}

TEST_CASE("pure roll about the optical axis rotates the image", "[renderer]") {
  std::vector<double> z{0.6, 0.1, -0.4, 0.3, 1.2, 0.5, -0.2, 0.9};
  TestField f = make_blob_field(z, 2);
  PosePrior prior;
  CameraPose pose1 = orbit_pose(prior, 0.35, -0.15);
  CameraPose pose2 = pose1;
  Eigen::Matrix3d roll;  // +90 degrees about camera z
  roll << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  pose2.extrinsic.topLeftCorner<3, 3>() = pose1.rotation() * roll;
  pose2.validate();

  RenderConfig cfg;
  cfg.resolution = 32;
  FieldRef<double> ref{&f.planes, &f.decoder};
  auto img1 = render_view(ref, pose1, cfg).feature_image->value;
  auto img2 = render_view(ref, pose2, cfg).feature_image->value;

  // cam2 = roll^T * cam1 maps pixel (r2,c2) to image1 pixel (r1=c2, c1=N-1-r2)
  const int64_t n = 32;
  double diff = 0;
  int64_t count = 0;
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t r2 = 0; r2 < n; ++r2)
      for (int64_t c2 = 0; c2 < n; ++c2) {
        double a = img2[(ch * n + r2) * n + c2];
        double b = img1[(ch * n + c2) * n + (n - 1 - r2)];
        diff += std::abs(a - b);
        ++count;
      }
  CHECK(diff / double(count) < 0.02);
}
