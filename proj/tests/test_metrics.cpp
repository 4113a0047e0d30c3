// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include "tpd/metrics.hpp"

using namespace tpd;

namespace {
Tensor<double> gaussian_features(Rng& rng, int64_t n, int64_t d, double mean_shift = 0.0) {
  Tensor<double> f(Shape{n, d});
  for (int64_t i = 0; i < n * d; ++i) f[i] = rng.normal() + mean_shift;
  return f;
}
}  // namespace

TEST_CASE("fid of a set against itself is zero", "[metrics]") {
  Rng rng(1);
  auto x = gaussian_features(rng, 500, 8);
  CHECK(fid(x, x) < 1e-8);
}

TEST_CASE("fid matches the analytic Gaussian Frechet distance", "[metrics]") {
  // N(0, I_8) vs N(mu, I_8) with ||mu||^2 = 4 -> distance exactly 4
  Rng rng(2);
  const int64_t n = 100000, d = 8;
  double shift = std::sqrt(4.0 / double(d));
  auto a = gaussian_features(rng, n, d);
  auto b = gaussian_features(rng, n, d, shift);
  double got = fid(a, b);
  CHECK(got == Catch::Approx(4.0).epsilon(0.05));
}

TEST_CASE("fid is symmetric", "[metrics]") {
  Rng rng(3);
  auto a = gaussian_features(rng, 400, 6);
  auto b = gaussian_features(rng, 300, 6, 0.5);
  CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-9);
}

TEST_CASE("kid same-distribution mean is within 3 standard errors of zero", "[metrics]") {
  Rng rng(4);
  auto pool = gaussian_features(rng, 2000, 6);
  // split halves
  Tensor<double> x(Shape{1000, 6}), y(Shape{1000, 6});
  std::copy(pool.data(), pool.data() + 6000, x.data());
  std::copy(pool.data() + 6000, pool.data() + 12000, y.data());

  std::vector<double> estimates;
  for (int s = 0; s < 100; ++s) estimates.push_back(kid(x, y, 100, 1, 1000 + uint64_t(s)));
  double mean = 0;
  for (double e : estimates) mean += e;
  mean /= 100.0;
  double var = 0;
  for (double e : estimates) var += (e - mean) * (e - mean);
  var /= 99.0;
  double se = std::sqrt(var / 100.0);
  CHECK(std::abs(mean) < 3 * se);
}

TEST_CASE("kid separates distinct Gaussians and validates subset size", "[metrics]") {
  Rng rng(5);
  auto a = gaussian_features(rng, 500, 6);
  auto b = gaussian_features(rng, 500, 6, 1.5);
  CHECK(kid(a, b, 100, 20) > 0.0);
  CHECK_THROWS_AS(kid(a, b, 600, 10), CheckError);
}

TEST_CASE("kid with full-pool subsets is exactly permutation invariant", "[metrics]") {
  Rng rng(6);
  auto a = gaussian_features(rng, 64, 5);
  auto b = gaussian_features(rng, 64, 5, 0.7);
  Tensor<double> a_perm = a;
  // rotate rows by 17
  for (int64_t i = 0; i < 64; ++i)
    for (int64_t j = 0; j < 5; ++j) a_perm[i * 5 + j] = a[((i + 17) % 64) * 5 + j];
  double v1 = kid(a, b, 64, 1);
  double v2 = kid(a_perm, b, 64, 1);
  CHECK(v1 == Catch::Approx(v2).margin(1e-12));
}

TEST_CASE("psnr closed forms", "[metrics]") {
  Tensor<float> a = Tensor<float>::full(Shape{3, 8, 8}, 0.5f);
  CHECK(psnr(a, a) == 99.0);

  Tensor<float> b = Tensor<float>::full(Shape{3, 8, 8}, 0.6f);
  CHECK(psnr(a, b) == Catch::Approx(20.0).epsilon(1e-5));  // 10 log10(1/0.01)

  // strictly decreasing in MSE
  Tensor<float> c = Tensor<float>::full(Shape{3, 8, 8}, 0.7f);
  CHECK(psnr(a, b) > psnr(a, c));

  CHECK_THROWS_AS(psnr(a, Tensor<float>(Shape{3, 4, 4})), CheckError);
}

TEST_CASE("feature embedder is deterministic with the documented dim", "[metrics]") {
  FeatureEmbedder<float> emb;
  Rng rng(7);
  Tensor<float> imgs = rng.uniform_tensor<float>(Shape{4, 3, 32, 32}, 0, 1);
  auto f1 = emb.embed(imgs);
  auto f2 = emb.embed(imgs);
  CHECK(f1.shape() == Shape{4, 32});
  CHECK(bitwise_equal(f1, f2));
}

namespace {
TeacherConfig regressor_teacher() {
  TeacherConfig cfg;
  cfg.kind = "procedural";
  cfg.seed = 31;
  cfg.render.resolution = 16;
  cfg.render.n_coarse = 24;
  cfg.render.n_fine = 24;
  cfg.sr_channels = 16;
  return cfg;
}

double prior_pose_variance(const PosePrior& p) {
  double vy = (p.yaw_max - p.yaw_min) * (p.yaw_max - p.yaw_min) / 12.0;
  double vp = (p.pitch_max - p.pitch_min) * (p.pitch_max - p.pitch_min) / 12.0;
  return 0.5 * (vy + vp);
}
}  // namespace

TEST_CASE("pose regressor fits the procedural teacher", "[metrics][regressor]") {
  Teacher<float> teacher(regressor_teacher());
  auto samples = teacher_pose_samples(teacher, 192, 41);
  auto reg = fit_pose_regressor<float>(samples, 16, 42, /*steps=*/500);
  double var = prior_pose_variance(teacher.config().prior);
  INFO("held-out mse " << reg.heldout_mse() << " vs pose variance " << var);
  CHECK(reg.heldout_mse() < 0.10 * var);

  // self-consistency: evaluating the teacher with its own regressor stays at
  // the held-out fit error
  auto generate = [&](const std::vector<SampledPose>& poses) {
    Tensor<float> out(Shape{static_cast<int64_t>(poses.size()), 3, 16, 16});
    Rng zrng(43);
    for (size_t i = 0; i < poses.size(); ++i) {
      std::vector<double> z;
      for (int64_t k = 0; k < teacher.config().d_z; ++k) z.push_back(zrng.normal());
      auto bundle = teacher.forward(z, poses[i].pose, poses[i].yaw, poses[i].pitch);
      std::copy(bundle.lr.data(), bundle.lr.data() + bundle.lr.numel(),
                out.data() + static_cast<int64_t>(i) * bundle.lr.numel());
    }
    return out;
  };
  double self_mse = pose_accuracy<float>(generate, teacher.config().prior, reg, 128, 44);
  INFO("self-consistency mse " << self_mse);
  CHECK(self_mse < reg.heldout_mse() * 1.10 + 1e-4);

  // a pose-ignoring generator scores near the prior variance
  auto constant_gen = [&](const std::vector<SampledPose>& poses) {
    return Tensor<float>::full(Shape{static_cast<int64_t>(poses.size()), 3, 16, 16}, 0.5f);
  };
  double blind_mse = pose_accuracy<float>(constant_gen, teacher.config().prior, reg, 256, 45);
  INFO("pose-ignoring mse " << blind_mse << " vs variance " << var);
  CHECK(blind_mse > 0.5 * var);
  CHECK(blind_mse < 4.0 * var);

  // untrained regressor is rejected
  PoseRegressor<float> raw(16, 7);
  CHECK_THROWS_AS(pose_accuracy<float>(constant_gen, teacher.config().prior, raw, 8, 46),
                  CheckError);
}

TEST_CASE("pose regressor on shuffled labels shows no leakage", "[metrics][regressor]") {
  Teacher<float> teacher(regressor_teacher());
  auto samples = teacher_pose_samples(teacher, 160, 51);
  // shuffle the labels against the images
  Rng rng(52);
  for (size_t i = samples.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.randint(static_cast<int64_t>(i)));
    std::swap(samples[i - 1].yaw, samples[j].yaw);
    std::swap(samples[i - 1].pitch, samples[j].pitch);
  }
  auto reg = fit_pose_regressor<float>(samples, 16, 53, /*steps=*/300);
  double var = prior_pose_variance(teacher.config().prior);
  INFO("shuffled-label held-out mse " << reg.heldout_mse() << " vs variance " << var);
  CHECK(reg.heldout_mse() > 0.5 * var);
}

TEST_CASE("pose regressor is deterministic given the seed", "[metrics][regressor]") {
  Teacher<float> teacher(regressor_teacher());
  auto samples = teacher_pose_samples(teacher, 64, 61);
  auto r1 = fit_pose_regressor<float>(samples, 16, 62, /*steps=*/60);
  auto r2 = fit_pose_regressor<float>(samples, 16, 62, /*steps=*/60);
  for (auto& [name, p] : r1.params().items())
    CHECK(bitwise_equal(p->value, r2.params().find(name)->value));
}
