// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Metric suite: Frechet distance and kernel (MMD^2) distance over embedded
// features, PSNR correspondence, and pose accuracy via a small learned pose
// regressor. The feature embedder is a fixed, seeded convolutional network;
// values are therefore not comparable to large pretrained-backbone scores,
// only ordering and sanity properties are claimed.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tpd/optim.hpp"
#include "tpd/teacher.hpp"

namespace tpd {

struct MetricReport {
  std::string name;
  double value = 0;
  int64_t sample_count = 0;
  std::string config_hash;
  std::string direction;  // "down" or "up"
};

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), computed through the
// symmetric form sqrt(Sa)^T Sb sqrt(Sa). Eigenvalues of the product that dip
// below -tol * max raise a diagnostic error instead of being silently
// clamped.
inline double fid(const Tensor<double>& features_a, const Tensor<double>& features_b,
                  double psd_tol = 1e-6) {
  TPD_CHECK(features_a.shape().rank() == 2 && features_b.shape().rank() == 2);
  TPD_CHECK_MSG(features_a.shape()[1] == features_b.shape()[1], "feature dims differ");
  int64_t n = features_a.shape()[0], m = features_b.shape()[0], d = features_a.shape()[1];
  TPD_CHECK(n >= 2 && m >= 2);

  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(
      features_a.data(), n, d);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(
      features_b.data(), m, d);

  Vec mu_a = A.colwise().mean();
  Vec mu_b = B.colwise().mean();
  Mat ca = A.rowwise() - mu_a.transpose();
  Mat cb = B.rowwise() - mu_b.transpose();
  Mat sa = ca.transpose() * ca / double(n - 1);
  Mat sb = cb.transpose() * cb / double(m - 1);

  Eigen::SelfAdjointEigenSolver<Mat> es_a(sa);
  TPD_CHECK_MSG(es_a.info() == Eigen::Success, "eigendecomposition failed");
  double max_eig_a = es_a.eigenvalues().maxCoeff();
  TPD_CHECK_MSG(es_a.eigenvalues().minCoeff() > -psd_tol * std::max(max_eig_a, 1.0),
                "covariance not PSD within tolerance");
  Vec sqrt_eigs = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  Mat sqrt_a = es_a.eigenvectors() * sqrt_eigs.asDiagonal() * es_a.eigenvectors().transpose();

  Mat inner = sqrt_a * sb * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es_m(inner);
  TPD_CHECK_MSG(es_m.info() == Eigen::Success, "eigendecomposition failed");
  double max_eig_m = std::max(es_m.eigenvalues().maxCoeff(), 1.0);
  TPD_CHECK_MSG(es_m.eigenvalues().minCoeff() > -psd_tol * max_eig_m,
                "matrix square root residual above tolerance");
  double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

// ---------------------------------------------------------------------------
// KID: unbiased MMD^2 with the degree-3 polynomial kernel (x.y/d + 1)^3,
// averaged over random subsets.
// ---------------------------------------------------------------------------

inline double kid(const Tensor<double>& features_a, const Tensor<double>& features_b,
                  int64_t subset_size = 100, int64_t n_subsets = 100, uint64_t seed = 0x51d) {
  TPD_CHECK(features_a.shape().rank() == 2 && features_b.shape().rank() == 2);
  TPD_CHECK(features_a.shape()[1] == features_b.shape()[1]);
  int64_t n = features_a.shape()[0], m = features_b.shape()[0], d = features_a.shape()[1];
  TPD_CHECK_MSG(subset_size <= n && subset_size <= m,
                "subset size " << subset_size << " exceeds sample count");
  TPD_CHECK(subset_size >= 2);

  auto kernel = [d](const double* x, const double* y) {
    double dot = 0;
    for (int64_t i = 0; i < d; ++i) dot += x[i] * y[i];
    return std::pow(dot / double(d) + 1.0, 3.0);
  };

  // full-pool subsets need no resampling; the estimator is then exactly
  // invariant to sample order
  bool full = subset_size == n && subset_size == m;
  if (full) n_subsets = 1;

  Rng rng(seed);
  double acc = 0;
  for (int64_t s = 0; s < n_subsets; ++s) {
    std::vector<int64_t> ia, ib;
    for (int64_t i = 0; i < subset_size; ++i) {
      ia.push_back(full ? i : rng.randint(n));
      ib.push_back(full ? i : rng.randint(m));
    }
    double kxx = 0, kyy = 0, kxy = 0;
    for (int64_t i = 0; i < subset_size; ++i)
      for (int64_t j = 0; j < subset_size; ++j) {
        if (i != j) {
          kxx += kernel(features_a.data() + ia[static_cast<size_t>(i)] * d,
                        features_a.data() + ia[static_cast<size_t>(j)] * d);
          kyy += kernel(features_b.data() + ib[static_cast<size_t>(i)] * d,
                        features_b.data() + ib[static_cast<size_t>(j)] * d);
        }
        kxy += kernel(features_a.data() + ia[static_cast<size_t>(i)] * d,
                      features_b.data() + ib[static_cast<size_t>(j)] * d);
      }
    double ss = double(subset_size);
    acc += kxx / (ss * (ss - 1)) + kyy / (ss * (ss - 1)) - 2.0 * kxy / (ss * ss);
  }
  return acc / double(n_subsets);
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

inline double psnr(const Tensor<float>& a, const Tensor<float>& b, double cap_db = 99.0) {
  TPD_CHECK_MSG(a.shape() == b.shape(), "psnr shape mismatch");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse <= 0) return cap_db;
  return std::min(cap_db, 10.0 * std::log10(1.0 / mse));
}

// ---------------------------------------------------------------------------
// Fixed seeded feature embedder for FID/KID over images.
// ---------------------------------------------------------------------------

template <typename T>
class FeatureEmbedder {
 public:
  explicit FeatureEmbedder(uint64_t seed = 0xe1b3d) {
    Rng rng(seed);
    auto make = [&](int64_t cin, int64_t cout) {
      return ag::constant(rng.normal_tensor<T>(Shape{cout, cin, 3, 3},
                                               std::sqrt(2.0 / double(cin * 9))));
    };
    w1_ = make(3, 16);
    w2_ = make(16, 32);
    w3_ = make(32, 32);
  }

  static int64_t dim() { return 32; }

  // images: [N,3,H,W] in [0,1] -> features [N,32]
  Tensor<double> embed(const Tensor<T>& images) const {
    ag::NoGradGuard ng;
    TPD_CHECK(images.shape().rank() == 4 && images.shape()[1] == 3);
    auto x = ag::constant(images);
    x = nn::leaky(conv(x, w1_));
    x = nn::leaky(conv(x, w2_));
    x = nn::leaky(conv(x, w3_));
    // global average pool
    int64_t n = x->shape()[0], c = x->shape()[1], hw = x->shape()[2] * x->shape()[3];
    Tensor<double> out(Shape{n, c});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < c; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < hw; ++k) acc += double(x->value[(i * c + j) * hw + k]);
        out[i * c + j] = acc / double(hw);
      }
    return out;
  }

 private:
  static ag::NodePtr<T> conv(const ag::NodePtr<T>& x, const ag::NodePtr<T>& w) {
    const Shape& ws = w->shape();
    ag::Conv2dGeom geo{ws[1], x->shape()[2], x->shape()[3], 3, 3, 2, 1};
    auto cols = ag::im2col(x, geo);
    auto w2d = ag::reshape(w, Shape{ws[0], ws[1] * 9});
    return ag::reshape(ag::bmm(w2d, cols), Shape{x->shape()[0], ws[0], geo.out_h(), geo.out_w()});
  }
  ag::NodePtr<T> w1_, w2_, w3_;
};

// ---------------------------------------------------------------------------
// Pose regressor: small convnet from the low-res RGB render to (yaw, pitch).
// ---------------------------------------------------------------------------

template <typename T>
class PoseRegressor {
 public:
  PoseRegressor(int64_t resolution, uint64_t seed) : resolution_(resolution) {
    Rng rng(seed);
    c1_.init(params_, "c1", 3, 16, 3, 2, 1, rng, std::sqrt(2.0));
    c2_.init(params_, "c2", 16, 24, 3, 2, 1, rng, std::sqrt(2.0));
    int64_t r = resolution / 4;
    fc1_.init(params_, "fc1", 24 * r * r, 64, rng, std::sqrt(2.0));
    fc2_.init(params_, "fc2", 64, 2, rng);
  }

  // images: [N,3,R,R] -> [N,2] (yaw, pitch) in radians
  ag::NodePtr<T> predict(const ag::NodePtr<T>& images) const {
    TPD_CHECK(images->shape().rank() == 4 && images->shape()[2] == resolution_);
    auto h = nn::leaky(c1_.forward(images));
    h = nn::leaky(c2_.forward(h));
    int64_t r = resolution_ / 4;
    auto flat = ag::reshape(h, Shape{images->shape()[0], 24 * r * r});
    return fc2_.forward(nn::leaky(fc1_.forward(flat)));
  }

  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  double heldout_mse() const { return heldout_mse_; }
  void set_heldout_mse(double v) { heldout_mse_ = v; }
  int64_t resolution() const { return resolution_; }

 private:
  int64_t resolution_;
  nn::ParamStore<T> params_;
  nn::Conv2d<T> c1_, c2_;
  nn::Linear<T> fc1_, fc2_;
  bool trained_ = false;
  double heldout_mse_ = 0;
};

// Labeled low-res image for pose-regressor fitting and evaluation.
template <typename T>
struct PoseSample {
  Tensor<T> image;  // [3,R,R]
  double yaw = 0, pitch = 0;
};

template <typename T>
PoseRegressor<T> fit_pose_regressor(const std::vector<PoseSample<T>>& samples, int64_t resolution,
                                    uint64_t seed, int64_t steps = 600, int64_t batch = 16,
                                    double heldout_fraction = 0.15) {
  TPD_CHECK(samples.size() >= 8);
  PoseRegressor<T> reg(resolution, seed);
  int64_t n = static_cast<int64_t>(samples.size());
  int64_t n_hold = std::max<int64_t>(1, int64_t(double(n) * heldout_fraction));
  int64_t n_train = n - n_hold;
  Rng rng(seed ^ 0xf17);
  Adam<T> opt(reg.params(), {.lr = 2e-3});

  auto make_batch = [&](int64_t count, std::function<int64_t()> pick) {
    Tensor<T> imgs(Shape{count, 3, resolution, resolution});
    Tensor<T> labels(Shape{count, 2});
    for (int64_t i = 0; i < count; ++i) {
      int64_t at = pick();
      const PoseSample<T>& s = samples[static_cast<size_t>(at)];
      std::copy(s.image.data(), s.image.data() + s.image.numel(),
                imgs.data() + i * s.image.numel());
      labels[i * 2] = static_cast<T>(s.yaw);
      labels[i * 2 + 1] = static_cast<T>(s.pitch);
    }
    return std::make_pair(std::move(imgs), std::move(labels));
  };

  for (int64_t step = 0; step < steps; ++step) {
    auto [imgs, labels] = make_batch(batch, [&]() { return rng.randint(n_train); });
    auto pred = reg.predict(ag::constant(std::move(imgs)));
    auto loss = ag::mean_all(ag::square(ag::sub(pred, ag::constant(std::move(labels)))));
    opt.step(ag::grad(loss, reg.params().nodes()));
  }

  // held-out residual
  {
    ag::NoGradGuard ng;
    int64_t at = n_train;
    auto [imgs, labels] = make_batch(n_hold, [&]() { return at++; });
    auto pred = reg.predict(ag::constant(std::move(imgs)));
    double mse = 0;
    for (int64_t i = 0; i < pred->value.numel(); ++i) {
      double d = double(pred->value[i]) - double(labels[i]);
      mse += d * d;
    }
    reg.set_heldout_mse(mse / double(pred->value.numel()));
  }
  reg.mark_trained();
  return reg;
}

// Render (teacher) pose samples for regressor fitting.
template <typename T>
std::vector<PoseSample<T>> teacher_pose_samples(const Teacher<T>& teacher, int64_t count,
                                                uint64_t seed) {
  Rng rng(seed);
  std::vector<PoseSample<T>> out;
  for (int64_t i = 0; i < count; ++i) {
    std::vector<double> z;
    for (int64_t k = 0; k < teacher.config().d_z; ++k) z.push_back(rng.normal());
    SampledPose sp = sample_pose(teacher.config().prior, rng);
    auto bundle = teacher.forward(z, sp.pose, sp.yaw, sp.pitch);
    out.push_back({std::move(bundle.lr), sp.yaw, sp.pitch});
  }
  return out;
}

// MSE between queried (yaw, pitch) and the regressed pose of generated
// images. `generate` maps a batch of sampled poses to [N,3,R,R] images.
template <typename T>
double pose_accuracy(
    const std::function<Tensor<T>(const std::vector<SampledPose>&)>& generate,
    const PosePrior& prior, const PoseRegressor<T>& regressor, int64_t n_probes, uint64_t seed) {
  TPD_CHECK_MSG(regressor.trained(), "pose regressor is untrained");
  ag::NoGradGuard ng;
  Rng rng(seed);
  std::vector<SampledPose> poses;
  for (int64_t i = 0; i < n_probes; ++i) poses.push_back(sample_pose(prior, rng));
  Tensor<T> images = generate(poses);
  TPD_CHECK(
      (images.shape() == Shape{n_probes, 3, regressor.resolution(), regressor.resolution()}));
  auto pred = regressor.predict(ag::constant(std::move(images)));
  double mse = 0;
  for (int64_t i = 0; i < n_probes; ++i) {
    double dy = double(pred->value[i * 2]) - poses[static_cast<size_t>(i)].yaw;
    double dp = double(pred->value[i * 2 + 1]) - poses[static_cast<size_t>(i)].pitch;
    mse += dy * dy + dp * dp;
  }
  return mse / double(2 * n_probes);
}

}  // namespace tpd
