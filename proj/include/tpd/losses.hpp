// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation loss stack: smooth-L1 feature reconstruction, a perceptual
// loss over a fixed random convolutional extractor, and non-saturating
// adversarial terms against a pose-conditioned dual discriminator with an R1
// gradient penalty on real inputs.

#pragma once

#include <string>
#include <vector>

#include "tpd/camera.hpp"
#include "tpd/nn.hpp"

namespace tpd {

enum class Stage { kDistill = 1, kAdversarial = 2 };

struct LossWeights {
  double lr_smooth_l1 = 1.0;
  double lr_perc = 1.0;
  double hr_smooth_l1 = 0.0;  // optional HR pixel term, off by default
  double hr_perc = 1.0;
  double adv = 0.1;

  void validate() const {
    TPD_CHECK_MSG(lr_smooth_l1 >= 0 && lr_perc >= 0 && hr_smooth_l1 >= 0 && hr_perc >= 0 && adv >= 0,
                  "loss weights must be nonnegative");
  }
};

// mean over elements of: 0.5 d^2/beta if |d| < beta else |d| - 0.5 beta
template <typename T>
ag::NodePtr<T> smooth_l1(const ag::NodePtr<T>& a, const ag::NodePtr<T>& b, double beta = 1.0) {
  TPD_CHECK_MSG(a->shape() == b->shape(),
                "smooth_l1 shape mismatch " << a->shape().str() << " vs " << b->shape().str());
  TPD_CHECK_MSG(beta > 0, "smooth_l1 beta must be positive");
  auto d = ag::sub(a, b);
  auto ad = ag::abs_(d);
  Tensor<T> mask(ad->shape());
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = ad->value[i] < static_cast<T>(beta) ? T(1) : T(0);
  auto quad = ag::mul_scalar(ag::square(d), static_cast<T>(0.5 / beta));
  auto lin = ag::add_scalar(ad, static_cast<T>(-0.5 * beta));
  return ag::mean_all(ag::where_mask(mask, quad, lin));
}

// Fixed multi-scale convolutional feature extractor. The weights are drawn
// once from a constant seed and never trained; at desk scale this stands in
// for a pretrained perceptual backbone.
template <typename T>
class PerceptualExtractor {
 public:
  PerceptualExtractor() {
    Rng rng(0x7e11ca);
    auto make = [&](int64_t cin, int64_t cout) {
      return ag::constant(rng.normal_tensor<T>(Shape{cout, cin, 3, 3},
                                               std::sqrt(2.0 / double(cin * 9))));
    };
    w1_ = make(3, 12);
    w2_ = make(12, 24);
    w3_ = make(24, 32);
  }

  std::vector<ag::NodePtr<T>> features(const ag::NodePtr<T>& img) const {
    const Shape& s = img->shape();
    TPD_CHECK_MSG(s.rank() == 4 && s[1] == 3, "perceptual extractor expects [N,3,H,W]");
    TPD_CHECK_MSG(s[2] >= 8 && s[3] >= 8, "image too small for the extractor");
    std::vector<ag::NodePtr<T>> out;
    auto x = nn::leaky(conv(img, w1_));
    out.push_back(x);
    x = nn::leaky(conv(x, w2_));
    out.push_back(x);
    x = nn::leaky(conv(x, w3_));
    out.push_back(x);
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

// mean squared distance between extractor activations, averaged over layers
template <typename T>
ag::NodePtr<T> perceptual_loss(const PerceptualExtractor<T>& ext, const ag::NodePtr<T>& a,
                               const ag::NodePtr<T>& b) {
  TPD_CHECK_MSG(a->shape() == b->shape(), "perceptual_loss shape mismatch");
  auto fa = ext.features(a);
  auto fb = ext.features(b);
  ag::NodePtr<T> total;
  for (size_t l = 0; l < fa.size(); ++l) {
    auto term = ag::mean_all(ag::square(ag::sub(fa[l], fb[l])));
    total = total ? ag::add(total, term) : term;
  }
  return ag::mul_scalar(total, static_cast<T>(1.0 / double(fa.size())));
}

// channel concatenation of I^HR with the bilinearly upsampled I^LR
template <typename T>
ag::NodePtr<T> dual_discriminator_input(const ag::NodePtr<T>& hr, const ag::NodePtr<T>& lr) {
  const Shape& hs = hr->shape();
  const Shape& ls = lr->shape();
  TPD_CHECK(hs.rank() == 4 && ls.rank() == 4 && hs[1] == 3 && ls[1] == 3 && hs[0] == ls[0]);
  TPD_CHECK_MSG(hs[2] % ls[2] == 0 && hs[3] % ls[3] == 0 && hs[2] / ls[2] == hs[3] / ls[3],
                "low-res image is not an integer-factor downscale of the high-res image");
  int64_t factor = hs[2] / ls[2];
  auto up = factor == 1 ? lr : ag::upsample_bilinear(lr, factor);
  return ag::concat_axis(hr, up, 1);
}

struct DiscriminatorConfig {
  uint64_t seed = 3;
  int64_t input_resolution = 64;
  int64_t channels = 32;
  int64_t pose_embed = 32;
};

// Pose-conditioned dual discriminator over the 6-channel stack. Plain strided
// convolutions only, so the R1 double-backward stays inside the
// create-graph-safe op set.
template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorConfig cfg, const PosePrior& prior) : cfg_(cfg) {
    Rng rng(cfg.seed);
    pose_feat_ = PoseFeaturizer::from_prior(prior);
    int64_t c = cfg.channels;
    int64_t res = cfg.input_resolution;
    TPD_CHECK(res >= 8 && (res & (res - 1)) == 0);
    int64_t in_c = 6;
    int layer = 0;
    while (res > 4) {
      int64_t out_c = std::min<int64_t>(in_c == 6 ? c : in_c * 2, 2 * c);
      convs_.emplace_back();
      convs_.back().init(params_, "conv" + std::to_string(layer++), in_c, out_c, 3, 2, 1, rng,
                         std::sqrt(2.0));
      in_c = out_c;
      res /= 2;
    }
    flat_dim_ = in_c * res * res;
    pose_fc_.init(params_, "pose_fc", kPoseDim, cfg.pose_embed, rng, std::sqrt(2.0));
    fc1_.init(params_, "fc1", flat_dim_ + cfg.pose_embed, 2 * c, rng, std::sqrt(2.0));
    fc2_.init(params_, "fc2", 2 * c, 1, rng);
  }

  // x: [N,6,R,R] -> logits [N,1]
  ag::NodePtr<T> logits(const ag::NodePtr<T>& x, const std::vector<PoseVec>& poses) const {
    TPD_CHECK_MSG(x->shape().rank() == 4 && x->shape()[1] == 6 &&
                      x->shape()[2] == cfg_.input_resolution,
                  "discriminator input must be [N,6," << cfg_.input_resolution << ","
                                                      << cfg_.input_resolution << "]");
    TPD_CHECK(static_cast<int64_t>(poses.size()) == x->shape()[0]);
    auto h = x;
    for (const auto& conv : convs_) h = nn::leaky(conv.forward(h));
    auto flat = ag::reshape(h, Shape{x->shape()[0], flat_dim_});
    auto pe = nn::leaky(pose_fc_.forward(ag::constant(pose_feat_.featurize<T>(poses))));
    auto joint = ag::concat_axis(flat, pe, 1);
    return fc2_.forward(nn::leaky(fc1_.forward(joint)));
  }

  const nn::ParamStore<T>& params() const { return params_; }
  nn::ParamStore<T>& mutable_params() { return params_; }
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  nn::ParamStore<T> params_;
  std::vector<nn::Conv2d<T>> convs_;
  nn::Linear<T> pose_fc_, fc1_, fc2_;
  PoseFeaturizer pose_feat_;
  int64_t flat_dim_ = 0;
};

// non-saturating generator loss: mean softplus(-D(fake, c))
template <typename T>
ag::NodePtr<T> adversarial_g(const Discriminator<T>& d, const ag::NodePtr<T>& fake6,
                             const std::vector<PoseVec>& poses) {
  return ag::mean_all(ag::softplus(ag::neg(d.logits(fake6, poses))));
}

template <typename T>
struct DLoss {
  ag::NodePtr<T> total;
  ag::NodePtr<T> d_real, d_fake;
  ag::NodePtr<T> r1;  // null when the penalty is not applied this step
};

// d-loss = softplus(D(fake)) + softplus(-D(real)) + (gamma/2) mean_n
// ||grad_x D(x_n)||^2; the penalty differentiates through the gradient, so it
// rides the create_graph machinery.
template <typename T>
DLoss<T> adversarial_d(const Discriminator<T>& d, const Tensor<T>& real6,
                       const ag::NodePtr<T>& fake6, const std::vector<PoseVec>& poses,
                       double r1_gamma, bool apply_r1) {
  DLoss<T> out;
  out.d_fake = ag::mean_all(ag::softplus(d.logits(fake6, poses)));
  auto real_leaf = apply_r1 && r1_gamma > 0 ? ag::param(real6) : ag::constant(real6);
  auto real_logits = d.logits(real_leaf, poses);
  out.d_real = ag::mean_all(ag::softplus(ag::neg(real_logits)));
  out.total = ag::add(out.d_fake, out.d_real);
  if (apply_r1 && r1_gamma > 0) {
    auto g = ag::grad(ag::sum_all(real_logits), {real_leaf}, /*create_graph=*/true)[0];
    int64_t n = real6.shape()[0];
    out.r1 = ag::mul_scalar(ag::sum_all(ag::square(g)), static_cast<T>(r1_gamma * 0.5 / double(n)));
    out.total = ag::add(out.total, out.r1);
  }
  return out;
}

// Reconstruction + adversarial terms for one generator step.
template <typename T>
struct LossTerms {
  ag::NodePtr<T> lr_smooth_l1;  // SmoothL1(I'^f, I^f)
  ag::NodePtr<T> lr_perc;       // Perceptual(I'^LR, I^LR)
  ag::NodePtr<T> hr_smooth_l1;  // optional SmoothL1(I'^HR, I^HR)
  ag::NodePtr<T> hr_perc;       // Perceptual(I'^HR, I^HR)
  ag::NodePtr<T> adv;           // adversarial_g, stage 2 only
};

struct LossReport {
  int stage = 1;
  double lr_smooth_l1 = 0, lr_perc = 0, hr_smooth_l1 = 0, hr_perc = 0, adv = 0;
  double d_real = 0, d_fake = 0, r1 = 0;
  double total = 0;
};

// Stage 1 is pure distillation: the adversarial term is excluded entirely, so
// no gradient path into the discriminator exists at all.
template <typename T>
std::pair<ag::NodePtr<T>, LossReport> total_loss(const LossTerms<T>& terms,
                                                 const LossWeights& weights, Stage stage) {
  weights.validate();
  TPD_CHECK(terms.lr_smooth_l1 && terms.lr_perc && terms.hr_perc);
  LossReport report;
  report.stage = static_cast<int>(stage);
  auto total = ag::mul_scalar(terms.lr_smooth_l1, static_cast<T>(weights.lr_smooth_l1));
  total = ag::add(total, ag::mul_scalar(terms.lr_perc, static_cast<T>(weights.lr_perc)));
  if (terms.hr_smooth_l1 && weights.hr_smooth_l1 > 0)
    total = ag::add(total, ag::mul_scalar(terms.hr_smooth_l1, static_cast<T>(weights.hr_smooth_l1)));
  total = ag::add(total, ag::mul_scalar(terms.hr_perc, static_cast<T>(weights.hr_perc)));
  if (stage == Stage::kAdversarial) {
    TPD_CHECK_MSG(terms.adv, "stage 2 requires the adversarial term");
    total = ag::add(total, ag::mul_scalar(terms.adv, static_cast<T>(weights.adv)));
  }
  report.lr_smooth_l1 = static_cast<double>(terms.lr_smooth_l1->value.item());
  report.lr_perc = static_cast<double>(terms.lr_perc->value.item());
  if (terms.hr_smooth_l1) report.hr_smooth_l1 = static_cast<double>(terms.hr_smooth_l1->value.item());
  report.hr_perc = static_cast<double>(terms.hr_perc->value.item());
  if (terms.adv) report.adv = static_cast<double>(terms.adv->value.item());
  report.total = static_cast<double>(total->value.item());
  return {total, report};
}

}  // namespace tpd
