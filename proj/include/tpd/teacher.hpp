// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// The frozen volumetric teacher: mapping (z, c) -> style code w, tri-plane
// synthesis, two-pass volumetric rendering to a 32-channel feature image, and
// a residual super-resolution head. Two variants share the interface: a
// randomly initialized model, and the procedural blob teacher whose planes
// come straight from the latent with analytic geometry attached.

#pragma once

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "tpd/camera.hpp"
#include "tpd/checkpoint.hpp"
#include "tpd/nn.hpp"
#include "tpd/renderer.hpp"
#include "tpd/triplane.hpp"

namespace tpd {

// Residual super-resolution head shared by teacher and student: the RGB
// channels are bilinearly upsampled and a small conv stack over all 32
// feature channels adds a residual. The last conv starts at zero, so a fresh
// head is exactly the bilinear upsample.
template <typename T>
struct SuperResolution {
  nn::Conv2d<T> c1, c2, c3;
  int64_t factor = 2;
  int64_t channels = 48;

  void init(nn::ParamStore<T>& store, const std::string& name, int64_t factor_, int64_t channels_,
            Rng& rng) {
    factor = factor_;
    channels = channels_;
    c1.init(store, name + ".c1", kFeatureChannels, channels, 3, 1, 1, rng, std::sqrt(2.0));
    c2.init(store, name + ".c2", channels, channels, 3, 1, 1, rng, std::sqrt(2.0));
    c3.init(store, name + ".c3", channels, 3, 3, 1, 1, rng, 0.0);  // zero-init residual
  }

  // feats: [N,32,h,w] -> [N,3,h*factor,w*factor]
  ag::NodePtr<T> forward(const ag::NodePtr<T>& feats) const {
    TPD_CHECK_MSG(feats->shape().rank() == 4 && feats->shape()[1] == kFeatureChannels,
                  "super-resolution expects 32 channels, got " << feats->shape().str());
    auto rgb = ag::slice_axis(feats, 1, 0, 3);
    auto skip = ag::upsample_bilinear(rgb, factor);
    auto h = nn::leaky(c1.forward(feats));
    h = ag::upsample_bilinear(h, factor);
    h = nn::leaky(c2.forward(h));
    return ag::add(skip, c3.forward(h));
  }

  int64_t macs(int64_t batch, int64_t h, int64_t w) const {
    return c1.macs(batch, h, w) + c2.macs(batch, h * factor, w * factor) +
           c3.macs(batch, h * factor, w * factor);
  }
};

// Style-modulated convolutional pyramid from a learned 4x4 constant up to the
// target resolution. `filtered` inserts a fixed low-pass after each upsample
// (the smoother StyleGAN3-flavoured variant); the plain variant skips it.
template <typename T>
struct SynthesisNet {
  ag::NodePtr<T> const_input;  // [C0,4,4]
  std::vector<nn::ModulatedConv2d<T>> convs;
  nn::Conv2d<T> head;  // 1x1 to the output channel count
  int64_t base = 4;
  int64_t out_res = 64;
  bool filtered = false;

  void init(nn::ParamStore<T>& store, const std::string& name, int64_t channels, int64_t style_dim,
            int64_t out_res_, int64_t out_channels, Rng& rng, bool filtered_ = false) {
    out_res = out_res_;
    filtered = filtered_;
    TPD_CHECK(out_res >= base && (out_res & (out_res - 1)) == 0);
    const_input = store.add(name + ".const", rng.normal_tensor<T>(Shape{channels, base, base}));
    int64_t levels = 0;
    for (int64_t r = base; r < out_res; r *= 2) ++levels;
    convs.resize(static_cast<size_t>(levels + 1));
    for (size_t i = 0; i < convs.size(); ++i)
      convs[i].init(store, name + ".conv" + std::to_string(i), channels, channels, style_dim, rng);
    head.init(store, name + ".head", channels, out_channels, 1, 1, 0, rng);
  }

  // style: [N, style_dim] -> [N, out_channels, out_res, out_res]
  ag::NodePtr<T> forward(const ag::NodePtr<T>& style) const {
    int64_t n = style->shape()[0];
    auto x = ag::broadcast_axis(const_input, 0, n);
    x = nn::leaky(convs[0].forward(x, style));
    for (size_t i = 1; i < convs.size(); ++i) {
      x = ag::upsample_bilinear(x, 2);
      if (filtered) x = ag::blur3x3(x);
      x = nn::leaky(convs[i].forward(x, style));
    }
    return head.forward(x);
  }

  int64_t macs(int64_t batch) const {
    int64_t total = 0, r = base;
    for (size_t i = 0; i < convs.size(); ++i) {
      total += convs[i].macs(batch, r, r);
      if (i + 1 < convs.size()) r *= 2;
    }
    return total + head.macs(batch, out_res, out_res);
  }
};

struct TeacherConfig {
  std::string kind = "procedural";  // "procedural" | "random"
  uint64_t seed = 1;
  int64_t d_z = 8;
  int64_t d_w = 128;
  int64_t mapping_hidden = 128;
  int64_t mapping_layers = 2;
  int64_t synthesis_channels = 64;
  int64_t sr_factor = 2;
  int64_t sr_channels = 48;
  int num_blobs = 1;
  bool include_anchor = true;  // fixed reference blob for pose identifiability
  bool canonical_swap = false;  // feed the canonical pose to the mapping

  int blob_channels() const { return num_blobs + (include_anchor ? 1 : 0); }
  FieldConfig field;
  RenderConfig render;
  PosePrior prior;
};

inline nlohmann::json teacher_config_json(const TeacherConfig& c) {
  nlohmann::json j;
  j["kind"] = c.kind;
  j["seed"] = c.seed;
  j["d_z"] = c.d_z;
  j["d_w"] = c.d_w;
  j["mapping_hidden"] = c.mapping_hidden;
  j["mapping_layers"] = c.mapping_layers;
  j["synthesis_channels"] = c.synthesis_channels;
  j["sr_factor"] = c.sr_factor;
  j["sr_channels"] = c.sr_channels;
  j["num_blobs"] = c.num_blobs;
  j["include_anchor"] = c.include_anchor;
  j["canonical_swap"] = c.canonical_swap;
  j["field"] = {{"plane_resolution", c.field.plane_resolution},
                {"plane_channels", c.field.plane_channels},
                {"decoder_hidden", c.field.decoder_hidden},
                {"bound", c.field.bound}};
  j["render"] = {{"resolution", c.render.resolution}, {"n_coarse", c.render.n_coarse},
                 {"n_fine", c.render.n_fine},         {"near", c.render.near},
                 {"far", c.render.far},               {"jitter", c.render.jitter}};
  j["prior"] = {{"radius", c.prior.radius},   {"yaw_min", c.prior.yaw_min},
                {"yaw_max", c.prior.yaw_max}, {"pitch_min", c.prior.pitch_min},
                {"pitch_max", c.prior.pitch_max}, {"focal", c.prior.focal}};
  return j;
}

inline TeacherConfig teacher_config_from_json(const nlohmann::json& j) {
  TeacherConfig c;
  c.kind = j.at("kind").get<std::string>();
  c.seed = j.at("seed").get<uint64_t>();
  c.d_z = j.at("d_z").get<int64_t>();
  c.d_w = j.at("d_w").get<int64_t>();
  c.mapping_hidden = j.at("mapping_hidden").get<int64_t>();
  c.mapping_layers = j.at("mapping_layers").get<int64_t>();
  c.synthesis_channels = j.at("synthesis_channels").get<int64_t>();
  c.sr_factor = j.at("sr_factor").get<int64_t>();
  c.sr_channels = j.at("sr_channels").get<int64_t>();
  c.num_blobs = j.at("num_blobs").get<int>();
  c.include_anchor = j.at("include_anchor").get<bool>();
  c.canonical_swap = j.at("canonical_swap").get<bool>();
  c.field.plane_resolution = j.at("field").at("plane_resolution").get<int64_t>();
  c.field.plane_channels = j.at("field").at("plane_channels").get<int64_t>();
  c.field.decoder_hidden = j.at("field").at("decoder_hidden").get<int64_t>();
  c.field.bound = j.at("field").at("bound").get<double>();
  c.render.resolution = j.at("render").at("resolution").get<int64_t>();
  c.render.n_coarse = j.at("render").at("n_coarse").get<int64_t>();
  c.render.n_fine = j.at("render").at("n_fine").get<int64_t>();
  c.render.near = j.at("render").at("near").get<double>();
  c.render.far = j.at("render").at("far").get<double>();
  c.render.jitter = j.at("render").at("jitter").get<bool>();
  c.prior.radius = j.at("prior").at("radius").get<double>();
  c.prior.yaw_min = j.at("prior").at("yaw_min").get<double>();
  c.prior.yaw_max = j.at("prior").at("yaw_max").get<double>();
  c.prior.pitch_min = j.at("prior").at("pitch_min").get<double>();
  c.prior.pitch_max = j.at("prior").at("pitch_max").get<double>();
  c.prior.focal = j.at("prior").at("focal").get<double>();
  return c;
}

// Strong type for the teacher's intermediate style code; the student is
// conditioned on these, never on raw latents.
template <typename T>
struct StyleCode {
  Tensor<T> v;  // [d_w]
};

// One teacher output tuple for a (z, c) pair, detached from any graph.
template <typename T>
struct RenderBundle {
  StyleCode<T> w;
  Tensor<T> feat;  // [32,h,w]   I^f
  Tensor<T> lr;    // [3,h,w]    I^LR == feat[0:3]
  Tensor<T> hr;    // [3,H,W]    I^HR
  PoseVec pose_flat{};
  std::vector<double> z;
  double yaw = 0, pitch = 0;
};

template <typename T>
class Teacher {
 public:
  explicit Teacher(TeacherConfig cfg) : cfg_(std::move(cfg)) {
    TPD_CHECK_MSG(cfg_.kind == "procedural" || cfg_.kind == "random",
                  "unknown teacher kind " << cfg_.kind);
    TPD_CHECK_MSG(cfg_.d_z >= 6, "procedural field needs d_z >= 6");
    Rng rng(cfg_.seed);
    pose_feat_ = PoseFeaturizer::from_prior(cfg_.prior);

    std::vector<int64_t> dims{cfg_.d_z + kPoseDim};
    for (int64_t i = 0; i < cfg_.mapping_layers - 1; ++i) dims.push_back(cfg_.mapping_hidden);
    dims.push_back(cfg_.d_w);
    mapping_.init(params_, "mapping", dims, rng);

    if (cfg_.kind == "random") {
      synthesis_.init(params_, "synthesis", cfg_.synthesis_channels, cfg_.d_w,
                      cfg_.field.plane_resolution, 3 * cfg_.field.plane_channels, rng);
      decoder_.init_random(params_, "decoder", cfg_.field.plane_channels,
                           cfg_.field.decoder_hidden, rng);
    } else {
      decoder_ = make_procedural_decoder<T>(params_, "decoder", cfg_.field, cfg_.blob_channels());
    }
    sr_.init(params_, "sr", cfg_.sr_factor, cfg_.sr_channels, rng);
    set_frozen(true);
  }

  const TeacherConfig& config() const { return cfg_; }
  const nn::ParamStore<T>& params() const { return params_; }
  nn::ParamStore<T>& mutable_params() { return params_; }
  const SuperResolution<T>& sr() const { return sr_; }
  const FieldDecoder<T>& decoder() const { return decoder_; }
  const PoseFeaturizer& pose_featurizer() const { return pose_feat_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool on) {
    frozen_ = on;
    params_.set_trainable(!on);
  }

  // w = M(z, c): [N,d_z] x poses -> [N,d_w]
  ag::NodePtr<T> map_latent(const ag::NodePtr<T>& z, const std::vector<PoseVec>& poses) const {
    TPD_CHECK(z->shape().rank() == 2 && z->shape()[1] == cfg_.d_z);
    TPD_CHECK(static_cast<int64_t>(poses.size()) == z->shape()[0]);
    std::vector<PoseVec> mapped = poses;
    if (cfg_.canonical_swap)
      for (auto& p : mapped) p = pose_feat_.canonical;
    auto pf = ag::constant(pose_feat_.featurize<T>(mapped));
    return mapping_.forward(ag::concat_axis(z, pf, 1));
  }

  // S(w) for the random teacher: [N,d_w] -> N tri-plane sets
  std::vector<TriPlanes<T>> synthesize_triplanes(const ag::NodePtr<T>& w) const {
    TPD_CHECK_MSG(cfg_.kind == "random", "procedural teacher builds planes from the latent");
    auto raw = synthesis_.forward(w);  // [N, 3C, R, R]
    std::vector<TriPlanes<T>> out;
    int64_t c = cfg_.field.plane_channels, r = cfg_.field.plane_resolution;
    for (int64_t n = 0; n < w->shape()[0]; ++n) {
      TriPlanes<T> tp;
      tp.bound = cfg_.field.bound;
      auto one = ag::reshape(ag::slice_axis(raw, 0, n, n + 1), Shape{3 * c, r, r});
      for (int64_t p = 0; p < 3; ++p)
        tp.planes[static_cast<size_t>(p)] = ag::slice_axis(one, 0, p * c, (p + 1) * c);
      out.push_back(std::move(tp));
    }
    return out;
  }

  // Planes for one latent; the procedural kind also yields the analytic
  // scene plus a decoder view whose color rows are set for that scene (the
  // checkpointed base decoder stays untouched, so concurrent forwards do not
  // race).
  struct PlanesForLatent {
    TriPlanes<T> planes;
    std::optional<BlobScene> scene;
    FieldDecoder<T> decoder;
  };

  PlanesForLatent planes_for_latent(const std::vector<double>& z, const ag::NodePtr<T>& w) const {
    if (cfg_.kind == "procedural") {
      auto field =
          procedural_triplanes<T>(z, cfg_.field, cfg_.num_blobs, cfg_.include_anchor);
      FieldDecoder<T> dec = decoder_;
      dec.w2 = ag::constant(decoder_.w2->value);  // private copy for the color rows
      set_procedural_colors(dec, field.scene, cfg_.field);
      return {field.planes, field.scene, dec};
    }
    return {synthesize_triplanes(w)[0], std::nullopt, decoder_};
  }

  ag::NodePtr<T> super_resolve(const ag::NodePtr<T>& feats) const { return sr_.forward(feats); }

  // Full frozen forward for one (z, c); always runs detached.
  RenderBundle<T> forward(const std::vector<double>& z, const CameraPose& pose, double yaw = 0,
                          double pitch = 0) const {
    TPD_CHECK_MSG(frozen_, "teacher_forward requires a frozen teacher");
    ag::NoGradGuard ng;
    Tensor<T> zt(Shape{1, cfg_.d_z});
    for (int64_t i = 0; i < cfg_.d_z; ++i) zt[i] = static_cast<T>(z[static_cast<size_t>(i)]);
    PoseVec flat = flatten_pose(pose);
    auto w = map_latent(ag::constant(std::move(zt)), {flat});
    auto planes = planes_for_latent(z, w);

    auto render = render_view(FieldRef<T>{&planes.planes, &planes.decoder}, pose, cfg_.render);
    auto feats4 = ag::reshape(render.feature_image,
                              Shape{1, kFeatureChannels, cfg_.render.resolution, cfg_.render.resolution});
    auto hr = sr_.forward(feats4);

    RenderBundle<T> bundle;
    bundle.w.v = w->value.reshaped(Shape{cfg_.d_w});
    bundle.feat = render.feature_image->value;
    // I^LR is bit-exactly the first three feature channels
    {
      int64_t hw = cfg_.render.resolution * cfg_.render.resolution;
      Tensor<T> lr(Shape{3, cfg_.render.resolution, cfg_.render.resolution});
      std::copy(bundle.feat.data(), bundle.feat.data() + 3 * hw, lr.data());
      bundle.lr = std::move(lr);
    }
    bundle.hr = hr->value.reshaped(Shape{3, cfg_.render.resolution * cfg_.sr_factor,
                                         cfg_.render.resolution * cfg_.sr_factor});
    bundle.pose_flat = flat;
    bundle.z = z;
    bundle.yaw = yaw;
    bundle.pitch = pitch;
    return bundle;
  }

  int64_t render_macs_per_image() const {
    // mapping + (synthesis) + ray marching + super-resolution
    int64_t n = 0;
    n += mapping_.macs(1);
    if (cfg_.kind == "random") n += synthesis_.macs(1);
    int64_t rays = cfg_.render.resolution * cfg_.render.resolution;
    int64_t points = rays * (cfg_.render.n_coarse +
                             (cfg_.render.n_fine > 0 ? cfg_.render.n_coarse + cfg_.render.n_fine : 0));
    n += points * (3 * 4 * cfg_.field.plane_channels + decoder_.macs_per_point());
    n += sr_.macs(1, cfg_.render.resolution, cfg_.render.resolution);
    return n;
  }

  void save(const std::string& path) const {
    CheckpointWriter w;
    w.set_meta("model", "teacher");
    w.set_meta("config", teacher_config_json(cfg_));
    w.add_store("teacher.", params_);
    w.write(path);
  }

  static Teacher load(const std::string& path) {
    CheckpointReader r(path);
    TPD_CHECK_MSG(r.meta().value("model", "") == "teacher", "not a teacher checkpoint");
    Teacher t(teacher_config_from_json(r.meta().at("config")));
    r.load_store("teacher.", t.params_);
    t.set_frozen(true);
    return t;
  }

 private:
  TeacherConfig cfg_;
  nn::ParamStore<T> params_;
  nn::Mlp<T> mapping_;
  SynthesisNet<T> synthesis_;
  FieldDecoder<T> decoder_;
  SuperResolution<T> sr_;
  PoseFeaturizer pose_feat_;
  bool frozen_ = true;
};

}  // namespace tpd
