// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0
//
// The convolutional student: consumes the teacher's style code w and a target
// pose, maps them to its own style w', and predicts the 32-channel feature
// image with a modulated-conv pyramid — no ray marching anywhere, so cost and
// memory are fixed by the architecture, not by depth-sample counts. The
// super-resolution head is architecturally identical to the teacher's and is
// initialized from it.

#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "tpd/teacher.hpp"

namespace tpd {

// A batch of teacher style codes; the student's conditioning input is a
// style code, never a raw latent.
template <typename T>
struct StyleBatch {
  Tensor<T> values;  // [N, d_w]
};

template <typename T>
StyleBatch<T> batch_styles(const std::vector<StyleCode<T>>& codes) {
  TPD_CHECK(!codes.empty());
  int64_t d = codes[0].v.numel();
  StyleBatch<T> out{Tensor<T>(Shape{static_cast<int64_t>(codes.size()), d})};
  for (size_t i = 0; i < codes.size(); ++i) {
    TPD_CHECK(codes[i].v.numel() == d);
    std::copy(codes[i].v.data(), codes[i].v.data() + d,
              out.values.data() + static_cast<int64_t>(i) * d);
  }
  return out;
}

struct StudentConfig {
  uint64_t seed = 2;
  int64_t d_w = 128;       // incoming teacher style dimension
  int64_t d_wprime = 128;  // student style dimension
  int64_t mapping_hidden = 128;
  int64_t mapping_layers = 2;
  int64_t synthesis_channels = 64;
  int64_t feature_resolution = 32;  // must match the teacher render resolution
  int64_t sr_factor = 2;
  int64_t sr_channels = 48;
  std::string backbone = "plain";  // "plain" | "filtered"
};

inline nlohmann::json student_config_json(const StudentConfig& c) {
  return {{"seed", c.seed},
          {"d_w", c.d_w},
          {"d_wprime", c.d_wprime},
          {"mapping_hidden", c.mapping_hidden},
          {"mapping_layers", c.mapping_layers},
          {"synthesis_channels", c.synthesis_channels},
          {"feature_resolution", c.feature_resolution},
          {"sr_factor", c.sr_factor},
          {"sr_channels", c.sr_channels},
          {"backbone", c.backbone}};
}

inline StudentConfig student_config_from_json(const nlohmann::json& j) {
  StudentConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  c.d_w = j.at("d_w").get<int64_t>();
  c.d_wprime = j.at("d_wprime").get<int64_t>();
  c.mapping_hidden = j.at("mapping_hidden").get<int64_t>();
  c.mapping_layers = j.at("mapping_layers").get<int64_t>();
  c.synthesis_channels = j.at("synthesis_channels").get<int64_t>();
  c.feature_resolution = j.at("feature_resolution").get<int64_t>();
  c.sr_factor = j.at("sr_factor").get<int64_t>();
  c.sr_channels = j.at("sr_channels").get<int64_t>();
  c.backbone = j.at("backbone").get<std::string>();
  return c;
}

template <typename T>
struct StudentOutput {
  ag::NodePtr<T> feat;  // [N,32,h,w]  I'^f
  ag::NodePtr<T> lr;    // [N,3,h,w]   I'^LR = feat[:, 0:3]
  ag::NodePtr<T> hr;    // [N,3,H,W]   I'^HR
};

template <typename T>
class Student {
 public:
  Student(StudentConfig cfg, const PosePrior& prior) : cfg_(std::move(cfg)), prior_(prior) {
    TPD_CHECK_MSG(cfg_.backbone == "plain" || cfg_.backbone == "filtered",
                  "unknown backbone " << cfg_.backbone);
    Rng rng(cfg_.seed);
    pose_feat_ = PoseFeaturizer::from_prior(prior_);
    std::vector<int64_t> dims{cfg_.d_w + kPoseDim};
    for (int64_t i = 0; i < cfg_.mapping_layers - 1; ++i) dims.push_back(cfg_.mapping_hidden);
    dims.push_back(cfg_.d_wprime);
    mapping_.init(params_, "mapping", dims, rng);
    synthesis_.init(params_, "synthesis", cfg_.synthesis_channels, cfg_.d_wprime,
                    cfg_.feature_resolution, kFeatureChannels, rng,
                    cfg_.backbone == "filtered");
    sr_.init(params_, "sr", cfg_.sr_factor, cfg_.sr_channels, rng);
  }

  const StudentConfig& config() const { return cfg_; }
  const PosePrior& prior() const { return prior_; }
  const nn::ParamStore<T>& params() const { return params_; }
  nn::ParamStore<T>& mutable_params() { return params_; }
  const SuperResolution<T>& sr() const { return sr_; }

  // w' = M2D(w, c)
  ag::NodePtr<T> map_style(const StyleBatch<T>& w, const std::vector<PoseVec>& poses) const {
    auto pf = ag::constant(pose_feat_.featurize<T>(poses));
    return map_style_node(w, pf);
  }

  // differentiable entry: pose features as a graph node (normalized 25-vectors)
  ag::NodePtr<T> map_style_node(const StyleBatch<T>& w, const ag::NodePtr<T>& pose_features) const {
    TPD_CHECK(w.values.shape().rank() == 2 && w.values.shape()[1] == cfg_.d_w);
    TPD_CHECK((pose_features->shape() == Shape{w.values.shape()[0], kPoseDim}));
    return mapping_.forward(ag::concat_axis(ag::constant(w.values), pose_features, 1));
  }

  const PoseFeaturizer& pose_featurizer() const { return pose_feat_; }

  // purely convolutional feature prediction; output in (0,1) like the
  // teacher's composited features
  ag::NodePtr<T> predict_features(const ag::NodePtr<T>& wprime) const {
    return ag::sigmoid(synthesis_.forward(wprime));
  }

  ag::NodePtr<T> super_resolve(const ag::NodePtr<T>& feats) const { return sr_.forward(feats); }

  StudentOutput<T> forward(const StyleBatch<T>& w, const std::vector<PoseVec>& poses) const {
    auto wprime = map_style(w, poses);
    auto feat = predict_features(wprime);
    StudentOutput<T> out;
    out.feat = feat;
    out.lr = ag::slice_axis(feat, 1, 0, 3);
    out.hr = sr_.forward(feat);
    return out;
  }

  // Copy the teacher's super-resolution weights (shapes must match); they
  // stay trainable afterwards.
  void init_from_teacher(const Teacher<T>& teacher) {
    TPD_CHECK_MSG(teacher.config().sr_factor == cfg_.sr_factor &&
                      teacher.config().sr_channels == cfg_.sr_channels,
                  "super-resolution architecture mismatch");
    for (auto& [name, p] : params_.items()) {
      if (name.rfind("sr.", 0) != 0) continue;
      auto src = teacher.params().find(name);
      TPD_CHECK_MSG(src->shape() == p->shape(), "shape mismatch for " << name);
      p->value = src->value;
      p->requires_grad = true;
    }
  }

  // Static op-count audit: a pure function of the architecture. Scene content
  // and any depth-sampling configuration cannot change it.
  int64_t macs_per_image() const {
    int64_t n = mapping_.macs(1) + synthesis_.macs(1);
    int64_t r = cfg_.feature_resolution;
    n += sr_.macs(1, r, r);
    return n;
  }

  int64_t param_count() const { return params_.count_scalars(); }

  void save(const std::string& path) const {
    CheckpointWriter w;
    w.set_meta("model", "student");
    w.set_meta("config", student_config_json(cfg_));
    w.set_meta("prior", {{"radius", prior_.radius},
                         {"yaw_min", prior_.yaw_min},
                         {"yaw_max", prior_.yaw_max},
                         {"pitch_min", prior_.pitch_min},
                         {"pitch_max", prior_.pitch_max},
                         {"focal", prior_.focal}});
    w.add_store("student.", params_);
    w.write(path);
  }

  static Student load(const std::string& path) {
    CheckpointReader r(path);
    TPD_CHECK_MSG(r.meta().value("model", "") == "student", "not a student checkpoint");
    PosePrior prior;
    const auto& pj = r.meta().at("prior");
    prior.radius = pj.at("radius").get<double>();
    prior.yaw_min = pj.at("yaw_min").get<double>();
    prior.yaw_max = pj.at("yaw_max").get<double>();
    prior.pitch_min = pj.at("pitch_min").get<double>();
    prior.pitch_max = pj.at("pitch_max").get<double>();
    prior.focal = pj.at("focal").get<double>();
    Student s(student_config_from_json(r.meta().at("config")), prior);
    r.load_store("student.", s.params_);
    return s;
  }

 private:
  StudentConfig cfg_;
  PosePrior prior_;
  nn::ParamStore<T> params_;
  nn::Mlp<T> mapping_;
  SynthesisNet<T> synthesis_;
  SuperResolution<T> sr_;
  PoseFeaturizer pose_feat_;
};

}  // namespace tpd
