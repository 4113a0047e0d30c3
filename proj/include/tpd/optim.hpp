// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tpd/autodiff.hpp"
#include "tpd/nn.hpp"

namespace tpd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam over a named parameter list. Moment buffers are exposed for
// checkpointing so a resumed run continues the exact trajectory.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(const nn::ParamStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
    for (auto& [name, p] : store.items()) {
      names_.push_back(name);
      params_.push_back(p);
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  void step(const std::vector<ag::NodePtr<T>>& grads) {
    TPD_CHECK(grads.size() == params_.size());
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i]->requires_grad) continue;
      Tensor<T>& p = params_[i]->value;
      const Tensor<T>& g = grads[i]->value;
      TPD_CHECK(g.shape() == p.shape());
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (int64_t j = 0; j < p.numel(); ++j) {
        double gj = static_cast<double>(g[j]);
        double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        p[j] -= static_cast<T>(cfg_.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps));
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  const std::vector<std::string>& names() const { return names_; }

  // checkpoint access
  std::vector<std::pair<std::string, const Tensor<T>*>> state_tensors() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (size_t i = 0; i < names_.size(); ++i) {
      out.emplace_back("adam.m." + names_[i], &m_[i]);
      out.emplace_back("adam.v." + names_[i], &v_[i]);
    }
    return out;
  }
  void load_state(const std::string& name, const Tensor<T>& t) {
    for (size_t i = 0; i < names_.size(); ++i) {
      if (name == "adam.m." + names_[i]) {
        TPD_CHECK(t.shape() == m_[i].shape());
        m_[i] = t;
        return;
      }
      if (name == "adam.v." + names_[i]) {
        TPD_CHECK(t.shape() == v_[i].shape());
        v_[i] = t;
        return;
      }
    }
    TPD_CHECK_MSG(false, "unknown optimizer state " << name);
  }
  void set_steps(int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  std::vector<std::string> names_;
  std::vector<ag::NodePtr<T>> params_;
  std::vector<Tensor<T>> m_, v_;
  int64_t t_ = 0;
};

}  // namespace tpd
