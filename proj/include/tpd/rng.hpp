// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "tpd/common.hpp"
#include "tpd/tensor.hpp"

namespace tpd {

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// streams are identical across standard libraries; state round-trips through
// text for checkpointing.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; no cached spare so the stream stays a pure function of draws.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // integer in [0, n)
  int64_t randint(int64_t n) {
    TPD_CHECK(n > 0);
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  Tensor<T> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal() * stddev);
    return t;
  }

  template <typename T>
  Tensor<T> uniform_tensor(Shape shape, double lo, double hi) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
    return t;
  }

  std::string save_state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    TPD_CHECK_MSG(!is.fail(), "bad rng state string");
  }

  uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

}  // namespace tpd
