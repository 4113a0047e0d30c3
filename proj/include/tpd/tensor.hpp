// Copyright 2026 The tpd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "tpd/common.hpp"

namespace tpd {

// Running byte count of live Tensor storage. The benchmark harness resets the
// peak before a run and reads it afterwards; this tracks tensor payloads only,
// not general heap usage.
struct MemStats {
  static std::atomic<int64_t>& current() {
    static std::atomic<int64_t> v{0};
    return v;
  }
  static std::atomic<int64_t>& peak() {
    static std::atomic<int64_t> v{0};
    return v;
  }
  static void on_alloc(int64_t bytes) {
    int64_t now = current().fetch_add(bytes) + bytes;
    int64_t p = peak().load();
    while (now > p && !peak().compare_exchange_weak(p, now)) {
    }
  }
  static void on_free(int64_t bytes) { current().fetch_sub(bytes); }
  static void reset_peak() { peak().store(current().load()); }
};

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : dims_(dims) {}
  explicit Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) {}

  int64_t rank() const { return static_cast<int64_t>(dims_.size()); }
  int64_t operator[](int64_t i) const { return dims_[static_cast<size_t>(i)]; }
  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : dims_) n *= d;
    return n;
  }
  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  const std::vector<int64_t>& dims() const { return dims_; }

  std::string str() const {
    std::string s = "[";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int64_t> dims_;
};

// Dense row-major array. Value semantics; copies are deep.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(static_cast<size_t>(shape_.numel()), T(0)) {
    MemStats::on_alloc(bytes());
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    TPD_CHECK_MSG(static_cast<int64_t>(data_.size()) == shape_.numel(),
                  "data size " << data_.size() << " vs shape " << shape_.str());
    MemStats::on_alloc(bytes());
  }
  Tensor(const Tensor& o) : shape_(o.shape_), data_(o.data_) { MemStats::on_alloc(bytes()); }
  Tensor(Tensor&& o) noexcept : shape_(std::move(o.shape_)), data_(std::move(o.data_)) { o.shape_ = Shape(); }
  Tensor& operator=(const Tensor& o) {
    if (this != &o) {
      MemStats::on_free(bytes());
      shape_ = o.shape_;
      data_ = o.data_;
      MemStats::on_alloc(bytes());
    }
    return *this;
  }
  Tensor& operator=(Tensor&& o) noexcept {
    if (this != &o) {
      MemStats::on_free(bytes());
      shape_ = std::move(o.shape_);
      data_ = std::move(o.data_);
      o.shape_ = Shape();
    }
    return *this;
  }
  ~Tensor() { MemStats::on_free(bytes()); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return full(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t bytes() const { return static_cast<int64_t>(data_.size() * sizeof(T)); }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  T item() const {
    TPD_CHECK(numel() == 1);
    return data_[0];
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  Tensor reshaped(Shape s) const {
    TPD_CHECK_MSG(s.numel() == numel(), "reshape " << shape_.str() << " -> " << s.str());
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  TPD_CHECK(a.shape() == b.shape());
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace tpd
