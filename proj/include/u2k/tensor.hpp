// Dense 1- to 3-axis tensors. 2-axis tensors are row-major; 3-axis tensors
// are image cubes [H, W, B] stored band-sequential (band outermost, each
// band a contiguous row-major H x W plane), matching the on-disk cube layout.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/rng.hpp"

namespace u2k {

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims, T fill = T(0)) : dims_(std::move(dims)) {
    require(!dims_.empty() && dims_.size() <= 3, ErrorKind::Config, "tensor rank must be 1..3");
    std::size_t n = 1;
    for (int d : dims_) {
      require(d > 0, ErrorKind::Config, "tensor extents must be positive");
      n *= std::size_t(d);
    }
    data_.assign(n, fill);
  }

  static Tensor vec(int n, T fill = T(0)) { return Tensor({n}, fill); }
  static Tensor mat(int r, int c, T fill = T(0)) { return Tensor({r, c}, fill); }
  static Tensor cube(int h, int w, int b, T fill = T(0)) { return Tensor({h, w, b}, fill); }
  static Tensor scalar(T v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return int(dims_.size()); }
  int dim(int i) const { return dims_[std::size_t(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-axis access, row-major
  T& at(int r, int c) { return data_[std::size_t(r) * dims_[1] + c]; }
  const T& at(int r, int c) const { return data_[std::size_t(r) * dims_[1] + c]; }

  // 3-axis access, band outermost
  T& at3(int i, int j, int b) {
    return data_[(std::size_t(b) * dims_[0] + std::size_t(i)) * dims_[1] + std::size_t(j)];
  }
  const T& at3(int i, int j, int b) const {
    return data_[(std::size_t(b) * dims_[0] + std::size_t(i)) * dims_[1] + std::size_t(j)];
  }

  // contiguous H x W plane of band b
  T* plane(int b) { return data_.data() + std::size_t(b) * dims_[0] * dims_[1]; }
  const T* plane(int b) const { return data_.data() + std::size_t(b) * dims_[0] * dims_[1]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_dims(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  T min_value() const { return *std::min_element(data_.begin(), data_.end()); }
  T max_value() const { return *std::max_element(data_.begin(), data_.end()); }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (T& v : data_) v = T(rng.uniform(lo, hi));
  }
  void fill_normal(Rng& rng) {
    for (T& v : data_) v = T(rng.normal());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.reshape_raw(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = U(data_[i]);
    return out;
  }

  // internal: set dims and allocate without the public invariant checks
  void reshape_raw(const std::vector<int>& dims) {
    dims_ = dims;
    std::size_t n = 1;
    for (int d : dims_) n *= std::size_t(d);
    data_.assign(n, T(0));
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) s += (i ? "x" : "") + std::to_string(dims_[i]);
    return s + "]";
  }

 private:
  std::vector<int> dims_;
  std::vector<T> data_;
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_dims(b), ErrorKind::Config, "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

// plain mean absolute error on tensors, outside any graph
template <typename T>
double mae_value(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_dims(b), ErrorKind::Config, "mae: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return s / double(a.size());
}

}  // namespace u2k
