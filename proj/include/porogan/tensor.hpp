#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <cblas.h>

#include "porogan/error.hpp"

namespace porogan {

using Shape5 = std::array<std::size_t, 5>;

inline std::size_t shape_count(const Shape5& s) { return s[0] * s[1] * s[2] * s[3] * s[4]; }

inline std::string shape_string(const Shape5& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < 5; ++i) out += std::to_string(s[i]) + (i < 4 ? "," : ")");
  return out;
}

/// Dense (batch, channel, depth, height, width) array, width fastest.
template <typename T>
class Tensor5 {
 public:
  using value_type = T;

  Tensor5() = default;
  explicit Tensor5(Shape5 shape, T fill = T{}) : shape_(shape), data_(shape_count(shape), fill) {}
  Tensor5(Shape5 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_count(shape_), Errc::shape,
            "tensor data does not match shape " + shape_string(shape_));
  }

  const Shape5& shape() const { return shape_; }
  std::size_t extent(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  /// Elements per batch sample.
  std::size_t sample_size() const { return shape_[0] ? data_.size() / shape_[0] : 0; }
  std::size_t spatial_size() const { return shape_[2] * shape_[3] * shape_[4]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return (((n * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return data_[index(n, c, d, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return data_[index(n, c, d, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* sample(std::size_t n) { return data_.data() + n * sample_size(); }
  const T* sample(std::size_t n) const { return data_.data() + n * sample_size(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor5& o) const { return shape_ == o.shape_; }
  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor5&) const = default;

 private:
  Shape5 shape_{0, 0, 0, 0, 0};
  std::vector<T> data_;
};

template <typename T>
double sum(const Tensor5<T>& t) {
  double s = 0.0;
  for (T v : t.values()) s += static_cast<double>(v);
  return s;
}

template <typename T>
double dot(const Tensor5<T>& a, const Tensor5<T>& b) {
  require(a.same_shape(b), Errc::shape, "dot of mismatched tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

/// Trainable tensor with its gradient and Adam moment estimates.
template <typename T>
struct Parameter {
  Tensor5<T> value, grad, adam_m, adam_v;
  std::size_t step_count = 0;

  Parameter() = default;
  explicit Parameter(Shape5 shape, T fill = T{})
      : value(shape, fill), grad(shape), adam_m(shape), adam_v(shape) {}

  const Shape5& shape() const { return value.shape(); }
  void zero_grad() { grad.fill(T{}); }
};

template <typename T, typename Rng>
void fill_normal(Tensor5<T>& t, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> dist(mean, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

namespace blas {

enum class Trans { no, yes };

inline CBLAS_TRANSPOSE cb(Trans t) { return t == Trans::yes ? CblasTrans : CblasNoTrans; }

/// C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C, row-major.
inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, cb(ta), cb(tb), static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                 std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, cb(ta), cb(tb), static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

}  // namespace blas

}  // namespace porogan
