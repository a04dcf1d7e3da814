#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace daseg {

// Label value marking pixels excluded from losses and metrics.
inline constexpr int kIgnoreLabel = 255;

// Integer label map, (h x w), row-major so (y, x) indexing is natural.
using LabelMap = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense spatial tensor of shape (h, w, c), stored as an (h*w) x c matrix.
/// Pixel (y, x) lives in row y*w + x; each column is one channel plane.
/// Non-spatial matrices reuse the same type with h = rows, w = 1.
template <typename T>
struct Tensor {
  using Scalar = T;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

  int h = 0, w = 0, c = 0;
  Mat m;

  Tensor() = default;
  Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), m(Mat::Zero(h_ * w_, c_)) {}
  Tensor(int h_, int w_, int c_, Mat values) : h(h_), w(w_), c(c_), m(std::move(values)) {
    if (m.rows() != static_cast<Eigen::Index>(h) * w || m.cols() != c)
      throw std::invalid_argument("Tensor: value matrix does not match shape");
  }

  static Tensor zeros(int h_, int w_, int c_) { return Tensor(h_, w_, c_); }
  static Tensor full(int h_, int w_, int c_, T v) {
    Tensor t(h_, w_, c_);
    t.m.setConstant(v);
    return t;
  }
  static Tensor scalar(T v) { return full(1, 1, 1, v); }

  int rows() const { return h * w; }
  bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }
  bool is_scalar() const { return h == 1 && w == 1 && c == 1; }
  T scalar_value() const { return m(0, 0); }

  T& operator()(int y, int x, int ch) { return m(static_cast<Eigen::Index>(y) * w + x, ch); }
  T operator()(int y, int x, int ch) const { return m(static_cast<Eigen::Index>(y) * w + x, ch); }

  std::string shape_str() const {
    return "(" + std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c) + ")";
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.h = h;
    out.w = w;
    out.c = c;
    out.m = m.template cast<U>();
    return out;
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace daseg
