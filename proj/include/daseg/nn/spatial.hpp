#pragma once

#include <vector>

#include "daseg/nn/graph.hpp"

namespace daseg::nn {

struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int groups = 1;
};

inline int conv_out_size(int in, const ConvSpec& s) {
  return (in + 2 * s.pad - s.dilation * (s.kernel - 1) - 1) / s.stride + 1;
}

namespace detail {

/// Gathers conv patches of one channel group into a (Ho*Wo) x (k*k*cin_g)
/// matrix. Column layout: (ky*k + kx)*cin_g + ci.
template <typename T>
typename Tensor<T>::Mat im2col_group(const Tensor<T>& x, const ConvSpec& s, int group,
                                     int cin_g, int ho, int wo) {
  typename Tensor<T>::Mat cols(static_cast<Eigen::Index>(ho) * wo, s.kernel * s.kernel * cin_g);
  cols.setZero();
  const int c0 = group * cin_g;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index r = static_cast<Eigen::Index>(oy) * wo + ox;
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dilation;
        if (iy < 0 || iy >= x.h) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dilation;
          if (ix < 0 || ix >= x.w) continue;
          cols.block(r, (ky * s.kernel + kx) * cin_g, 1, cin_g) =
              x.m.block(static_cast<Eigen::Index>(iy) * x.w + ix, c0, 1, cin_g);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col_group: scatter-adds patch gradients back into dx.
template <typename T>
void col2im_group(const typename Tensor<T>::Mat& dcols, Tensor<T>& dx, const ConvSpec& s,
                  int group, int cin_g, int ho, int wo) {
  const int c0 = group * cin_g;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index r = static_cast<Eigen::Index>(oy) * wo + ox;
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int iy = oy * s.stride - s.pad + ky * s.dilation;
        if (iy < 0 || iy >= dx.h) continue;
        for (int kx = 0; kx < s.kernel; ++kx) {
          const int ix = ox * s.stride - s.pad + kx * s.dilation;
          if (ix < 0 || ix >= dx.w) continue;
          dx.m.block(static_cast<Eigen::Index>(iy) * dx.w + ix, c0, 1, cin_g) +=
              dcols.block(r, (ky * s.kernel + kx) * cin_g, 1, cin_g);
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution with zero padding, stride, dilation and channel groups.
/// Weight shape: (k*k*cin_per_group, 1, cout); bias (1,1,cout).
/// Depthwise convolution is groups == cin with cout == cin.
template <typename T>
Var<T> conv2d(Tape<T>& t, Var<T> x, Var<T> weight, Var<T> bias, const ConvSpec& s) {
  const int cin = x->val.c, cout = bias->val.c;
  require(cin % s.groups == 0 && cout % s.groups == 0, "conv2d: groups must divide channels");
  const int cin_g = cin / s.groups, cout_g = cout / s.groups;
  require(weight->val.rows() == s.kernel * s.kernel * cin_g && weight->val.c == cout,
          "conv2d: weight shape mismatch");
  const int ho = conv_out_size(x->val.h, s), wo = conv_out_size(x->val.w, s);
  require(ho > 0 && wo > 0, "conv2d: output size must be positive");

  auto cols = std::make_shared<std::vector<typename Tensor<T>::Mat>>();
  cols->reserve(s.groups);
  Tensor<T> out(ho, wo, cout);
  for (int g = 0; g < s.groups; ++g) {
    cols->push_back(detail::im2col_group(x->val, s, g, cin_g, ho, wo));
    out.m.middleCols(g * cout_g, cout_g).noalias() =
        cols->back() * weight->val.m.middleCols(g * cout_g, cout_g);
  }
  out.m.rowwise() += bias->val.m.row(0);

  return t.op(std::move(out), {x, weight, bias},
              [x, weight, bias, cols, s, cin_g, cout_g, ho, wo](Node<T>& self) {
                const auto& G = self.grad.m;
                if (bias->needs_grad) bias->grad.m.row(0) += G.colwise().sum();
                for (int g = 0; g < s.groups; ++g) {
                  auto Gg = G.middleCols(g * cout_g, cout_g);
                  if (weight->needs_grad)
                    weight->grad.m.middleCols(g * cout_g, cout_g).noalias() +=
                        (*cols)[g].transpose() * Gg;
                  if (x->needs_grad) {
                    typename Tensor<T>::Mat dcols =
                        Gg * weight->val.m.middleCols(g * cout_g, cout_g).transpose();
                    detail::col2im_group<T>(dcols, x->grad, s, g, cin_g, ho, wo);
                  }
                }
              });
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

enum class ResizeMode { bilinear, nearest };

namespace detail {

template <typename T>
struct AxisTap {
  int i0, i1;
  T w0, w1;
};

/// Half-pixel-center sampling taps (align-corners disabled), edges clamped.
template <typename T>
std::vector<AxisTap<T>> resize_taps(int in, int out, ResizeMode mode) {
  std::vector<AxisTap<T>> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    if (mode == ResizeMode::nearest) {
      int i = static_cast<int>(std::floor((o + 0.5) * scale));
      i = std::min(std::max(i, 0), in - 1);
      taps[o] = {i, i, T(1), T(0)};
    } else {
      double src = (o + 0.5) * scale - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
      int i0 = static_cast<int>(std::floor(src));
      i0 = std::min(i0, in - 1);
      const T f = static_cast<T>(src - i0);
      const int i1 = std::min(i0 + 1, in - 1);
      taps[o] = {i0, i1, T(1) - f, f};
    }
  }
  return taps;
}

}  // namespace detail

/// Channelwise resampling to (oh x ow). This is the project-wide resize
/// convention: half-pixel centers, no corner alignment, clamped borders.
template <typename T>
Tensor<T> resize_tensor(const Tensor<T>& x, int oh, int ow,
                        ResizeMode mode = ResizeMode::bilinear) {
  require(x.h > 0 && x.w > 0 && oh > 0 && ow > 0, "resize: sizes must be positive");
  const auto ty = detail::resize_taps<T>(x.h, oh, mode);
  const auto tx = detail::resize_taps<T>(x.w, ow, mode);
  Tensor<T> out(oh, ow, x.c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      auto row = out.m.row(static_cast<Eigen::Index>(oy) * ow + ox);
      const auto& ay = ty[oy];
      const auto& ax = tx[ox];
      row = ay.w0 * ax.w0 * x.m.row(static_cast<Eigen::Index>(ay.i0) * x.w + ax.i0);
      if (ax.w1 != T(0)) row += ay.w0 * ax.w1 * x.m.row(static_cast<Eigen::Index>(ay.i0) * x.w + ax.i1);
      if (ay.w1 != T(0)) {
        row += ay.w1 * ax.w0 * x.m.row(static_cast<Eigen::Index>(ay.i1) * x.w + ax.i0);
        if (ax.w1 != T(0)) row += ay.w1 * ax.w1 * x.m.row(static_cast<Eigen::Index>(ay.i1) * x.w + ax.i1);
      }
    }
  }
  return out;
}

template <typename T>
Var<T> resize(Tape<T>& t, Var<T> x, int oh, int ow, ResizeMode mode = ResizeMode::bilinear) {
  Tensor<T> out = resize_tensor(x->val, oh, ow, mode);
  const int ih = x->val.h, iw = x->val.w;
  return t.op(std::move(out), {x}, [x, oh, ow, ih, iw, mode](Node<T>& self) {
    if (!x->needs_grad) return;
    const auto ty = detail::resize_taps<T>(ih, oh, mode);
    const auto tx = detail::resize_taps<T>(iw, ow, mode);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const auto g = self.grad.m.row(static_cast<Eigen::Index>(oy) * ow + ox);
        const auto& ay = ty[oy];
        const auto& ax = tx[ox];
        x->grad.m.row(static_cast<Eigen::Index>(ay.i0) * iw + ax.i0) += ay.w0 * ax.w0 * g;
        if (ax.w1 != T(0)) x->grad.m.row(static_cast<Eigen::Index>(ay.i0) * iw + ax.i1) += ay.w0 * ax.w1 * g;
        if (ay.w1 != T(0)) {
          x->grad.m.row(static_cast<Eigen::Index>(ay.i1) * iw + ax.i0) += ay.w1 * ax.w0 * g;
          if (ax.w1 != T(0)) x->grad.m.row(static_cast<Eigen::Index>(ay.i1) * iw + ax.i1) += ay.w1 * ax.w1 * g;
        }
      }
    }
  });
}

}  // namespace daseg::nn
