#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "daseg/core/tensor.hpp"

namespace daseg::nn {

template <typename T>
class Tape;

/// One value in the computation graph. Owned by a Tape; referenced by raw
/// pointer (stable, tape uses a deque).
template <typename T>
struct Node {
  Tensor<T> val;
  Tensor<T> grad;  // allocated (zeros) iff needs_grad
  bool needs_grad = false;
  std::function<void(Node<T>&)> back;  // pushes grad into parents
};

template <typename T>
using Var = Node<T>*;

/// Reverse-mode tape. Nodes are created in topological order by construction,
/// so backward() is a single reverse sweep. One backward pass per tape.
template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> v, bool requires_grad = false) {
    nodes_.emplace_back();
    Node<T>& n = nodes_.back();
    n.val = std::move(v);
    n.needs_grad = requires_grad;
    if (requires_grad) n.grad = Tensor<T>::zeros(n.val.h, n.val.w, n.val.c);
    return &n;
  }

  Var<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  template <typename F>
  Var<T> op(Tensor<T> v, std::initializer_list<Var<T>> parents, F&& back_fn) {
    bool ng = false;
    for (Var<T> p : parents) ng = ng || p->needs_grad;
    return make_node(std::move(v), ng, std::forward<F>(back_fn));
  }

  template <typename F>
  Var<T> op(Tensor<T> v, const std::vector<Var<T>>& parents, F&& back_fn) {
    bool ng = false;
    for (Var<T> p : parents) ng = ng || p->needs_grad;
    return make_node(std::move(v), ng, std::forward<F>(back_fn));
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(Var<T> loss) {
    require(loss->val.is_scalar(), "Tape::backward: loss must be scalar");
    require(loss->needs_grad, "Tape::backward: loss does not depend on any trainable leaf");
    loss->grad.m(0, 0) = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->needs_grad && it->back) it->back(*it);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  template <typename F>
  Var<T> make_node(Tensor<T> v, bool ng, F&& back_fn) {
    nodes_.emplace_back();
    Node<T>& n = nodes_.back();
    n.val = std::move(v);
    n.needs_grad = ng;
    if (ng) {
      n.grad = Tensor<T>::zeros(n.val.h, n.val.w, n.val.c);
      n.back = std::forward<F>(back_fn);
    }
    return &n;
  }

  std::deque<Node<T>> nodes_;
};

namespace detail {
template <typename T, typename MatExpr>
inline void accum(Var<T> p, const MatExpr& g) {
  if (p->needs_grad) p->grad.m += g;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Tape<T>& t, Var<T> a, Var<T> b) {
  require(a->val.same_shape(b->val), "add: shape mismatch " + a->val.shape_str() + " vs " + b->val.shape_str());
  Tensor<T> out(a->val.h, a->val.w, a->val.c, a->val.m + b->val.m);
  return t.op(std::move(out), {a, b}, [a, b](Node<T>& self) {
    detail::accum(a, self.grad.m);
    detail::accum(b, self.grad.m);
  });
}

template <typename T>
Var<T> sub(Tape<T>& t, Var<T> a, Var<T> b) {
  require(a->val.same_shape(b->val), "sub: shape mismatch");
  Tensor<T> out(a->val.h, a->val.w, a->val.c, a->val.m - b->val.m);
  return t.op(std::move(out), {a, b}, [a, b](Node<T>& self) {
    detail::accum(a, self.grad.m);
    detail::accum(b, -self.grad.m);
  });
}

template <typename T>
Var<T> mul(Tape<T>& t, Var<T> a, Var<T> b) {
  require(a->val.same_shape(b->val), "mul: shape mismatch");
  Tensor<T> out(a->val.h, a->val.w, a->val.c, a->val.m.cwiseProduct(b->val.m));
  return t.op(std::move(out), {a, b}, [a, b](Node<T>& self) {
    detail::accum(a, self.grad.m.cwiseProduct(b->val.m));
    detail::accum(b, self.grad.m.cwiseProduct(a->val.m));
  });
}

template <typename T>
Var<T> scale(Tape<T>& t, Var<T> a, T s) {
  Tensor<T> out(a->val.h, a->val.w, a->val.c, a->val.m * s);
  return t.op(std::move(out), {a}, [a, s](Node<T>& self) { detail::accum(a, self.grad.m * s); });
}

template <typename T>
Var<T> add_scalar(Tape<T>& t, Var<T> a, T s) {
  Tensor<T> out(a->val.h, a->val.w, a->val.c, a->val.m.array() + s);
  return t.op(std::move(out), {a}, [a](Node<T>& self) { detail::accum(a, self.grad.m); });
}

/// Multiplies every channel of x by a single-channel map (h, w, 1).
template <typename T>
Var<T> scale_by_map(Tape<T>& t, Var<T> x, Var<T> map) {
  require(map->val.c == 1 && map->val.h == x->val.h && map->val.w == x->val.w,
          "scale_by_map: map must be (h,w,1) matching x");
  Tensor<T> out(x->val.h, x->val.w, x->val.c,
                x->val.m.array().colwise() * map->val.m.col(0).array());
  return t.op(std::move(out), {x, map}, [x, map](Node<T>& self) {
    detail::accum(x, (self.grad.m.array().colwise() * map->val.m.col(0).array()).matrix());
    if (map->needs_grad)
      map->grad.m.col(0) += self.grad.m.cwiseProduct(x->val.m).rowwise().sum();
  });
}

/// General matrix product of the underlying (rows x cols) matrices with
/// optional transposes. The result carries shape (rows, 1, cols).
template <typename T>
Var<T> matmul(Tape<T>& t, Var<T> a, Var<T> b, bool ta = false, bool tb = false) {
  const auto& A = a->val.m;
  const auto& B = b->val.m;
  const Eigen::Index ar = ta ? A.cols() : A.rows(), ac = ta ? A.rows() : A.cols();
  const Eigen::Index br = tb ? B.cols() : B.rows(), bc = tb ? B.rows() : B.cols();
  require(ac == br, "matmul: inner dimension mismatch");
  typename Tensor<T>::Mat C(ar, bc);
  if (!ta && !tb) C.noalias() = A * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else C.noalias() = A.transpose() * B.transpose();
  Tensor<T> out(static_cast<int>(ar), 1, static_cast<int>(bc), std::move(C));
  return t.op(std::move(out), {a, b}, [a, b, ta, tb](Node<T>& self) {
    const auto& G = self.grad.m;
    const auto& A = a->val.m;
    const auto& B = b->val.m;
    if (a->needs_grad) {
      if (!ta && !tb) a->grad.m.noalias() += G * B.transpose();
      else if (!ta && tb) a->grad.m.noalias() += G * B;
      else if (ta && !tb) a->grad.m.noalias() += B * G.transpose();
      else a->grad.m.noalias() += B.transpose() * G.transpose();
    }
    if (b->needs_grad) {
      if (!ta && !tb) b->grad.m.noalias() += A.transpose() * G;
      else if (!ta && tb) b->grad.m.noalias() += G.transpose() * A;
      else if (ta && !tb) b->grad.m.noalias() += A * G;
      else b->grad.m.noalias() += G.transpose() * A.transpose();
    }
  });
}

/// Adds a (1,1,c) bias row to every row of x.
template <typename T>
Var<T> add_bias(Tape<T>& t, Var<T> x, Var<T> bias) {
  require(bias->val.rows() == 1 && bias->val.c == x->val.c, "add_bias: bias must be (1,1,c)");
  Tensor<T> out(x->val.h, x->val.w, x->val.c, x->val.m.rowwise() + bias->val.m.row(0));
  return t.op(std::move(out), {x, bias}, [x, bias](Node<T>& self) {
    detail::accum(x, self.grad.m);
    if (bias->needs_grad) bias->grad.m.row(0) += self.grad.m.colwise().sum();
  });
}

/// x * W + b over the channel dimension (a 1x1 convolution on spatial input).
template <typename T>
Var<T> linear(Tape<T>& t, Var<T> x, Var<T> weight, Var<T> bias) {
  Var<T> y = matmul(t, x, weight);
  y->val.h = x->val.h;
  y->val.w = x->val.w;
  if (y->needs_grad) {
    y->grad.h = x->val.h;
    y->grad.w = x->val.w;
  }
  return add_bias(t, y, bias);
}

/// Reinterprets the spatial layout (h*w must stay constant).
template <typename T>
Var<T> reshape_spatial(Tape<T>& t, Var<T> x, int h, int w) {
  require(h * w == x->val.rows(), "reshape_spatial: element count mismatch");
  Tensor<T> out(h, w, x->val.c, x->val.m);
  return t.op(std::move(out), {x}, [x](Node<T>& self) { detail::accum(x, self.grad.m); });
}

template <typename T>
Var<T> concat_channels(Tape<T>& t, const std::vector<Var<T>>& xs) {
  require(!xs.empty(), "concat_channels: empty input");
  const int h = xs[0]->val.h, w = xs[0]->val.w;
  int ctot = 0;
  for (Var<T> x : xs) {
    require(x->val.h == h && x->val.w == w, "concat_channels: spatial mismatch");
    ctot += x->val.c;
  }
  Tensor<T> out(h, w, ctot);
  int off = 0;
  for (Var<T> x : xs) {
    out.m.middleCols(off, x->val.c) = x->val.m;
    off += x->val.c;
  }
  return t.op(std::move(out), xs, [xs](Node<T>& self) {
    int off = 0;
    for (Var<T> x : xs) {
      if (x->needs_grad) x->grad.m += self.grad.m.middleCols(off, x->val.c);
      off += x->val.c;
    }
  });
}

template <typename T>
Var<T> slice_channels(Tape<T>& t, Var<T> x, int start, int n) {
  require(start >= 0 && n > 0 && start + n <= x->val.c, "slice_channels: out of range");
  Tensor<T> out(x->val.h, x->val.w, n, x->val.m.middleCols(start, n));
  return t.op(std::move(out), {x}, [x, start, n](Node<T>& self) {
    if (x->needs_grad) x->grad.m.middleCols(start, n) += self.grad.m;
  });
}

/// Copies x (h x w) into a zero canvas of (out_h x out_w) at offset (y0, x0).
template <typename T>
Var<T> zero_pad_spatial(Tape<T>& t, Var<T> x, int out_h, int out_w, int y0, int x0) {
  require(y0 >= 0 && x0 >= 0 && y0 + x->val.h <= out_h && x0 + x->val.w <= out_w,
          "zero_pad_spatial: placement out of bounds");
  Tensor<T> out(out_h, out_w, x->val.c);
  for (int y = 0; y < x->val.h; ++y)
    out.m.middleRows(static_cast<Eigen::Index>(y0 + y) * out_w + x0, x->val.w) =
        x->val.m.middleRows(static_cast<Eigen::Index>(y) * x->val.w, x->val.w);
  const int xh = x->val.h, xw = x->val.w;
  return t.op(std::move(out), {x}, [x, out_w, y0, x0, xh, xw](Node<T>& self) {
    if (!x->needs_grad) return;
    for (int y = 0; y < xh; ++y)
      x->grad.m.middleRows(static_cast<Eigen::Index>(y) * xw, xw) +=
          self.grad.m.middleRows(static_cast<Eigen::Index>(y0 + y) * out_w + x0, xw);
  });
}

/// Extracts the (nh x nw) spatial window at offset (y0, x0).
template <typename T>
Var<T> crop_spatial(Tape<T>& t, Var<T> x, int y0, int x0, int nh, int nw) {
  require(y0 >= 0 && x0 >= 0 && y0 + nh <= x->val.h && x0 + nw <= x->val.w,
          "crop_spatial: window out of bounds");
  Tensor<T> out(nh, nw, x->val.c);
  for (int y = 0; y < nh; ++y)
    out.m.middleRows(static_cast<Eigen::Index>(y) * nw, nw) =
        x->val.m.middleRows(static_cast<Eigen::Index>(y0 + y) * x->val.w + x0, nw);
  const int xw = x->val.w;
  return t.op(std::move(out), {x}, [x, y0, x0, nh, nw, xw](Node<T>& self) {
    if (!x->needs_grad) return;
    for (int y = 0; y < nh; ++y)
      x->grad.m.middleRows(static_cast<Eigen::Index>(y0 + y) * xw + x0, nw) +=
          self.grad.m.middleRows(static_cast<Eigen::Index>(y) * nw, nw);
  });
}

// ---------------------------------------------------------------------------
// Activations, normalization, reductions
// ---------------------------------------------------------------------------

template <typename T>
Var<T> gelu(Tape<T>& t, Var<T> x) {
  const T inv_sqrt2 = T(0.7071067811865475244);
  Tensor<T> out(x->val.h, x->val.w, x->val.c);
  out.m = x->val.m.unaryExpr([inv_sqrt2](T v) {
    return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  });
  return t.op(std::move(out), {x}, [x, inv_sqrt2](Node<T>& self) {
    if (!x->needs_grad) return;
    const T inv_sqrt2pi = T(0.3989422804014326779);
    x->grad.m += self.grad.m.cwiseProduct(x->val.m.unaryExpr([=](T v) {
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      return cdf + v * pdf;
    }));
  });
}

template <typename T>
Var<T> sigmoid(Tape<T>& t, Var<T> x) {
  Tensor<T> out(x->val.h, x->val.w, x->val.c);
  out.m = x->val.m.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  return t.op(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->needs_grad) return;
    x->grad.m += self.grad.m.cwiseProduct(
        self.val.m.cwiseProduct((self.val.m.array() * T(-1) + T(1)).matrix()));
  });
}

/// Row-wise softmax over channels (per spatial location / token).
template <typename T>
Var<T> softmax_rows(Tape<T>& t, Var<T> x) {
  Tensor<T> out(x->val.h, x->val.w, x->val.c);
  for (Eigen::Index r = 0; r < x->val.m.rows(); ++r) {
    auto row = x->val.m.row(r);
    const T mx = row.maxCoeff();
    out.m.row(r) = (row.array() - mx).exp();
    out.m.row(r) /= out.m.row(r).sum();
  }
  return t.op(std::move(out), {x}, [x](Node<T>& self) {
    if (!x->needs_grad) return;
    for (Eigen::Index r = 0; r < self.val.m.rows(); ++r) {
      const T dot = self.grad.m.row(r).dot(self.val.m.row(r));
      x->grad.m.row(r) += (self.grad.m.row(r).array() - dot).matrix().cwiseProduct(self.val.m.row(r));
    }
  });
}

/// Per-row (per-token) layer normalization over channels, with affine params
/// gamma/beta of shape (1,1,c).
template <typename T>
Var<T> layer_norm(Tape<T>& t, Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  const int C = x->val.c;
  require(gamma->val.rows() == 1 && gamma->val.c == C && beta->val.c == C, "layer_norm: bad affine shape");
  using Mat = typename Tensor<T>::Mat;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const Eigen::Index R = x->val.m.rows();
  Vec mu = x->val.m.rowwise().mean();
  Mat centered = x->val.m.colwise() - mu;
  Vec var = centered.array().square().matrix().rowwise().mean();
  Vec inv = (var.array() + eps).rsqrt();
  Mat xhat = centered.array().colwise() * inv.array();
  Tensor<T> out(x->val.h, x->val.w, C);
  out.m = (xhat.array().rowwise() * gamma->val.m.row(0).array()).rowwise() +
          beta->val.m.row(0).array();
  return t.op(std::move(out), {x, gamma, beta},
              [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), C, R](Node<T>& self) {
                const auto& G = self.grad.m;
                if (gamma->needs_grad)
                  gamma->grad.m.row(0) += G.cwiseProduct(xhat).colwise().sum();
                if (beta->needs_grad) beta->grad.m.row(0) += G.colwise().sum();
                if (!x->needs_grad) return;
                using MatL = typename Tensor<T>::Mat;
                MatL dxhat = G.array().rowwise() * gamma->val.m.row(0).array();
                // dx = inv/C * (C*dxhat - sum(dxhat) - xhat * sum(dxhat .* xhat))
                Eigen::Matrix<T, Eigen::Dynamic, 1> s1 = dxhat.rowwise().sum();
                Eigen::Matrix<T, Eigen::Dynamic, 1> s2 = dxhat.cwiseProduct(xhat).rowwise().sum();
                MatL dx = dxhat * T(C);
                dx.colwise() -= s1;
                dx -= (xhat.array().colwise() * s2.array()).matrix();
                dx.array().colwise() *= (inv.array() / T(C));
                x->grad.m += dx;
              });
}

template <typename T>
Var<T> sum_all(Tape<T>& t, Var<T> x) {
  Tensor<T> out = Tensor<T>::scalar(x->val.m.sum());
  return t.op(std::move(out), {x}, [x](Node<T>& self) {
    if (x->needs_grad) x->grad.m.array() += self.grad.m(0, 0);
  });
}

template <typename T>
Var<T> mean_all(Tape<T>& t, Var<T> x) {
  const T n = static_cast<T>(x->val.m.size());
  Tensor<T> out = Tensor<T>::scalar(x->val.m.sum() / n);
  return t.op(std::move(out), {x}, [x, n](Node<T>& self) {
    if (x->needs_grad) x->grad.m.array() += self.grad.m(0, 0) / n;
  });
}

}  // namespace daseg::nn
