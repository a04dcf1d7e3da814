#pragma once

#include <memory>
#include <vector>

#include "daseg/nn/graph.hpp"

namespace daseg::losses {

using daseg::kIgnoreLabel;

struct FdConfig {
  double keep_ratio = 0.75;   // a class survives label pooling when its patch ratio exceeds this
  double lambda_fd = 0.005;
  bool enabled = true;
};

/// Per-pixel loss weight: either one scalar broadcast over the image or an
/// (h, w, 1) map.
template <typename T>
struct PixelWeight {
  bool is_map = false;
  T value = T(1);
  Tensor<T> map;

  static PixelWeight constant(T v) {
    PixelWeight w;
    w.value = v;
    return w;
  }
  static PixelWeight from_map(Tensor<T> m) {
    require(m.c == 1, "PixelWeight: map must have one channel");
    PixelWeight w;
    w.is_map = true;
    w.map = std::move(m);
    return w;
  }
  T at(Eigen::Index row) const { return is_map ? map.m(row, 0) : value; }
  void check_range() const {
    if (is_map)
      require(map.m.minCoeff() >= T(0) && map.m.maxCoeff() <= T(1), "pixel weight outside [0,1]");
    else
      require(value >= T(0) && value <= T(1), "pixel weight outside [0,1]");
  }
};

template <typename T>
struct LossValue {
  nn::Var<T> value = nullptr;
  bool empty = false;  // all pixels ignored / empty mask
};

namespace detail {
template <typename T>
inline void check_target(const LabelMap& target, int num_classes, int h, int w) {
  require(target.rows() == h && target.cols() == w, "cross_entropy: target size mismatch");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int v = target(y, x);
      require((v >= 0 && v < num_classes) || v == kIgnoreLabel,
              "cross_entropy: label value out of range");
    }
}
}  // namespace detail

/// Quality-weighted categorical cross-entropy on raw logits (softmax inside,
/// computed with the log-sum-exp trick). Ignored pixels contribute nothing;
/// the sum is normalized by the number of contributing pixels.
template <typename T>
LossValue<T> weighted_cross_entropy(nn::Tape<T>& t, nn::Var<T> logits, const LabelMap& target,
                                    const PixelWeight<T>& q) {
  const int h = logits->val.h, w = logits->val.w, K = logits->val.c;
  detail::check_target<T>(target, K, h, w);
  q.check_range();
  if (q.is_map)
    require(q.map.h == h && q.map.w == w, "cross_entropy: weight map size mismatch");

  auto probs = std::make_shared<typename Tensor<T>::Mat>(logits->val.m.rows(), K);
  Eigen::Index count = 0;
  T total = T(0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
      const int lab = target(y, x);
      if (lab == kIgnoreLabel) continue;
      auto row = logits->val.m.row(r);
      const T mx = row.maxCoeff();
      probs->row(r) = (row.array() - mx).exp();
      const T z = probs->row(r).sum();
      probs->row(r) /= z;
      total += q.at(r) * (std::log(z) + mx - row(lab));
      ++count;
    }
  }
  if (count == 0) {
    return {t.constant(Tensor<T>::scalar(T(0))), true};
  }
  total /= static_cast<T>(count);
  LabelMap tgt = target;
  nn::Var<T> out =
      t.op(Tensor<T>::scalar(total), {logits},
           [logits, probs, tgt = std::move(tgt), q, w, count](nn::Node<T>& self) {
             if (!logits->needs_grad) return;
             const T g = self.grad.m(0, 0) / static_cast<T>(count);
             for (int y = 0; y < tgt.rows(); ++y) {
               for (int x = 0; x < tgt.cols(); ++x) {
                 const int lab = tgt(y, x);
                 if (lab == kIgnoreLabel) continue;
                 const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
                 const T qg = q.at(r) * g;
                 logits->grad.m.row(r) += qg * probs->row(r);
                 logits->grad.m(r, lab) -= qg;
               }
             }
           });
  return {out, false};
}

/// Same loss on already-normalized probability maps (used after the
/// multi-resolution fusion, which mixes softmax outputs). Probabilities are
/// clamped at a tiny floor inside the log only.
template <typename T>
LossValue<T> weighted_cross_entropy_prob(nn::Tape<T>& t, nn::Var<T> probs, const LabelMap& target,
                                         const PixelWeight<T>& q) {
  const int h = probs->val.h, w = probs->val.w, K = probs->val.c;
  detail::check_target<T>(target, K, h, w);
  q.check_range();
  if (q.is_map)
    require(q.map.h == h && q.map.w == w, "cross_entropy: weight map size mismatch");
  constexpr T tiny = T(1e-12);

  Eigen::Index count = 0;
  T total = T(0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int lab = target(y, x);
      if (lab == kIgnoreLabel) continue;
      const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
      total -= q.at(r) * std::log(std::max(probs->val.m(r, lab), tiny));
      ++count;
    }
  }
  if (count == 0) return {t.constant(Tensor<T>::scalar(T(0))), true};
  total /= static_cast<T>(count);
  LabelMap tgt = target;
  nn::Var<T> out = t.op(Tensor<T>::scalar(total), {probs},
                        [probs, tgt = std::move(tgt), q, w, count](nn::Node<T>& self) {
                          if (!probs->needs_grad) return;
                          const T g = self.grad.m(0, 0) / static_cast<T>(count);
                          for (int y = 0; y < tgt.rows(); ++y) {
                            for (int x = 0; x < tgt.cols(); ++x) {
                              const int lab = tgt(y, x);
                              if (lab == kIgnoreLabel) continue;
                              const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
                              const T p = probs->val.m(r, lab);
                              if (p > tiny) probs->grad.m(r, lab) -= q.at(r) * g / p;
                            }
                          }
                        });
  return {out, false};
}

/// Pools a one-hot view of the label over (H/hf x W/wf) patches and keeps a
/// class when its patch ratio strictly exceeds keep_ratio; the output mask is
/// 1 where some kept class is a thing class. Ignored pixels count toward the
/// patch area but toward no class.
template <typename T>
Tensor<T> downsample_thing_mask(const LabelMap& label, const std::vector<bool>& thing_flags,
                                double keep_ratio, int hf, int wf) {
  const int H = static_cast<int>(label.rows()), W = static_cast<int>(label.cols());
  require(hf > 0 && wf > 0 && H % hf == 0 && W % wf == 0,
          "downsample_thing_mask: feature size must divide label size");
  require(keep_ratio > 0.0 && keep_ratio <= 1.0, "downsample_thing_mask: keep_ratio in (0,1]");
  const int K = static_cast<int>(thing_flags.size());
  const int py = H / hf, px = W / wf;
  const double patch = static_cast<double>(py) * px;
  Tensor<T> mask(hf, wf, 1);
  std::vector<int> counts(K);
  for (int fy = 0; fy < hf; ++fy) {
    for (int fx = 0; fx < wf; ++fx) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int dy = 0; dy < py; ++dy)
        for (int dx = 0; dx < px; ++dx) {
          const int v = label(fy * py + dy, fx * px + dx);
          if (v == kIgnoreLabel) continue;
          require(v >= 0 && v < K, "downsample_thing_mask: label out of range");
          ++counts[v];
        }
      T out = T(0);
      for (int k = 0; k < K; ++k)
        if (thing_flags[k] && static_cast<double>(counts[k]) / patch > keep_ratio) out = T(1);
      mask(fy, fx, 0) = out;
    }
  }
  return mask;
}

/// Mean Euclidean channel distance between student features and a frozen
/// reference, restricted to masked locations. Gradient flows into the student
/// features only; the subgradient at zero distance is 0.
template <typename T>
LossValue<T> feature_distance_loss(nn::Tape<T>& t, nn::Var<T> f_student, const Tensor<T>& f_ref,
                                   const Tensor<T>& mask) {
  require(f_student->val.same_shape(f_ref), "feature_distance_loss: feature shape mismatch");
  require(mask.h == f_ref.h && mask.w == f_ref.w && mask.c == 1,
          "feature_distance_loss: mask shape mismatch");
  const T denom = mask.m.sum();
  if (denom <= T(0)) return {t.constant(Tensor<T>::scalar(T(0))), true};

  auto dist = std::make_shared<Eigen::Matrix<T, Eigen::Dynamic, 1>>(
      (f_student->val.m - f_ref.m).rowwise().norm());
  const T total = dist->cwiseProduct(mask.m.col(0)).sum() / denom;
  Tensor<T> ref = f_ref;
  Tensor<T> msk = mask;
  nn::Var<T> out = t.op(
      Tensor<T>::scalar(total), {f_student},
      [f_student, dist, ref = std::move(ref), msk = std::move(msk), denom](nn::Node<T>& self) {
        if (!f_student->needs_grad) return;
        const T g = self.grad.m(0, 0) / denom;
        for (Eigen::Index r = 0; r < f_student->val.m.rows(); ++r) {
          const T d = (*dist)(r);
          if (msk.m(r, 0) <= T(0) || d <= T(0)) continue;
          f_student->grad.m.row(r) +=
              (g * msk.m(r, 0) / d) * (f_student->val.m.row(r) - ref.m.row(r));
        }
      });
  return {out, false};
}

/// Mean (over pixels) Jensen-Shannon divergence of n probability maps,
/// natural-log entropy. Inputs must be row-normalized within 1e-5.
template <typename T>
nn::Var<T> style_consistency_divergence(nn::Tape<T>& t, const std::vector<nn::Var<T>>& ps) {
  require(ps.size() >= 2, "style_consistency_divergence: need at least two maps");
  const int h = ps[0]->val.h, w = ps[0]->val.w, K = ps[0]->val.c;
  for (auto p : ps) {
    require(p->val.h == h && p->val.w == w && p->val.c == K,
            "style_consistency_divergence: shape mismatch");
    for (Eigen::Index r = 0; r < p->val.m.rows(); ++r)
      require(std::abs(p->val.m.row(r).sum() - T(1)) < T(1e-5),
              "style_consistency_divergence: rows must sum to 1");
  }
  const T n = static_cast<T>(ps.size());
  const Eigen::Index R = ps[0]->val.m.rows();
  auto xlogx = [](T v) { return v > T(0) ? v * std::log(v) : T(0); };

  auto mean_p = std::make_shared<typename Tensor<T>::Mat>(ps[0]->val.m);
  for (size_t i = 1; i < ps.size(); ++i) *mean_p += ps[i]->val.m;
  *mean_p /= n;

  T total = T(0);
  for (Eigen::Index r = 0; r < R; ++r) {
    T hmix = T(0), hsum = T(0);
    for (int k = 0; k < K; ++k) {
      hmix -= xlogx((*mean_p)(r, k));
      for (auto p : ps) hsum -= xlogx(p->val.m(r, k));
    }
    total += hmix - hsum / n;
  }
  total /= static_cast<T>(R);

  return t.op(Tensor<T>::scalar(total), ps, [ps, mean_p, n, R](nn::Node<T>& self) {
    constexpr T tiny = T(1e-12);
    const T g = self.grad.m(0, 0) / static_cast<T>(R);
    for (auto p : ps) {
      if (!p->needs_grad) continue;
      p->grad.m.array() +=
          (g / n) * (p->val.m.array().max(tiny).log() - mean_p->array().max(tiny).log());
    }
  });
}

}  // namespace daseg::losses
