#pragma once

#include <functional>
#include <vector>

#include "daseg/nn/graph.hpp"

namespace daseg::testing {

/// Central-finite-difference gradient check in double precision.
/// `build` assembles a scalar loss from leaf vars created from `inputs`.
/// Returns the largest relative error over all input elements.
inline double grad_check(
    const std::function<nn::Var<double>(nn::Tape<double>&, std::vector<nn::Var<double>>&)>& build,
    std::vector<Tensor<double>> inputs, double step = 1e-5) {
  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    nn::Tape<double> tape;
    std::vector<nn::Var<double>> leaves;
    leaves.reserve(xs.size());
    for (const auto& x : xs) leaves.push_back(tape.leaf(x, false));
    return build(tape, leaves)->val.scalar_value();
  };

  // Analytic gradients.
  nn::Tape<double> tape;
  std::vector<nn::Var<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
  nn::Var<double> loss = build(tape, leaves);
  tape.backward(loss);

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index r = 0; r < inputs[i].m.rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].m.cols(); ++c) {
        auto plus = inputs;
        auto minus = inputs;
        plus[i].m(r, c) += step;
        minus[i].m(r, c) -= step;
        const double numeric = (eval(plus) - eval(minus)) / (2.0 * step);
        const double analytic = leaves[i]->grad.m(r, c);
        const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-4});
        worst = std::max(worst, std::abs(numeric - analytic) / denom);
      }
    }
  }
  return worst;
}

/// Fills a tensor with reproducible pseudo-random values in [-1, 1].
inline Tensor<double> random_tensor(int h, int w, int c, uint64_t seed) {
  Tensor<double> t(h, w, c);
  uint64_t s = seed;
  for (Eigen::Index r = 0; r < t.m.rows(); ++r)
    for (Eigen::Index k = 0; k < t.m.cols(); ++k) {
      s = s * 6364136223846793005ULL + 1442695040888963407ULL;
      t.m(r, k) = static_cast<double>((s >> 11) & 0xFFFFF) / double(0xFFFFF) * 2.0 - 1.0;
    }
  return t;
}

}  // namespace daseg::testing
