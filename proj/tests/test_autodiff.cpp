#include <doctest.h>

#include "daseg/losses/losses.hpp"
#include "daseg/nn/graph.hpp"
#include "daseg/nn/spatial.hpp"
#include "grad_check.hpp"

using namespace daseg;
using daseg::testing::grad_check;
using daseg::testing::random_tensor;

namespace {
constexpr double kTol = 1e-5;  // primitive ops should be much tighter than the 1e-3 budget
}

TEST_CASE("elementwise ops match finite differences") {
  auto a = random_tensor(3, 4, 2, 1);
  auto b = random_tensor(3, 4, 2, 2);

  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          return nn::sum_all(t, nn::mul(t, nn::add(t, v[0], v[1]), nn::sub(t, v[0], v[1])));
        },
        {a, b}) < kTol);

  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          return nn::mean_all(t, nn::add_scalar(t, nn::scale(t, v[0], 1.7), 0.3));
        },
        {a}) < kTol);
}

TEST_CASE("scale_by_map broadcast gradient") {
  auto x = random_tensor(3, 3, 4, 3);
  auto map = random_tensor(3, 3, 1, 4);
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          return nn::sum_all(t, nn::scale_by_map(t, v[0], v[1]));
        },
        {x, map}) < kTol);
}

TEST_CASE("matmul all transpose combinations") {
  auto a = random_tensor(3, 1, 4, 5);
  auto b = random_tensor(4, 1, 2, 6);
  auto bt = random_tensor(2, 1, 4, 7);
  auto at = random_tensor(4, 1, 3, 8);

  auto run = [](Tensor<double> x, Tensor<double> y, bool ta, bool tb) {
    return grad_check([ta, tb](nn::Tape<double>& t, auto& v) {
      return nn::sum_all(t, nn::matmul(t, v[0], v[1], ta, tb));
    },
    {std::move(x), std::move(y)});
  };
  CHECK(run(a, b, false, false) < kTol);
  CHECK(run(a, bt, false, true) < kTol);
  CHECK(run(at, b, true, false) < kTol);
  CHECK(run(at, bt, true, true) < kTol);
}

TEST_CASE("linear and layer_norm gradients") {
  auto x = random_tensor(2, 3, 4, 11);
  auto w = random_tensor(4, 1, 3, 12);
  auto bias = random_tensor(1, 1, 3, 13);
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          return nn::sum_all(t, nn::gelu(t, nn::linear(t, v[0], v[1], v[2])));
        },
        {x, w, bias}) < kTol);

  auto gamma = random_tensor(1, 1, 4, 14);
  auto beta = random_tensor(1, 1, 4, 15);
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto y = nn::layer_norm(t, v[0], v[1], v[2]);
          return nn::sum_all(t, nn::mul(t, y, y));
        },
        {x, gamma, beta}) < 1e-4);
}

TEST_CASE("softmax, sigmoid, gelu gradients") {
  auto x = random_tensor(2, 2, 5, 21);
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto s = nn::softmax_rows(t, v[0]);
          return nn::sum_all(t, nn::mul(t, s, s));
        },
        {x}) < kTol);
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          return nn::sum_all(t, nn::sigmoid(t, v[0]));
        },
        {x}) < kTol);
}

TEST_CASE("conv2d forward matches a hand-computed case") {
  // 1 input channel, 2x2 input, 3x3 kernel, pad 1: center output = weighted sum.
  Tensor<double> x(2, 2, 1);
  x(0, 0, 0) = 1;
  x(0, 1, 0) = 2;
  x(1, 0, 0) = 3;
  x(1, 1, 0) = 4;
  Tensor<double> w(9, 1, 1);
  for (int i = 0; i < 9; ++i) w.m(i, 0) = i + 1;  // k=3 kernel, row-major taps
  Tensor<double> b = Tensor<double>::zeros(1, 1, 1);

  nn::Tape<double> t;
  auto y = nn::conv2d(t, t.leaf(x), t.leaf(w), t.leaf(b), {3, 1, 1, 1, 1});
  // out(0,0) = w5*x00 + w6*x01 + w8*x10 + w9*x11 (1-based taps 5,6,8,9)
  CHECK(y->val(0, 0, 0) == doctest::Approx(5 * 1 + 6 * 2 + 8 * 3 + 9 * 4));
  CHECK(y->val(1, 1, 0) == doctest::Approx(1 * 1 + 2 * 2 + 4 * 3 + 5 * 4));
}

TEST_CASE("conv2d gradients across stride/pad/dilation/groups") {
  auto bias2 = random_tensor(1, 1, 2, 31);

  // plain 3x3, pad 1
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto y = nn::conv2d(t, v[0], v[1], v[2], {3, 1, 1, 1, 1});
          return nn::sum_all(t, nn::mul(t, y, y));
        },
        {random_tensor(4, 4, 3, 32), random_tensor(27, 1, 2, 33), bias2}) < kTol);

  // strided 3x3, stride 2
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto y = nn::conv2d(t, v[0], v[1], v[2], {3, 2, 1, 1, 1});
          return nn::sum_all(t, y);
        },
        {random_tensor(6, 6, 2, 34), random_tensor(18, 1, 2, 35), bias2}) < kTol);

  // dilated depthwise: groups == channels
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto y = nn::conv2d(t, v[0], v[1], v[2], {3, 1, 2, 2, 4});
          return nn::sum_all(t, nn::mul(t, y, y));
        },
        {random_tensor(5, 5, 4, 36), random_tensor(9, 1, 4, 37), random_tensor(1, 1, 4, 38)}) < kTol);

  // 7x7 stride 4 pad 3 (patch embedding geometry)
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto y = nn::conv2d(t, v[0], v[1], v[2], {7, 4, 3, 1, 1});
          return nn::sum_all(t, y);
        },
        {random_tensor(8, 8, 1, 39), random_tensor(49, 1, 2, 40), bias2}) < kTol);
}

TEST_CASE("resize forward identities") {
  auto x = random_tensor(3, 5, 2, 41);
  auto same = nn::resize_tensor(x, 3, 5, nn::ResizeMode::bilinear);
  CHECK((same.m - x.m).cwiseAbs().maxCoeff() == 0.0);

  Tensor<double> c = Tensor<double>::full(4, 4, 3, 0.7);
  for (auto mode : {nn::ResizeMode::bilinear, nn::ResizeMode::nearest}) {
    auto up = nn::resize_tensor(c, 8, 8, mode);
    CHECK(up.m.minCoeff() == doctest::Approx(0.7));
    CHECK(up.m.maxCoeff() == doctest::Approx(0.7));
    auto down = nn::resize_tensor(up, 4, 4, mode);
    CHECK((down.m.array() - 0.7).abs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("resize gradients, both modes") {
  for (auto mode : {nn::ResizeMode::bilinear, nn::ResizeMode::nearest}) {
    CHECK(grad_check([mode](nn::Tape<double>& t, auto& v) {
            auto y = nn::resize(t, v[0], 6, 6, mode);
            return nn::sum_all(t, nn::mul(t, y, y));
          },
          {random_tensor(3, 3, 2, 42)}) < kTol);
    CHECK(grad_check([mode](nn::Tape<double>& t, auto& v) {
            auto y = nn::resize(t, v[0], 2, 3, mode);
            return nn::sum_all(t, nn::mul(t, y, y));
          },
          {random_tensor(4, 6, 2, 43)}) < kTol);
  }
}

TEST_CASE("structural ops gradients") {
  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto p = nn::zero_pad_spatial(t, v[0], 5, 6, 1, 2);
          auto crop = nn::crop_spatial(t, p, 0, 1, 4, 4);
          return nn::sum_all(t, nn::mul(t, crop, crop));
        },
        {random_tensor(3, 3, 2, 51)}) < kTol);

  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto cat = nn::concat_channels(t, {v[0], v[1]});
          auto s = nn::slice_channels(t, cat, 1, 2);
          return nn::sum_all(t, nn::mul(t, s, s));
        },
        {random_tensor(2, 3, 2, 52), random_tensor(2, 3, 1, 53)}) < kTol);

  CHECK(grad_check([](nn::Tape<double>& t, auto& v) {
          auto r = nn::reshape_spatial(t, v[0], 6, 2);
          return nn::sum_all(t, nn::mul(t, r, r));
        },
        {random_tensor(3, 4, 2, 54)}) < kTol);
}
