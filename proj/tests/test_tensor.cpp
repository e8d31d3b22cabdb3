// Copyright 2026 The MVTER Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "mvter/tensor.hpp"
#include "support/grad_cases.hpp"

using namespace mvter;

class GradientCheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const auto cases = oracle::gradient_cases();
  const auto& c = cases[GetParam()];
  const double tol = c.composite ? oracle::kCompositeTolerance : oracle::kSingleOpTolerance;
  for (int i = 0; i < oracle::kGradInstances; ++i) {
    const std::uint64_t seed = mix_seed(0x7e57, static_cast<std::uint64_t>(i));
    EXPECT_LT(oracle::gradient_error(c.make(seed), mix_seed(seed, 1)), tol) << c.name << " instance " << i;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCheck, ::testing::Range<std::size_t>(0, oracle::gradient_cases().size()),
                         [](const auto& info) { return oracle::gradient_cases()[info.param].name; });

namespace {

Tensor<float> t2(std::size_t r, std::size_t c, std::vector<float> v, bool rg = false) {
  return Tensor<float>({r, c}, std::move(v), rg);
}

}  // namespace

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor<float>({2, 2}, {1, 2, 3}), DomainError);
  Tape<float> tape;
  EXPECT_THROW(tape.dense(t2(2, 3, std::vector<float>(6)), t2(2, 2, std::vector<float>(4)), Tensor<float>::zeros({2})),
               DomainError);
  EXPECT_THROW(tape.maxpool2d(Tensor<float>::zeros({1, 1, 3, 4})), DomainError);
  EXPECT_THROW(tape.group_max(Tensor<float>::zeros({5, 2}), 2), DomainError);
  const int labels[] = {0, 3};
  EXPECT_THROW(tape.softmax_xent(Tensor<float>::zeros({2, 3}), labels), DomainError);
}

TEST(Tensor, DenseForwardValues) {
  Tape<float> tape;
  const auto y = tape.dense(t2(1, 2, {1, 2}), t2(2, 2, {1, 2, 3, 4}), Tensor<float>({2}, {0.5f, -1}));
  EXPECT_FLOAT_EQ(y.data()[0], 1 + 6 + 0.5f);
  EXPECT_FLOAT_EQ(y.data()[1], 2 + 8 - 1);
}

TEST(Tensor, ConvIsCrossCorrelationWithZeroPadding) {
  std::vector<float> x(16);
  for (int i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  std::vector<float> k(9, 0.0f);
  k[5] = 1.0f;  // picks the right neighbour
  Tape<float> tape;
  const auto y = tape.conv2d(Tensor<float>({1, 1, 4, 4}, x), Tensor<float>({1, 1, 3, 3}, k));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_FLOAT_EQ(y.data()[r * 4 + c], c < 3 ? x[r * 4 + c + 1] : 0.0f);
}

TEST(Tensor, MaxPoolAndGroupMaxTieGoesToFirst) {
  Tape<float> tape;
  auto x = Tensor<float>({1, 1, 2, 2}, {3, 3, 3, 3}, true);
  tape.backward(tape.mse(tape.maxpool2d(x), Tensor<float>({1, 1, 1, 1}, {0})));
  EXPECT_EQ(x.grad()[0], 6.0f);
  for (int i = 1; i < 4; ++i) EXPECT_EQ(x.grad()[i], 0.0f);

  Tape<float> tape2;
  auto f = t2(3, 1, {2, 2, 1}, true);
  tape2.backward(tape2.mse(tape2.group_max(f, 3), t2(1, 1, {0})));
  EXPECT_EQ(f.grad()[0], 4.0f);
  EXPECT_EQ(f.grad()[1], 0.0f);
}

TEST(Tensor, SoftmaxXentIsStableForLargeLogits) {
  Tape<float> tape;
  const int labels[] = {1};
  const auto loss = tape.softmax_xent(t2(1, 3, {1000, 1001, 999}, true), labels);
  // Float spacing near 1000 is 6e-5; the max shift keeps the result exact to that.
  EXPECT_NEAR(loss.item(), std::log(1 + std::exp(-1.0) + std::exp(-2.0)), 1e-4);
  EXPECT_TRUE(std::isfinite(loss.item()));
}

TEST(Tensor, NonFiniteValuesTrip) {
  Tape<float> tape;
  EXPECT_THROW(tape.scale(t2(1, 1, {std::numeric_limits<float>::max()}), 10.0f), NumericError);
  Tape<float> lax(TapeOptions{.check_finite = false});
  EXPECT_NO_THROW(lax.scale(t2(1, 1, {std::numeric_limits<float>::max()}), 10.0f));
}

TEST(Tensor, TapeIsSingleUse) {
  Tape<float> tape;
  auto x = t2(1, 1, {2}, true);
  auto loss = tape.mse(x, t2(1, 1, {0}));
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), TapeError);
  EXPECT_THROW(tape.relu(x), TapeError);
  Tape<float> t2_;
  EXPECT_THROW(t2_.backward(t2(1, 2, {1, 2}, true)), DomainError);
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
  Tape<double> tape;
  auto x = Tensor<double>({1}, {3.0}, true);
  // loss = (x + x)^2 / 1 -> d/dx = 8x
  tape.backward(tape.mse(tape.add(x, x), Tensor<double>({1}, {0.0})));
  EXPECT_DOUBLE_EQ(x.grad()[0], 24.0);
}

TEST(Tensor, NoRecordModeKeepsValuesButNoGraph) {
  Tape<float> tape(TapeOptions{.record = false});
  auto x = t2(1, 2, {-1, 2}, true);
  const auto y = tape.relu(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(y.data()[0], 0.0f);
  EXPECT_EQ(y.data()[1], 2.0f);
}

TEST(Tensor, BlockedGemmMatchesNaiveLoopBitwise) {
  Rng rng(31);
  for (auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1}, {5, 33, 7}, {16, 64, 144}, {9, 17, 3}}) {
    std::vector<float> a(m * k), b(k * n), c(m * n, 0.5f), ref(m * n, 0.5f);
    for (auto& v : a) v = static_cast<float>(rng.normal());
    for (auto& v : b) v = static_cast<float>(rng.normal());
    detail::gemm_acc(m, n, k, a.data(), b.data(), c.data());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += a[i * k + p] * b[p * n + j];
    EXPECT_EQ(c, ref) << m << "x" << n << "x" << k;
  }
}

TEST(Tensor, ThreadCountDoesNotChangeResults) {
  Rng rng(32);
  std::vector<double> xv(20 * 2 * 8 * 8), kv(4 * 2 * 9);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : kv) v = rng.normal();
  auto run = [&](int threads) {
    Tensor<double> x({20, 2, 8, 8}, xv, true), k({4, 2, 3, 3}, kv, true);
    Tape<double> tape(TapeOptions{.threads = threads});
    auto y = tape.maxpool2d(tape.relu(tape.conv2d(x, k)));
    tape.backward(tape.mse(tape.reshape(y, {20, 64}), Tensor<double>::zeros({20, 64})));
    std::vector<double> out(k.grad().begin(), k.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Tensor, SgdStepWithMomentumAndDecay) {
  auto p = Tensor<double>({1}, {1.0}, true);
  p.grad()[0] = 0.5;
  std::vector<Tensor<double>> params{p};
  SgdState<double> sgd{.learning_rate = 0.1, .momentum = 0.9, .weight_decay = 0.01};
  sgd_step<double>(params, sgd);
  const double p1 = 1.0 - 0.1 * (0.5 + 0.01);
  EXPECT_DOUBLE_EQ(p.data()[0], p1);
  sgd_step<double>(params, sgd);
  const double v2 = 0.9 * 0.51 + 0.5 + 0.01 * p1;
  EXPECT_NEAR(p.data()[0], p1 - 0.1 * v2, 1e-15);
}
