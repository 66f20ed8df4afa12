/* Copyright 2026 The vidattn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>

#include "vidattn/errors.hpp"
#include "vidattn/numerics.hpp"
#include "vidattn/rng.hpp"

namespace vidattn {
namespace {

TEST(Tensor, DataLengthMatchesShape) {
  const Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
}

TEST(Matmul, IdentityLeftFactor) {
  const Tensor b = Tensor::from_rows({{3, 4}, {5, 6}});
  EXPECT_TRUE(matmul(Tensor::identity(2), b).identical(b));
}

TEST(Matmul, RowTimesColumn) {
  const Tensor c = matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  SeededRng rng(5);
  const Tensor a = gaussian_init(rng, {7, 5}, 1.0);
  const Tensor b = gaussian_init(rng, {5, 3}, 1.0);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < 5; ++t) s += a(i, t) * b(t, j);
      EXPECT_NEAR(c(i, j), s, 1e-12);
    }
  }
}

TEST(Matmul, NtAgreesWithExplicitTranspose) {
  SeededRng rng(6);
  const Tensor a = gaussian_init(rng, {4, 3}, 1.0);
  const Tensor b = gaussian_init(rng, {5, 3}, 1.0);
  EXPECT_LE(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))), 1e-14);
}

TEST(Matmul, RejectsMismatchedInnerExtent) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(Matmul, AssociativeOnRandomShapes) {
  SeededRng rng(8);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(5), k = 1 + rng.uniform_index(5),
                      l = 1 + rng.uniform_index(5), n = 1 + rng.uniform_index(5);
    const Tensor a = gaussian_init(rng, {m, k}, 1.0);
    const Tensor b = gaussian_init(rng, {k, l}, 1.0);
    const Tensor c = gaussian_init(rng, {l, n}, 1.0);
    EXPECT_LE(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-10);
  }
}

TEST(Softmax, UniformLogits) {
  const Tensor y = softmax_rows(Tensor::from_rows({{0, 0, 0}}));
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Tensor y = softmax_rows(Tensor::from_rows({{1000, 1000.1}}));
  EXPECT_TRUE(all_finite(y));
  EXPECT_GT(y(0, 1), y(0, 0));
  EXPECT_NEAR(y(0, 0) + y(0, 1), 1.0, 1e-15);
}

TEST(Softmax, MaskedEntryIsZeroAndRestRenormalized) {
  Mask mask(1, 3);
  mask.set(0, 2, false);
  const Tensor y = softmax_rows(Tensor::from_rows({{1, 2, 3}}), &mask);
  const double e1 = std::exp(1.0), e2 = std::exp(2.0);
  EXPECT_NEAR(y(0, 0), e1 / (e1 + e2), 1e-15);
  EXPECT_NEAR(y(0, 1), e2 / (e1 + e2), 1e-15);
  EXPECT_EQ(y(0, 2), 0.0);
}

TEST(Softmax, FullyMaskedRowIsAnError) {
  Mask mask(1, 2, false);
  EXPECT_THROW(softmax_rows(Tensor::from_rows({{1, 2}}), &mask), NumericalError);
}

TEST(Softmax, RowsStochasticAndShiftInvariant) {
  SeededRng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(5), n = 1 + rng.uniform_index(7);
    const Tensor x = gaussian_init(rng, {m, n}, 4.0);
    const Tensor y = softmax_rows(x, nullptr);
    Tensor shifted = x;
    for (double& v : shifted.data()) v -= 17.5;
    EXPECT_LE(max_abs_diff(y, softmax_rows(shifted)), 1e-12);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (double v : y.row(i)) {
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, CausalMaskZeroesUpperTriangle) {
  const Mask causal = Mask::causal(4);
  SeededRng rng(10);
  const Tensor y = softmax_rows(gaussian_init(rng, {4, 4}, 1.0), &causal);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) EXPECT_EQ(y(i, j), 0.0);
  }
}

TEST(GaussianInit, ZeroScaleRejected) {
  SeededRng rng(0);
  EXPECT_THROW(gaussian_init(rng, {2, 2}, 0.0), ArgumentError);
}

TEST(GaussianInit, SameSeedBitIdentical) {
  SeededRng a(42), b(42);
  EXPECT_TRUE(gaussian_init(a, {3, 5}, 0.7).identical(gaussian_init(b, {3, 5}, 0.7)));
}

TEST(GaussianInit, SampleStdMatchesScale) {
  SeededRng rng(1);
  const Tensor t = gaussian_init(rng, {100, 100}, 0.02);
  const double mean = sum(t) / 1e4;
  double var = 0.0;
  for (double v : t.data()) var += (v - mean) * (v - mean);
  const double std_dev = std::sqrt(var / (1e4 - 1.0));
  EXPECT_GE(std_dev, 0.018);
  EXPECT_LE(std_dev, 0.022);
}

TEST(Rng, StreamsAreReproducibleAndFinite) {
  SeededRng a(3), b(3);
  const auto xs = a.gaussian(1000);
  EXPECT_EQ(xs, b.gaussian(1000));
  for (double v : xs) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NE(derive_seed(3, 0), derive_seed(3, 1));
}

TEST(Rng, UniformIndexCoversRangeEvenly) {
  SeededRng rng(4);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.uniform_index(5)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 4 * std::sqrt(50000 * 0.2 * 0.8));
}

}  // namespace
}  // namespace vidattn
