// Copyright 2026 The probadapt Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "probadapt/losses.hpp"

namespace probadapt {
namespace {

using testing::check_gradients;
using testing::random_tensor;

Tensor<double> mask_from(std::initializer_list<int> on, int n = 16) {
  Tensor<double> t({1, 1, n});
  for (int i : on) t[static_cast<std::size_t>(i)] = 1.0;
  return t;
}

TEST(Dice, IdenticalMasksScoreOne) {
  const auto m = mask_from({1, 2, 3, 4});
  EXPECT_NEAR(dice_score(m, m), 1.0, 1e-6);
  EXPECT_NEAR(dice_error(m, m), 0.0, 1e-6);
}

TEST(Dice, DisjointMasksScoreZero) {
  EXPECT_NEAR(dice_score(mask_from({0, 1, 2, 3}), mask_from({4, 5, 6, 7})), 0.0, 1e-12);
  EXPECT_NEAR(dice_error(mask_from({0, 1, 2, 3}), mask_from({4, 5, 6, 7})), 1.0, 1e-12);
}

TEST(Dice, HalfOverlap) {
  EXPECT_NEAR(dice_score(mask_from({0, 1, 2, 3}), mask_from({2, 3, 4, 5})), 0.5, 1e-6);
  EXPECT_NEAR(dice_error(mask_from({0, 1, 2, 3}), mask_from({2, 3, 4, 5})), 0.5, 1e-6);
}

TEST(Dice, EmptyPairScoresOne) {
  EXPECT_DOUBLE_EQ(dice_score(mask_from({}), mask_from({})), 1.0);
}

TEST(Dice, UniformWeightScaleInvariance) {
  SeededRng rng(1);
  const auto p = random_tensor({1, 8, 8}, rng, 0.0, 1.0), t = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  const Tensor<double> half({1, 8, 8}, 0.5), one({1, 8, 8}, 1.0), big({1, 8, 8}, 3.7);
  EXPECT_NEAR(dice_score(p, t, &half), dice_score(p, t, &one), 1e-6);
  EXPECT_NEAR(dice_score(p, t, &big), dice_score(p, t, &one), 1e-6);
  EXPECT_NEAR(dice_score(p, t, &one), dice_score(p, t), 1e-15);
}

TEST(Dice, SymmetricAndBoundedForHardMasks) {
  SeededRng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<double> a({1, 4, 4}), b({1, 4, 4});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.bernoulli(0.4), b[i] = rng.bernoulli(0.4);
    const double ab = dice_score(a, b), ba = dice_score(b, a);
    EXPECT_DOUBLE_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Dice, ClassesAveragedWithEqualWeight) {
  Tensor<double> p({2, 1, 4}), t({2, 1, 4});
  p[0] = p[1] = t[0] = t[1] = 1.0;  // class 0 perfect
  p[4] = 1.0, t[5] = 1.0;            // class 1 disjoint
  EXPECT_NEAR(dice_score(p, t), 0.5, 1e-6);
}

TEST(Dice, BatchFlattensBeforeTheRatio) {
  // Two images, one empty-vs-empty: batch dice is the pooled ratio, not 1.
  const auto a = mask_from({0, 1}), b = mask_from({1, 2}), e = mask_from({});
  const double pooled = dice_score<double>({{&a, &b, nullptr}, {&e, &e, nullptr}});
  EXPECT_NEAR(pooled, 2.0 * 1 / (2 + 2 + 1e-6), 1e-12);
}

TEST(Dice, ShapeMismatchRejected) {
  EXPECT_THROW(dice_score(Tensor<double>({1, 2, 2}), Tensor<double>({1, 2, 3})), ShapeError);
}

TEST(Dice, GradientMatchesFiniteDifferences) {
  SeededRng rng(3);
  const Tensor<double> target = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  Tensor<double> weights = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  std::vector<Tensor<double>> p{random_tensor({1, 8, 8}, rng, 0.05, 0.95)};
  auto r = check_gradients(
      [&](Graph<double>& g, const std::vector<Var>& v) { return ag::dice_error<double>(g, {v[0]}, {&target}, {&weights}); }, p);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Dice, MaskedPixelsHaveZeroGradientAndNoEffect) {
  SeededRng rng(4);
  const Tensor<double> target = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  Tensor<double> weights({1, 8, 8}, 1.0);
  for (std::size_t i = 0; i < weights.size(); i += 3) weights[i] = 0.0;
  Tensor<double> pred = random_tensor({1, 8, 8}, rng, 0.0, 1.0);
  const auto grads = dice_error_gradient<double>({{&pred, &target, &weights}});
  const double base = dice_error(pred, target, &weights);
  for (std::size_t i = 0; i < weights.size(); i += 3) {
    EXPECT_EQ(grads[0][i], 0.0);
    Tensor<double> moved = pred;
    moved[i] = 1.0 - moved[i];
    EXPECT_EQ(dice_error(moved, target, &weights), base);
  }
}

TEST(KL, IdenticalGaussiansGiveZero) {
  LatentGaussian<double> g{{0.3, -1.0}, {0.2, -0.7}};
  EXPECT_NEAR(kl_diag_gaussians(g, g), 0.0, 1e-12);
}

TEST(KL, UnitShiftClosedForm) {
  LatentGaussian<double> prior{std::vector<double>(6, 0.0), std::vector<double>(6, 0.0)};
  LatentGaussian<double> post{std::vector<double>(6, 1.0), std::vector<double>(6, 0.0)};
  EXPECT_NEAR(kl_diag_gaussians(post, prior), 3.0, 1e-12);
}

TEST(KL, MatchesQuadratureForRandomPairs) {
  SeededRng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    LatentGaussian<double> q{{rng.uniform(-2, 2), rng.uniform(-2, 2)}, {rng.uniform(-2, 2), rng.uniform(-2, 2)}};
    LatentGaussian<double> p{{rng.uniform(-2, 2), rng.uniform(-2, 2)}, {rng.uniform(-2, 2), rng.uniform(-2, 2)}};
    double numeric = 0.0;
    for (int d = 0; d < 2; ++d) {
      numeric += oracle::kl_quadrature_1d(q.mean[d], std::exp(q.log_variance[d]), p.mean[d], std::exp(p.log_variance[d]));
    }
    EXPECT_NEAR(kl_diag_gaussians(q, p), numeric, 1e-3);
  }
}

TEST(KL, NonNegativeOnFuzzedInputs) {
  SeededRng rng(6);
  for (int trial = 0; trial < 10000; ++trial) {
    const int d = rng.uniform_int(1, 6);
    LatentGaussian<double> q, p;
    for (int i = 0; i < d; ++i) {
      q.mean.push_back(rng.uniform(-5, 5));
      q.log_variance.push_back(rng.uniform(-5, 5));
      p.mean.push_back(rng.uniform(-5, 5));
      p.log_variance.push_back(rng.uniform(-5, 5));
    }
    ASSERT_GE(kl_diag_gaussians(q, p), -1e-12);
  }
}

TEST(KL, DimensionMismatchRejected) {
  LatentGaussian<double> a{{0.0}, {0.0}}, b{{0.0, 0.0}, {0.0, 0.0}};
  EXPECT_THROW(kl_diag_gaussians(a, b), ShapeError);
}

TEST(KL, GraphNodeGradients) {
  SeededRng rng(7);
  std::vector<Tensor<double>> p{random_tensor({4, 1, 1}, rng), random_tensor({4, 1, 1}, rng), random_tensor({4, 1, 1}, rng),
                                random_tensor({4, 1, 1}, rng)};
  auto r = check_gradients(
      [](Graph<double>& g, const std::vector<Var>& v) { return ag::kl_diag_gaussians(g, v[0], v[1], v[2], v[3]); }, p);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(PUNetLoss, PerfectAndMatchedIsZero) {
  const auto m = mask_from({2, 3, 9});
  LatentGaussian<double> g{{0.1, 0.2}, {0.0, 0.5}};
  const LossValue v = punet_loss(m, m, g, g, 1.0);
  EXPECT_NEAR(v.total, 0.0, 1e-6);
}

TEST(PUNetLoss, BetaZeroIsDiceError) {
  const auto a = mask_from({0, 1, 2, 3}), b = mask_from({2, 3, 4, 5});
  LatentGaussian<double> q{{1.0}, {0.0}}, p{{0.0}, {0.0}};
  EXPECT_DOUBLE_EQ(punet_loss(a, b, p, q, 0.0).total, dice_error(a, b));
}

TEST(PUNetLoss, BreakdownSumsToTotal) {
  SeededRng rng(8);
  const auto a = random_tensor({1, 8, 8}, rng, 0, 1), b = random_tensor({1, 8, 8}, rng, 0, 1);
  LatentGaussian<double> q{{1.0, -0.5}, {0.3, 0.1}}, p{{0.0, 0.2}, {-0.4, 0.0}};
  const LossValue v = punet_loss(a, b, p, q, 0.7);
  EXPECT_NEAR(v.total, v.reconstruction + 0.7 * v.variational, 1e-9);
  EXPECT_GT(v.variational, 0.0);
  EXPECT_GE(v.reconstruction, 0.0);
  EXPECT_LE(v.reconstruction, 1.0);
}

TEST(PUNetLoss, NegativeBetaRejected) {
  const auto a = mask_from({1});
  LatentGaussian<double> g{{0.0}, {0.0}};
  EXPECT_THROW(punet_loss(a, a, g, g, -1.0), ConfigError);
}

}  // namespace
}  // namespace probadapt
