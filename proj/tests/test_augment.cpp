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

#include "probadapt/augment.hpp"

namespace probadapt {
namespace {

Tensor<float> random_patch(SeededRng& rng, int h = 32, int w = 32) {
  Tensor<float> x({1, h, w});
  for (float& v : x.data()) v = static_cast<float>(rng.uniform());
  return x;
}

double mean_abs_change(const Tensor<float>& a, const Tensor<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

TEST(Augment, ZeroProbabilityIsBitIdentical) {
  SeededRng rng(1);
  const auto x = random_patch(rng);
  for (AugmentationSpec spec : {AugmentationSpec::weak(), AugmentationSpec::strong()}) {
    spec.apply_probability = 0.0;
    const auto y = augment(x, spec, rng);
    EXPECT_EQ(y.to_vector(), x.to_vector());
  }
}

TEST(Augment, TinyBlurIsIdentity) {
  SeededRng rng(2);
  const auto x = random_patch(rng);
  const auto y = gaussian_blur(x, 0.1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-6);
  EXPECT_EQ(gaussian_blur(x, 0.0).to_vector(), x.to_vector());
}

TEST(Augment, BlurPreservesConstantImage) {
  const Tensor<float> x({1, 9, 7}, 0.4f);
  const auto y = gaussian_blur(x, 2.0);
  for (float v : y.data()) EXPECT_NEAR(v, 0.4f, 1e-6);
}

TEST(Augment, UnitContrastWithoutBlurOrNoiseIsIdentity) {
  SeededRng rng(3);
  const auto x = random_patch(rng);
  AugmentationSpec spec = AugmentationSpec::strong();
  spec.apply_probability = 1.0;
  spec.blur_sigma = {0.0, 0.0};
  spec.noise_sigma = {0.0, 0.0};
  spec.contrast = {1.0, 1.0};
  const auto y = augment(x, spec, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-6);
}

TEST(Augment, OutputStaysInUnitInterval) {
  SeededRng rng(4);
  AugmentationSpec spec = AugmentationSpec::strong();
  spec.apply_probability = 1.0;
  spec.noise_sigma = {0.5, 1.0};
  spec.contrast = {2.0, 3.0};
  for (int trial = 0; trial < 50; ++trial) {
    const auto y = augment(random_patch(rng), spec, rng);
    for (float v : y.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
  }
}

TEST(Augment, FixedSeedReproduces) {
  SeededRng data(5);
  const auto x = random_patch(data);
  SeededRng a(42), b(42);
  EXPECT_EQ(strong_augment(x, a).to_vector(), strong_augment(x, b).to_vector());
  EXPECT_EQ(weak_augment(x, a).to_vector(), weak_augment(x, b).to_vector());
}

TEST(Augment, StrongChangesMoreThanWeak) {
  SeededRng rng(6);
  double weak = 0.0, strong = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_patch(rng);
    weak += mean_abs_change(x, weak_augment(x, rng));
    strong += mean_abs_change(x, strong_augment(x, rng));
  }
  EXPECT_GT(strong, weak);
}

TEST(Augment, ReflectIndex) {
  EXPECT_EQ(reflect_index(-1, 5), 1);
  EXPECT_EQ(reflect_index(-2, 5), 2);
  EXPECT_EQ(reflect_index(5, 5), 3);
  EXPECT_EQ(reflect_index(6, 5), 2);
  EXPECT_EQ(reflect_index(2, 5), 2);
  EXPECT_EQ(reflect_index(-7, 1), 0);
  EXPECT_EQ(reflect_index(-9, 3), 1);
}

TEST(Augment, Validation) {
  AugmentationSpec spec;
  spec.apply_probability = 1.5;
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = AugmentationSpec::strong();
  spec.noise_sigma = {0.2, 0.1};
  EXPECT_THROW(spec.validate(), ConfigError);
  spec.noise_sigma = {-0.1, 0.1};
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_NO_THROW(AugmentationSpec::weak().validate());
  EXPECT_NO_THROW(AugmentationSpec::strong().validate());
}

}  // namespace
}  // namespace probadapt
