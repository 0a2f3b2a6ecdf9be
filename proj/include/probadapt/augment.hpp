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

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/rng.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double draw(SeededRng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  friend bool operator==(const Interval&, const Interval&) = default;
};

enum class Strength { Weak, Strong };

// Intensity-only augmentation pipeline. Each transform is applied independently
// with apply_probability; contrast is only used by the strong pipeline.
struct AugmentationSpec {
  Strength strength = Strength::Weak;
  double apply_probability = 0.25;
  Interval blur_sigma{0.5, 1.5};
  Interval noise_sigma{0.01, 0.05};
  Interval contrast{1.0, 1.0};

  static AugmentationSpec weak() { return {}; }
  static AugmentationSpec strong() { return {Strength::Strong, 0.5, {0.5, 3.0}, {0.02, 0.1}, {0.6, 1.4}}; }

  void validate() const {
    if (!(apply_probability >= 0.0 && apply_probability <= 1.0)) {
      throw ConfigError("augmentation: apply_probability must lie in [0,1]");
    }
    for (const Interval* r : {&blur_sigma, &noise_sigma, &contrast}) {
      if (!(r->lo >= 0.0 && r->hi >= r->lo)) throw ConfigError("augmentation: ranges need 0 <= lo <= hi");
    }
  }

  friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

// Separable Gaussian blur, kernel radius ceil(3 sigma), reflect padding. sigma
// of zero (or a radius of zero) returns the input unchanged.
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& x, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (sigma <= 0.0 || radius == 0) return x;
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  const int c = x.channels(), h = x.height(), w = x.width();
  Tensor<T> tmp(x.shape()), out(x.shape());
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      for (int xo = 0; xo < w; ++xo) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * x(ci, y, reflect_index(xo + i, w));
        tmp(ci, y, xo) = static_cast<T>(acc);
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int xo = 0; xo < w; ++xo) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp(ci, reflect_index(y + i, h), xo);
        out(ci, y, xo) = static_cast<T>(acc);
      }
    }
  }
  return out;
}

template <typename T>
void clamp_unit(Tensor<T>& x) {
  for (T& v : x.data()) v = std::clamp(v, T(0), T(1));
}

// Applies blur, contrast (strong only) and additive noise, each with the
// spec's probability, then clamps to [0,1].
template <typename T>
Tensor<T> augment(const Tensor<T>& x, const AugmentationSpec& spec, SeededRng& rng) {
  if (spec.apply_probability == 0.0) return x;
  Tensor<T> out = x;
  if (rng.bernoulli(spec.apply_probability)) out = gaussian_blur(out, spec.blur_sigma.draw(rng));
  if (spec.strength == Strength::Strong && rng.bernoulli(spec.apply_probability)) {
    const double gamma = spec.contrast.draw(rng);
    for (T& v : out.data()) v = static_cast<T>(gamma * (v - 0.5) + 0.5);
  }
  if (rng.bernoulli(spec.apply_probability)) {
    const double sigma = spec.noise_sigma.draw(rng);
    for (T& v : out.data()) v = static_cast<T>(v + sigma * rng.normal());
  }
  clamp_unit(out);
  return out;
}

template <typename T>
Tensor<T> weak_augment(const Tensor<T>& x, SeededRng& rng, const AugmentationSpec& spec = AugmentationSpec::weak()) {
  return augment(x, spec, rng);
}

template <typename T>
Tensor<T> strong_augment(const Tensor<T>& x, SeededRng& rng,
                         const AugmentationSpec& spec = AugmentationSpec::strong()) {
  return augment(x, spec, rng);
}

}  // namespace probadapt
