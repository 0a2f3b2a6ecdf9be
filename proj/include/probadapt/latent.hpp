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
#include <cstddef>
#include <vector>

#include "probadapt/autograd.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/rng.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

// Diagonal Gaussian over the latent space.
template <typename T>
struct LatentGaussian {
  std::vector<T> mean;
  std::vector<T> log_variance;

  int dim() const noexcept { return static_cast<int>(mean.size()); }

  void validate() const {
    if (mean.empty()) throw ShapeError("LatentGaussian: dimension must be at least 1");
    if (mean.size() != log_variance.size()) {
      throw ShapeError("LatentGaussian: mean has length " + std::to_string(mean.size()) +
                       " but log_variance has length " + std::to_string(log_variance.size()));
    }
    auto finite = [](T v) { return std::isfinite(v); };
    if (!std::all_of(mean.begin(), mean.end(), finite) ||
        !std::all_of(log_variance.begin(), log_variance.end(), finite)) {
      throw Error("LatentGaussian: non-finite parameter");
    }
  }

  friend bool operator==(const LatentGaussian&, const LatentGaussian&) = default;
};

// Standard-normal noise for one latent draw.
template <typename T>
Tensor<T> draw_standard_normal(int dim, SeededRng& rng) {
  Tensor<T> eps({dim, 1, 1});
  for (T& v : eps.data()) v = static_cast<T>(rng.normal());
  return eps;
}

// Reparameterised draw z = mean + sigma * eps with sigma = exp(0.5 * lv),
// lv capped at ag::kMaxLogVariance.
template <typename T>
std::vector<T> sample_latent(const LatentGaussian<T>& g, SeededRng& rng) {
  g.validate();
  const Tensor<T> eps = draw_standard_normal<T>(g.dim(), rng);
  std::vector<T> z(g.mean.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = g.mean[i] + std::exp(T(0.5) * std::min(g.log_variance[i], T(ag::kMaxLogVariance))) * eps[i];
  }
  return z;
}

}  // namespace probadapt
