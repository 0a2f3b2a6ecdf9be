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

#include <cstddef>
#include <string>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

// Per-pixel consensus response over N sampled predictions: the fraction of
// samples in which at least one class reaches theta.
template <typename T>
struct ConsensusMap {
  Tensor<T> values;  // (1, H, W), each entry a multiple of 1/N
  int samples = 0;
  double theta = 0.5;

  double mean() const {
    double s = 0.0;
    for (T v : values.data()) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
};

enum class FilterMode { Mask, Weight, NoFilter };

inline const char* to_string(FilterMode m) {
  switch (m) {
    case FilterMode::Mask:
      return "mask";
    case FilterMode::Weight:
      return "weight";
    case FilterMode::NoFilter:
      return "none";
  }
  return "none";
}

inline FilterMode filter_mode_from_string(const std::string& s) {
  if (s == "mask" || s == "m") return FilterMode::Mask;
  if (s == "weight" || s == "w") return FilterMode::Weight;
  if (s == "none" || s.empty()) return FilterMode::NoFilter;
  throw ConfigError("unknown filter mode '" + s + "' (expected mask, weight or none)");
}

template <typename T>
ConsensusMap<T> consensus_response(const std::vector<Tensor<T>>& samples, double theta) {
  if (samples.empty()) throw ShapeError("consensus_response: no samples");
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("consensus_response: theta must lie in (0,1)");
  const Tensor<T>& first = samples.front();
  if (first.rank() != 3) throw ShapeError("consensus_response: expected (K,H,W), got " + shape_string(first.shape()));
  const int k = first.channels();
  const std::size_t hw = first.plane();
  std::vector<int> count(hw, 0);
  const T th = static_cast<T>(theta);
  for (const auto& s : samples) {
    if (!s.same_shape(first)) {
      throw ShapeError("consensus_response: sample " + shape_string(s.shape()) + " vs " + shape_string(first.shape()));
    }
    for (std::size_t i = 0; i < hw; ++i) {
      bool hit = false;
      for (int c = 0; c < k && !hit; ++c) hit = s[static_cast<std::size_t>(c) * hw + i] >= th;
      count[i] += hit ? 1 : 0;
    }
  }
  ConsensusMap<T> out{Tensor<T>({1, first.height(), first.width()}), static_cast<int>(samples.size()), theta};
  const T n = static_cast<T>(samples.size());
  for (std::size_t i = 0; i < hw; ++i) out.values[i] = static_cast<T>(count[i]) / n;
  return out;
}

// Mask keeps pixels with unanimous consensus, Weight uses the response itself,
// NoFilter keeps everything.
template <typename T>
Tensor<T> filter_weights(const ConsensusMap<T>& c, FilterMode mode) {
  Tensor<T> w(c.values.shape(), T(1));
  switch (mode) {
    case FilterMode::Mask:
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = c.values[i] == T(1) ? T(1) : T(0);
      break;
    case FilterMode::Weight:
      w = c.values;
      break;
    case FilterMode::NoFilter:
      break;
  }
  return w;
}

// Fraction of pixels whose weight is exactly zero.
template <typename T>
double masked_fraction(const Tensor<T>& weights) {
  if (weights.empty()) return 0.0;
  std::size_t zero = 0;
  for (T v : weights.data()) zero += v == T(0) ? 1 : 0;
  return static_cast<double>(zero) / static_cast<double>(weights.size());
}

}  // namespace probadapt
