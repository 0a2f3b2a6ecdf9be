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

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/model.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8 by default).
template <typename T>
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  }

  double learning_rate() const noexcept { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const noexcept { return t_; }

  void step(PUNetWeights<T>& w, const Gradients<T>& grads) {
    if (grads.size() != w.size()) throw ShapeError("Adam: gradient count does not match parameters");
    if (m_.empty()) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_.emplace_back(w.tensor(i).shape());
        v_.emplace_back(w.tensor(i).shape());
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < w.size(); ++i) {
      Tensor<T>& p = w.tensor(i);
      const Tensor<T>& g = grads[i];
      if (!g.same_shape(p)) throw ShapeError("Adam: gradient shape mismatch for " + w.name(i));
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j];
        const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
        const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        p[j] = static_cast<T>(p[j] - lr_ * (mj / c1) / (std::sqrt(vj / c2) + eps_));
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Multiplies the learning rate by `factor` once the monitored metric (higher
// is better) has not improved by a relative 1e-4 for more than `patience` rounds.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, int patience = 10, double min_lr = 0.0)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {
    if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("plateau factor must lie in (0,1)");
    if (patience < 0) throw ConfigError("plateau patience must be non-negative");
  }

  // Returns the learning rate to use from now on.
  double step(double metric, double lr) {
    if (metric > best_ + std::abs(best_) * 1e-4 || best_ == -std::numeric_limits<double>::infinity()) {
      best_ = metric;
      bad_ = 0;
      return lr;
    }
    if (++bad_ > patience_) {
      bad_ = 0;
      return std::max(lr * factor_, min_lr_);
    }
    return lr;
  }

 private:
  double factor_;
  int patience_;
  double min_lr_;
  double best_ = -std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace probadapt
