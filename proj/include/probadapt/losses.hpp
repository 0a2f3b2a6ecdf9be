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
#include <optional>
#include <vector>

#include "probadapt/autograd.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/latent.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

inline constexpr double kDiceEpsilon = 1e-6;

struct LossValue {
  double total = 0.0;
  double reconstruction = 0.0;
  double variational = 0.0;
  double masked_fraction = 0.0;
  // The unsupervised term had no support (every pixel masked) and was dropped.
  bool skipped = false;
};

// One prediction/target pair of a dice evaluation. Prediction and target are
// (K, H, W); the optional pixel weights are (1, H, W) and shared by all classes.
template <typename T>
struct DiceItem {
  const Tensor<T>* pred = nullptr;
  const Tensor<T>* target = nullptr;
  const Tensor<T>* weights = nullptr;
};

namespace detail {

template <typename T>
void check_dice_item(const DiceItem<T>& it) {
  if (!it.pred || !it.target) throw ShapeError("dice: missing prediction or target");
  if (!it.pred->same_shape(*it.target)) {
    throw ShapeError("dice: prediction " + shape_string(it.pred->shape()) + " vs target " +
                     shape_string(it.target->shape()));
  }
  if (it.pred->rank() != 3) throw ShapeError("dice: expected (K,H,W), got " + shape_string(it.pred->shape()));
  if (it.weights && (it.weights->rank() != 3 || it.weights->channels() != 1 ||
                     it.weights->height() != it.pred->height() || it.weights->width() != it.pred->width())) {
    throw ShapeError("dice: weights " + shape_string(it.weights->shape()) + " do not cover prediction " +
                     shape_string(it.pred->shape()));
  }
}

struct DiceSums {
  std::vector<double> inter, pred, target;
};

// Per-class weighted sums accumulated over every item (batch-flattened dice).
template <typename T>
DiceSums dice_sums(const std::vector<DiceItem<T>>& items) {
  if (items.empty()) throw ShapeError("dice: empty batch");
  const int k = items.front().pred ? items.front().pred->channels() : 0;
  DiceSums s{std::vector<double>(k), std::vector<double>(k), std::vector<double>(k)};
  for (const auto& it : items) {
    check_dice_item(it);
    if (it.pred->channels() != k) throw ShapeError("dice: class count differs inside batch");
    const std::size_t hw = it.pred->plane();
    for (int c = 0; c < k; ++c) {
      auto p = it.pred->channel(c);
      auto t = it.target->channel(c);
      for (std::size_t i = 0; i < hw; ++i) {
        const double w = it.weights ? static_cast<double>((*it.weights)[i]) : 1.0;
        s.inter[c] += w * p[i] * t[i];
        s.pred[c] += w * p[i];
        s.target[c] += w * t[i];
      }
    }
  }
  return s;
}

inline double class_score(const DiceSums& s, std::size_t c) {
  const double denom = s.pred[c] + s.target[c];
  if (denom == 0.0) return 1.0;
  return 2.0 * s.inter[c] / (denom + kDiceEpsilon);
}

}  // namespace detail

// Batch dice score: 2*sum(w p t) / (sum(w p) + sum(w t) + eps) per class, sums
// running over all pixels of all items, averaged over classes. A class with
// no mass in either prediction or target scores 1.
template <typename T>
double dice_score(const std::vector<DiceItem<T>>& items) {
  const auto s = detail::dice_sums(items);
  double acc = 0.0;
  for (std::size_t c = 0; c < s.inter.size(); ++c) acc += detail::class_score(s, c);
  return acc / static_cast<double>(s.inter.size());
}

template <typename T>
double dice_score(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>* weights = nullptr) {
  return dice_score<T>({DiceItem<T>{&pred, &target, weights}});
}

template <typename T>
double dice_error(const std::vector<DiceItem<T>>& items) {
  return 1.0 - dice_score(items);
}

template <typename T>
double dice_error(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>* weights = nullptr) {
  return 1.0 - dice_score(pred, target, weights);
}

// d(dice_error)/d(pred) for every item; targets and weights are constants.
template <typename T>
std::vector<Tensor<T>> dice_error_gradient(const std::vector<DiceItem<T>>& items) {
  const auto s = detail::dice_sums(items);
  const std::size_t k = s.inter.size();
  std::vector<double> a(k), b(k);  // dE/dp = -(a * w t - b * w) / K
  for (std::size_t c = 0; c < k; ++c) {
    const double denom = s.pred[c] + s.target[c];
    if (denom == 0.0) continue;
    const double d = denom + kDiceEpsilon;
    a[c] = 2.0 / d;
    b[c] = 2.0 * s.inter[c] / (d * d);
  }
  std::vector<Tensor<T>> grads;
  grads.reserve(items.size());
  for (const auto& it : items) {
    Tensor<T> gp(it.pred->shape());
    const std::size_t hw = it.pred->plane();
    for (std::size_t c = 0; c < k; ++c) {
      auto t = it.target->channel(static_cast<int>(c));
      auto g = gp.channel(static_cast<int>(c));
      for (std::size_t i = 0; i < hw; ++i) {
        const double w = it.weights ? static_cast<double>((*it.weights)[i]) : 1.0;
        g[i] = static_cast<T>(-(a[c] * w * t[i] - b[c] * w) / static_cast<double>(k));
      }
    }
    grads.push_back(std::move(gp));
  }
  return grads;
}

// KL(posterior || prior) between diagonal Gaussians.
template <typename T>
double kl_diag_gaussians(const LatentGaussian<T>& posterior, const LatentGaussian<T>& prior) {
  if (posterior.mean.size() != prior.mean.size() || posterior.log_variance.size() != prior.log_variance.size()) {
    throw ShapeError("kl_diag_gaussians: dimension mismatch (" + std::to_string(posterior.mean.size()) + " vs " +
                     std::to_string(prior.mean.size()) + ")");
  }
  double kl = 0.0;
  for (std::size_t d = 0; d < posterior.mean.size(); ++d) {
    const double lq = posterior.log_variance[d], lp = prior.log_variance[d];
    const double dm = static_cast<double>(prior.mean[d]) - posterior.mean[d];
    kl += 0.5 * (std::exp(lq - lp) + dm * dm / std::exp(lp) - 1.0 + lp - lq);
  }
  return kl;
}

// L = dice_error(seg, target, weights) + beta * KL(posterior || prior).
template <typename T>
LossValue punet_loss(const Tensor<T>& seg, const Tensor<T>& target, const LatentGaussian<T>& prior,
                     const LatentGaussian<T>& posterior, double beta, const Tensor<T>* weights = nullptr) {
  if (!(beta >= 0.0)) throw ConfigError("punet_loss: beta must be non-negative");
  LossValue v;
  v.reconstruction = dice_error(seg, target, weights);
  v.variational = kl_diag_gaussians(posterior, prior);
  v.total = v.reconstruction + beta * v.variational;
  return v;
}

namespace ag {

// Graph node for the batch dice error of `preds` against constant targets.
template <typename T>
Var dice_error(Graph<T>& g, const std::vector<Var>& preds, const std::vector<const Tensor<T>*>& targets,
               const std::vector<const Tensor<T>*>& weights) {
  if (preds.size() != targets.size() || (!weights.empty() && weights.size() != preds.size())) {
    throw ShapeError("dice_error node: batch size mismatch");
  }
  std::vector<DiceItem<T>> items;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    items.push_back({&g.value(preds[i]), targets[i], weights.empty() ? nullptr : weights[i]});
  }
  const double err = probadapt::dice_error(items);
  return g.record(Tensor<T>({1}, static_cast<T>(err)), preds, [=](Graph<T>& gr, int self) {
    const T go = gr.grad(Var{self})[0];
    std::vector<DiceItem<T>> its;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      its.push_back({&gr.value(preds[i]), targets[i], weights.empty() ? nullptr : weights[i]});
    }
    const auto grads = dice_error_gradient(its);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!gr.requires_grad(preds[i])) continue;
      Tensor<T>& gp = gr.grad(preds[i]);
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += go * grads[i][j];
    }
  });
}

// Graph node for KL(q || p); all four inputs are (D, 1, 1).
template <typename T>
Var kl_diag_gaussians(Graph<T>& g, Var q_mean, Var q_log_variance, Var p_mean, Var p_log_variance) {
  auto gaussian = [&g](Var m, Var l) {
    const auto& mv = g.value(m);
    const auto& lv = g.value(l);
    return LatentGaussian<T>{{mv.data().begin(), mv.data().end()}, {lv.data().begin(), lv.data().end()}};
  };
  const double kl = probadapt::kl_diag_gaussians(gaussian(q_mean, q_log_variance), gaussian(p_mean, p_log_variance));
  return g.record(Tensor<T>({1}, static_cast<T>(kl)), {q_mean, q_log_variance, p_mean, p_log_variance},
                  [=](Graph<T>& gr, int self) {
                    const double go = gr.grad(Var{self})[0];
                    const auto& mq = gr.value(q_mean);
                    const auto& lq = gr.value(q_log_variance);
                    const auto& mp = gr.value(p_mean);
                    const auto& lp = gr.value(p_log_variance);
                    const std::size_t d = mq.size();
                    std::vector<double> gmq(d), glq(d), gmp(d), glp(d);
                    for (std::size_t i = 0; i < d; ++i) {
                      const double ratio = std::exp(static_cast<double>(lq[i]) - lp[i]);
                      const double inv_vp = std::exp(-static_cast<double>(lp[i]));
                      const double dm = static_cast<double>(mp[i]) - mq[i];
                      gmq[i] = -dm * inv_vp;
                      gmp[i] = dm * inv_vp;
                      glq[i] = 0.5 * (ratio - 1.0);
                      glp[i] = 0.5 * (-ratio - dm * dm * inv_vp + 1.0);
                    }
                    auto push = [&](Var v, const std::vector<double>& gv) {
                      if (!gr.requires_grad(v)) return;
                      Tensor<T>& t = gr.grad(v);
                      for (std::size_t i = 0; i < d; ++i) t[i] += static_cast<T>(go * gv[i]);
                    };
                    push(q_mean, gmq);
                    push(q_log_variance, glq);
                    push(p_mean, gmp);
                    push(p_log_variance, glp);
                  });
}

}  // namespace ag
}  // namespace probadapt
