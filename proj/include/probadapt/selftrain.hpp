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
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "probadapt/augment.hpp"
#include "probadapt/consensus.hpp"
#include "probadapt/data.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/losses.hpp"
#include "probadapt/model.hpp"
#include "probadapt/optim.hpp"
#include "probadapt/parallel.hpp"
#include "probadapt/rng.hpp"

namespace probadapt {

using Weights = PUNetWeights<float>;

enum class Method { MeanTeacher, FixMatch };
enum class Strategy { Source, Joint, Separate };

// One cell of the method grid {FM, MT} x {joint, separate} x {mask, weight,
// none}, or plain supervised source training.
struct MethodSpec {
  Strategy strategy = Strategy::Source;
  Method method = Method::MeanTeacher;
  FilterMode filter = FilterMode::NoFilter;

  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

// "source" or <fm|mt>_<j|s>[_<m|w>], e.g. "fm_j_m" or "mt_s".
inline std::string method_name(const MethodSpec& m) {
  if (m.strategy == Strategy::Source) return "source";
  std::string s = m.method == Method::FixMatch ? "fm" : "mt";
  s += m.strategy == Strategy::Joint ? "_j" : "_s";
  if (m.filter == FilterMode::Mask) s += "_m";
  if (m.filter == FilterMode::Weight) s += "_w";
  return s;
}

inline std::vector<std::string> grid_method_names() {
  std::vector<std::string> out;
  for (Method me : {Method::FixMatch, Method::MeanTeacher}) {
    for (Strategy st : {Strategy::Joint, Strategy::Separate}) {
      for (FilterMode f : {FilterMode::Mask, FilterMode::Weight, FilterMode::NoFilter}) {
        out.push_back(method_name({st, me, f}));
      }
    }
  }
  return out;
}

inline MethodSpec parse_method(const std::string& name) {
  if (name == "source") return {};
  for (Method me : {Method::FixMatch, Method::MeanTeacher}) {
    for (Strategy st : {Strategy::Joint, Strategy::Separate}) {
      for (FilterMode f : {FilterMode::Mask, FilterMode::Weight, FilterMode::NoFilter}) {
        if (method_name({st, me, f}) == name) return {st, me, f};
      }
    }
  }
  std::string valid;
  for (const auto& n : grid_method_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown method '" + name + "'; valid methods: source, " + valid);
}

struct TrainConfig {
  MethodSpec method;
  double theta = 0.9;
  int n_samples = 8;
  double alpha = 0.999;
  double beta = 1.0;
  // Pseudo-label target = mean of the N teacher samples instead of the first.
  bool mean_target = false;
  // Count the complement 1 - p of every sigmoid channel as a class of its own
  // when computing the consensus, so confident background also passes.
  bool consensus_complement = true;
  double learning_rate = 1e-3;
  int patch_h = 32;
  int patch_w = 32;
  int batch_size = 2;
  std::int64_t iterations = 2000;
  std::uint64_t seed = 0;
  int val_every = 100;
  int val_samples = 8;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  AugmentationSpec weak = AugmentationSpec::weak();
  AugmentationSpec strong = AugmentationSpec::strong();
  PUNetConfig model;

  bool ema_teacher() const noexcept { return method.method == Method::MeanTeacher; }
  const AugmentationSpec& teacher_augmentation() const noexcept { return weak; }
  const AugmentationSpec& student_augmentation() const noexcept {
    return method.method == Method::FixMatch ? strong : weak;
  }

  void validate() const {
    model.validate();
    weak.validate();
    strong.validate();
    if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("theta must lie in (0,1)");
    if (n_samples < 1) throw ConfigError("n_samples must be at least 1");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0,1]");
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (val_every < 1) throw ConfigError("val_every must be positive");
    if (val_samples < 1) throw ConfigError("val_samples must be positive");
    const int div = model.spatial_divisor();
    if (patch_h < 1 || patch_w < 1 || patch_h % div || patch_w % div) {
      throw ConfigError("patch shape " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                        " must be a positive multiple of " + std::to_string(div));
    }
  }
};

// Teacher probabilities used as soft targets, plus per-pixel loss weights.
struct PseudoLabel {
  Image target;   // (K, H, W)
  Image weights;  // (1, H, W)
  double mean_consensus = 0.0;
};

// Appends 1 - p for every channel: (K, H, W) -> (2K, H, W).
inline std::vector<Image> with_complement(const std::vector<Image>& samples) {
  std::vector<Image> out;
  out.reserve(samples.size());
  for (const Image& s : samples) {
    Image t({2 * s.channels(), s.height(), s.width()});
    const std::size_t n = s.size();
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = s[i];
      t[n + i] = 1.0f - s[i];
    }
    out.push_back(std::move(t));
  }
  return out;
}

// Pseudo-label: weak-augment x_u, draw N prior samples from the
// teacher, keep the first (or their mean) as target and filter by consensus.
// Runs on a graph without gradient tracking.
inline PseudoLabel make_pseudo_label(const Weights& teacher, const Image& x_u, const TrainConfig& cfg, SeededRng& rng) {
  const Image x = augment(x_u, cfg.teacher_augmentation(), rng);
  const auto samples = predict_samples(x, teacher, cfg.n_samples, rng);
  const ConsensusMap<float> c =
      consensus_response(cfg.consensus_complement ? with_complement(samples) : samples, cfg.theta);
  return {cfg.mean_target ? mean_of(samples) : samples.front(), filter_weights(c, cfg.method.filter), c.mean()};
}

namespace detail {

inline void add_into(Gradients<float>& acc, const Gradients<float>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += g[i][j];
  }
}

}  // namespace detail

// Full PUNet loss on labeled data: posterior-latent segmentation scored by
// batch dice, plus beta * mean KL(posterior || prior). Fills `grads` if given.
inline LossValue supervised_loss(const Weights& student, const std::vector<Image>& xs, const std::vector<Image>& ys,
                                 const TrainConfig& cfg, SeededRng& rng, Gradients<float>* grads = nullptr) {
  if (xs.empty() || xs.size() != ys.size()) throw ShapeError("supervised_loss: need matching non-empty batches");
  Graph<float> g(grads != nullptr);
  PUNetGraph<float> net(g, student);
  std::vector<Var> segs, kls;
  std::vector<const Image*> targets;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    check_patch(xs[i], student.config());
    detail::check_label(xs[i], ys[i], student.config());
    Var x = g.constant(xs[i]);
    Var features = net.unet_features(x);
    LatentVars prior = net.encode("prior", x);
    LatentVars post = net.encode("posterior", ag::concat_channels(g, {x, g.constant(ys[i])}));
    Var z = net.sample(post, draw_standard_normal<float>(student.config().latent_dim, rng));
    segs.push_back(net.combine(features, z));
    kls.push_back(ag::kl_diag_gaussians(g, post.mean, post.log_variance, prior.mean, prior.log_variance));
    targets.push_back(&ys[i]);
  }
  Var rec = ag::dice_error(g, segs, targets, {});
  Var kl = ag::weighted_sum(g, kls, std::vector<float>(kls.size(), 1.0f / static_cast<float>(kls.size())));
  Var total = ag::weighted_sum(g, {rec, kl}, {1.0f, static_cast<float>(cfg.beta)});
  LossValue v;
  v.reconstruction = g.value(rec)[0];
  v.variational = g.value(kl)[0];
  v.total = v.reconstruction + cfg.beta * v.variational;
  if (grads) {
    g.backward(total);
    *grads = net.gradients();
  }
  return v;
}

// Student loss on unlabeled data against constant pseudo-labels. Without a
// label the posterior cannot run, so the student predicts from a prior sample
// and the variational term is zero. When every pixel of the batch has weight
// zero the term is skipped (total 0, flag set, no gradient).
inline LossValue unsupervised_loss(const Weights& student, const std::vector<Image>& xs,
                                   const std::vector<PseudoLabel>& pls, const TrainConfig& cfg, SeededRng& rng,
                                   Gradients<float>* grads = nullptr) {
  if (xs.empty() || xs.size() != pls.size()) throw ShapeError("unsupervised_loss: need matching non-empty batches");
  LossValue v;
  double weight_mass = 0.0;
  for (const auto& pl : pls) {
    v.masked_fraction += masked_fraction(pl.weights);
    for (float w : pl.weights.data()) weight_mass += w;
  }
  v.masked_fraction /= static_cast<double>(pls.size());
  if (weight_mass == 0.0) {
    v.skipped = true;
    if (grads) *grads = Gradients<float>{};
    return v;
  }
  Graph<float> g(grads != nullptr);
  PUNetGraph<float> net(g, student);
  std::vector<Var> segs;
  std::vector<const Image*> targets, weights;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Image x_aug = augment(xs[i], cfg.student_augmentation(), rng);
    check_patch(x_aug, student.config());
    Var x = g.constant(x_aug);
    Var features = net.unet_features(x);
    LatentVars prior = net.encode("prior", x);
    Var z = net.sample(prior, draw_standard_normal<float>(student.config().latent_dim, rng));
    Var seg = net.combine(features, z);
    if (!pls[i].target.same_shape(g.value(seg))) throw ShapeError("unsupervised_loss: pseudo-label is not aligned with input");
    segs.push_back(seg);
    targets.push_back(&pls[i].target);
    weights.push_back(&pls[i].weights);
  }
  Var rec = ag::dice_error(g, segs, targets, weights);
  v.reconstruction = g.value(rec)[0];
  v.total = v.reconstruction;
  if (grads) {
    g.backward(rec);
    *grads = net.gradients();
  }
  return v;
}

// w_t <- alpha * w_t + (1 - alpha) * w_s for every parameter.
template <typename T>
void ema_update(PUNetWeights<T>& teacher, const PUNetWeights<T>& student, double alpha) {
  if (!teacher.same_architecture(student)) throw ShapeError("ema_update: teacher and student architectures differ");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor<T>& t = teacher.tensor(i);
    const Tensor<T>& s = student.tensor(i);
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<T>(alpha * t[j] + (1.0 - alpha) * s[j]);
  }
}

struct MetricsReport {
  double mean_dice = 0.0;
  std::vector<double> per_image;
  std::vector<int> indices;
};

// Mean per-image dice of the mean-of-samples prediction thresholded at 0.5
// (>= 0.5 is foreground). Each image draws from its own stream derived from
// (seed, index), so results do not depend on evaluation order.
inline MetricsReport evaluate(const Weights& w, const std::vector<Sample>& data, int n_samples, std::uint64_t seed = 0) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  const int classes = w.config().classes;
  MetricsReport r;
  r.per_image.assign(data.size(), 0.0);
  r.indices.resize(data.size());
  parallel_for(static_cast<int>(data.size()), [&](int i) {
    const Sample& s = data[static_cast<std::size_t>(i)];
    const Image target = target_of(s, classes);
    SeededRng rng = SeededRng(seed).derive("eval", static_cast<std::uint64_t>(s.index));
    Image pred = mean_of(predict_samples(s.image, w, n_samples, rng));
    for (float& v : pred.data()) v = v >= 0.5f ? 1.0f : 0.0f;
    r.per_image[static_cast<std::size_t>(i)] = dice_score(pred, target);
    r.indices[static_cast<std::size_t>(i)] = s.index;
  });
  double sum = 0.0;
  for (double d : r.per_image) sum += d;
  r.mean_dice = sum / static_cast<double>(data.size());
  return r;
}

// Label-free validation score for adaptation: 1 - mean unsupervised loss of
// the student against teacher pseudo-labels on held-out target images.
inline double consistency_score(const Weights& student, const Weights& teacher, const std::vector<Sample>& data,
                                const TrainConfig& cfg) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> loss(data.size(), 0.0);
  parallel_for(static_cast<int>(data.size()), [&](int i) {
    const Sample& s = data[static_cast<std::size_t>(i)];
    SeededRng rng = SeededRng(cfg.seed).derive("consistency", static_cast<std::uint64_t>(s.index));
    const PseudoLabel pl = make_pseudo_label(teacher, s.image, cfg, rng);
    loss[static_cast<std::size_t>(i)] = unsupervised_loss(student, {s.image}, {pl}, cfg, rng).total;
  });
  double sum = 0.0;
  for (double l : loss) sum += l;
  return 1.0 - sum / static_cast<double>(data.size());
}

struct MetricsRow {
  std::int64_t iteration = 0;
  double loss_total = 0.0;
  double loss_sup = 0.0;
  double loss_unsup = 0.0;
  double kl = 0.0;
  double masked_frac = 0.0;
  double mean_consensus = 0.0;
  std::optional<double> val_dice;
  double lr = 0.0;
};

inline std::string metrics_csv_header() {
  return "iteration,loss_total,loss_sup,loss_unsup,kl,masked_frac,mean_consensus,val_dice,lr\n";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,", static_cast<long long>(r.iteration),
                r.loss_total, r.loss_sup, r.loss_unsup, r.kl, r.masked_frac, r.mean_consensus);
  std::string s = buf;
  if (r.val_dice) {
    std::snprintf(buf, sizeof buf, "%.9g", *r.val_dice);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, ",%.9g\n", r.lr);
  return s + buf;
}

struct TrainResult {
  Weights student;
  Weights teacher;
  // Best-validation weights (source training) or the final student otherwise.
  Weights selected;
  std::int64_t best_iteration = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::int64_t skipped_unsupervised_steps = 0;
  std::vector<MetricsRow> rows;
};

// Called after every completed iteration, and once with iteration 0 before the
// first. `teacher` aliases `student` for weight-sharing methods.
using IterationObserver = std::function<void(std::int64_t iteration, const Weights& student, const Weights& teacher)>;
// Called with each metrics row as soon as it is complete.
using RowSink = std::function<void(const MetricsRow&)>;

struct TrainHooks {
  IterationObserver on_iteration;
  RowSink on_row;
};

namespace detail {

inline void require_finite(double v, std::int64_t it, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(it, std::string("non-finite ") + what);
}

inline bool grads_finite(const Gradients<float>& g) {
  for (const auto& t : g) {
    if (!t.all_finite()) return false;
  }
  return true;
}

// Shared loop for all three strategies; which losses run depends on which
// data is present.
inline TrainResult run_training(const TrainConfig& cfg, Weights initial, const std::vector<Sample>* source_train,
                                const std::vector<Sample>* target_train, const std::vector<Sample>* source_val,
                                const std::vector<Sample>* target_val, const TrainHooks& hooks) {
  cfg.validate();
  const Strategy strategy = cfg.method.strategy;
  const bool use_unsup = strategy != Strategy::Source && target_train && !target_train->empty();
  const bool use_sup = strategy != Strategy::Separate;
  if (use_sup && (!source_train || source_train->empty())) throw ConfigError("training needs labeled source data");
  if (strategy == Strategy::Separate && !use_unsup && cfg.iterations > 0) {
    throw ConfigError("separate adaptation needs unlabeled target data");
  }

  const SeededRng base(cfg.seed);
  TrainResult res{initial, initial, initial};
  Weights& student = res.student;
  const bool ema = cfg.ema_teacher();
  auto teacher_view = [&]() -> const Weights& { return ema ? res.teacher : student; };

  std::optional<PatchSampler> src, tgt;
  if (use_sup) {
    src.emplace(*source_train, cfg.patch_h, cfg.patch_w, cfg.batch_size, base.derive("source-batches"),
                cfg.model.classes, true);
  }
  if (use_unsup) {
    tgt.emplace(*target_train, cfg.patch_h, cfg.patch_w, cfg.batch_size, base.derive("target-batches"),
                cfg.model.classes, false);
  }

  Adam<float> opt(cfg.learning_rate);
  PlateauScheduler sched(cfg.plateau_factor, cfg.plateau_patience);
  const bool labeled_target_val =
      target_val && !target_val->empty() &&
      std::all_of(target_val->begin(), target_val->end(), [](const Sample& s) { return s.mask.has_value(); });

  if (hooks.on_iteration) hooks.on_iteration(0, student, teacher_view());

  for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
    MetricsRow row;
    row.iteration = it;
    row.lr = opt.learning_rate();
    Gradients<float> grads;
    try {
      if (use_sup) {
        const Batch b = src->next();
        SeededRng rng = base.derive("sup", static_cast<std::uint64_t>(it));
        Gradients<float> g;
        const LossValue l = supervised_loss(student, b.images, b.targets, cfg, rng, &g);
        require_finite(l.total, it, "supervised loss");
        row.loss_sup = l.total;
        row.kl = l.variational;
        add_into(grads, g);
      }
      if (use_unsup) {
        const Batch b = tgt->next();
        std::vector<PseudoLabel> pls;
        for (std::size_t i = 0; i < b.images.size(); ++i) {
          SeededRng rng = base.derive("pseudo", static_cast<std::uint64_t>(it) * 4096 + i);
          pls.push_back(make_pseudo_label(teacher_view(), b.images[i], cfg, rng));
          row.mean_consensus += pls.back().mean_consensus / static_cast<double>(b.images.size());
        }
        SeededRng rng = base.derive("unsup", static_cast<std::uint64_t>(it));
        Gradients<float> g;
        const LossValue l = unsupervised_loss(student, b.images, pls, cfg, rng, &g);
        require_finite(l.total, it, "unsupervised loss");
        row.loss_unsup = l.total;
        row.masked_frac = l.masked_fraction;
        if (l.skipped) ++res.skipped_unsupervised_steps;
        else add_into(grads, g);
      }
    } catch (const DivergenceError& e) {
      if (e.iteration() >= 0) throw;
      throw DivergenceError(it, e.what());
    }
    row.loss_total = row.loss_sup + row.loss_unsup;
    if (!grads.empty()) {
      if (!grads_finite(grads)) throw DivergenceError(it, "non-finite gradient");
      opt.step(student, grads);
    }
    if (ema) ema_update(res.teacher, student, cfg.alpha);

    if (it % cfg.val_every == 0 || it == cfg.iterations) {
      double metric = 0.0;
      if (labeled_target_val && strategy != Strategy::Source) {
        row.val_dice = evaluate(student, *target_val, cfg.val_samples, cfg.seed).mean_dice;
      }
      if (strategy == Strategy::Separate && target_val) {
        metric = consistency_score(student, teacher_view(), *target_val, cfg);
      } else if (source_val && !source_val->empty()) {
        metric = evaluate(student, *source_val, cfg.val_samples, cfg.seed).mean_dice;
        if (!row.val_dice) row.val_dice = metric;
      } else {
        metric = -row.loss_total;
      }
      if (std::isnan(metric)) metric = -row.loss_total;
      if (metric > res.best_metric) {
        res.best_metric = metric;
        res.best_iteration = it;
        if (strategy == Strategy::Source) res.selected = student;
      }
      opt.set_learning_rate(sched.step(metric, opt.learning_rate()));
    }
    res.rows.push_back(row);
    if (hooks.on_row) hooks.on_row(row);
    if (hooks.on_iteration) hooks.on_iteration(it, student, teacher_view());
  }
  if (strategy != Strategy::Source) res.selected = student;
  if (!ema) res.teacher = student;
  return res;
}

}  // namespace detail

struct DomainData {
  std::vector<Sample> train, val, test;
};

// Supervised pre-training on the source domain; the best-validation weights
// are returned in `selected`.
inline TrainResult train_source(const TrainConfig& cfg, const DomainData& source, const TrainHooks& hooks = {}) {
  TrainConfig c = cfg;
  c.method.strategy = Strategy::Source;
  return detail::run_training(c, Weights::initialized(c.model, SeededRng(c.seed).derive("weights").seed()),
                              &source.train, nullptr, &source.val, nullptr, hooks);
}

// Joint source/target self-training: every step combines the supervised
// source loss with the unsupervised target loss, then updates the teacher.
inline TrainResult train_joint(const TrainConfig& cfg, const DomainData& source, const DomainData& target,
                               const TrainHooks& hooks = {}) {
  if (cfg.method.strategy != Strategy::Joint) throw ConfigError("train_joint: method " + method_name(cfg.method) + " is not joint");
  return detail::run_training(cfg, Weights::initialized(cfg.model, SeededRng(cfg.seed).derive("weights").seed()),
                              &source.train, &target.train, &source.val, &target.val, hooks);
}

// Target-only adaptation of a pre-trained model; the teacher starts as a copy
// of the student and no source data is involved.
inline TrainResult adapt_separate(const TrainConfig& cfg, const Weights& pretrained, const DomainData& target,
                                  const TrainHooks& hooks = {}) {
  if (cfg.method.strategy != Strategy::Separate) {
    throw ConfigError("adapt_separate: method " + method_name(cfg.method) + " is not separate");
  }
  if (!(pretrained.config() == cfg.model)) throw ArchitectureMismatch("adapt_separate: pretrained model architecture differs from config");
  return detail::run_training(cfg, pretrained, nullptr, &target.train, nullptr, &target.val, hooks);
}

}  // namespace probadapt
