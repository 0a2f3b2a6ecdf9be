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
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "probadapt/autograd.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/latent.hpp"
#include "probadapt/rng.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

struct PUNetConfig {
  // Encoder channel ladder; its length is the UNet depth.
  std::vector<int> ladder{8, 16, 32};
  int in_channels = 1;
  int latent_dim = 6;
  // 1 for binary foreground, 2 for foreground + boundary.
  int classes = 1;
  // 1x1 layers in the head that fuses UNet features with the latent sample.
  int comb_layers = 3;

  int depth() const noexcept { return static_cast<int>(ladder.size()); }
  int features() const { return ladder.front(); }
  // Spatial extents must be multiples of this.
  int spatial_divisor() const noexcept { return 1 << (depth() - 1); }

  void validate() const {
    if (ladder.empty()) throw ConfigError("model: channel ladder must not be empty");
    for (int c : ladder) {
      if (c < 1) throw ConfigError("model: channel counts must be positive");
    }
    if (in_channels < 1) throw ConfigError("model: in_channels must be positive");
    if (latent_dim < 1) throw ConfigError("model: latent_dim must be at least 1");
    if (classes < 1) throw ConfigError("model: classes must be at least 1");
    if (comb_layers < 1) throw ConfigError("model: comb_layers must be at least 1");
  }

  friend bool operator==(const PUNetConfig&, const PUNetConfig&) = default;
};

// Named parameter tensors of a Probabilistic UNet: deterministic UNet backbone,
// prior and posterior encoders (identical apart from the posterior's extra label
// input channels) and the combination head.
template <typename T>
class PUNetWeights {
 public:
  PUNetWeights() = default;

  // All-zero weights of the given architecture.
  static PUNetWeights zeros(const PUNetConfig& cfg) {
    cfg.validate();
    PUNetWeights w;
    w.cfg_ = cfg;
    w.build();
    return w;
  }

  // Fan-in scaled normal init (std = sqrt(2 / fan_in)) for weights, zero biases.
  static PUNetWeights initialized(const PUNetConfig& cfg, std::uint64_t seed) {
    PUNetWeights w = zeros(cfg);
    SeededRng rng = SeededRng(seed).derive("init");
    for (std::size_t i = 0; i < w.tensors_.size(); ++i) {
      if (w.fan_in_[i] == 0) continue;
      const double std = std::sqrt(2.0 / w.fan_in_[i]);
      for (T& v : w.tensors_[i].data()) v = static_cast<T>(std * rng.normal());
    }
    return w;
  }

  template <typename U>
  static PUNetWeights cast(const PUNetWeights<U>& other) {
    PUNetWeights w = zeros(other.config());
    for (std::size_t i = 0; i < w.size(); ++i) w.tensors_[i] = Tensor<T>::cast(other.tensor(i));
    return w;
  }

  const PUNetConfig& config() const noexcept { return cfg_; }
  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  Tensor<T>& tensor(std::size_t i) { return tensors_.at(i); }
  const Tensor<T>& tensor(std::size_t i) const { return tensors_.at(i); }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T>& operator[](const std::string& name) { return tensors_[index(name)]; }
  const Tensor<T>& operator[](const std::string& name) const { return tensors_[index(name)]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  bool same_architecture(const PUNetWeights& o) const {
    if (cfg_ != o.cfg_ || names_ != o.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (!tensors_[i].same_shape(o.tensors_[i])) return false;
    }
    return true;
  }

  friend bool operator==(const PUNetWeights& a, const PUNetWeights& b) {
    return a.cfg_ == b.cfg_ && a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  void add(const std::string& name, std::vector<int> shape, double fan_in) {
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape));
    fan_in_.push_back(fan_in);
  }
  void add_conv(const std::string& prefix, int cin, int cout, int k) {
    add(prefix + ".weight", {cout, cin, k, k}, static_cast<double>(cin) * k * k);
    add(prefix + ".bias", {cout}, 0.0);
  }
  void add_encoder(const std::string& prefix, int cin) {
    for (int l = 0; l < cfg_.depth(); ++l) {
      const std::string p = prefix + ".enc" + std::to_string(l);
      add_conv(p + ".conv0", l == 0 ? cin : cfg_.ladder[l - 1], cfg_.ladder[l], 3);
      add_conv(p + ".conv1", cfg_.ladder[l], cfg_.ladder[l], 3);
    }
  }
  void build() {
    add_encoder("unet", cfg_.in_channels);
    for (int l = cfg_.depth() - 2; l >= 0; --l) {
      const std::string p = "unet.dec" + std::to_string(l);
      add(p + ".up.weight", {cfg_.ladder[l + 1], cfg_.ladder[l], 2, 2}, cfg_.ladder[l + 1]);
      add(p + ".up.bias", {cfg_.ladder[l]}, 0.0);
      add_conv(p + ".conv0", 2 * cfg_.ladder[l], cfg_.ladder[l], 3);
      add_conv(p + ".conv1", cfg_.ladder[l], cfg_.ladder[l], 3);
    }
    for (const char* enc : {"prior", "posterior"}) {
      const std::string e(enc);
      add_encoder(e, cfg_.in_channels + (e == "posterior" ? cfg_.classes : 0));
      add_conv(e + ".head", cfg_.ladder.back(), 2 * cfg_.latent_dim, 1);
    }
    for (int i = 0; i < cfg_.comb_layers; ++i) {
      const int cin = i == 0 ? cfg_.features() + cfg_.latent_dim : cfg_.features();
      const int cout = i + 1 == cfg_.comb_layers ? cfg_.classes : cfg_.features();
      add_conv("comb.conv" + std::to_string(i), cin, cout, 1);
    }
  }

  PUNetConfig cfg_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::vector<double> fan_in_;
  std::map<std::string, std::size_t> index_;
};

// Per-parameter gradients aligned with PUNetWeights::tensor(i).
template <typename T>
using Gradients = std::vector<Tensor<T>>;

// Throws ShapeError unless x is a (C, H, W) patch the network accepts.
template <typename T>
void check_patch(const Tensor<T>& x, const PUNetConfig& cfg, const char* what = "input") {
  if (x.rank() != 3) throw ShapeError(std::string(what) + ": expected (C,H,W), got " + shape_string(x.shape()));
  if (x.channels() != cfg.in_channels) {
    throw ShapeError(std::string(what) + ": channels " + std::to_string(x.channels()) + " != " +
                     std::to_string(cfg.in_channels));
  }
  const int div = cfg.spatial_divisor();
  if (x.height() < 1 || x.height() % div) {
    throw ShapeError(std::string(what) + ": height " + std::to_string(x.height()) + " is not a positive multiple of " +
                     std::to_string(div));
  }
  if (x.width() < 1 || x.width() % div) {
    throw ShapeError(std::string(what) + ": width " + std::to_string(x.width()) + " is not a positive multiple of " +
                     std::to_string(div));
  }
  for (T v : x.data()) {
    if (!(v >= T(0) && v <= T(1))) throw ShapeError(std::string(what) + ": pixel values must lie in [0,1]");
  }
}

// Latent parameters as graph nodes, each (D, 1, 1).
struct LatentVars {
  Var mean;
  Var log_variance;
};

// Binds one weight set to one graph. Every parameter becomes a single leaf, so
// gradients from all uses inside the graph (e.g. a whole batch) accumulate.
template <typename T>
class PUNetGraph {
 public:
  PUNetGraph(Graph<T>& g, const PUNetWeights<T>& w) : g_(g), w_(w), vars_(w.size()) {}

  Graph<T>& graph() noexcept { return g_; }
  const PUNetConfig& config() const noexcept { return w_.config(); }

  Var param(const std::string& name) {
    const std::size_t i = w_.index(name);
    if (vars_[i].id < 0) vars_[i] = g_.parameter(w_.tensor(i));
    return vars_[i];
  }

  Var conv(const std::string& prefix, Var x, int k) {
    return ag::conv2d(g_, x, param(prefix + ".weight"), param(prefix + ".bias"), k / 2);
  }

  Var block(const std::string& prefix, Var x) {
    x = ag::relu(g_, conv(prefix + ".conv0", x, 3));
    return ag::relu(g_, conv(prefix + ".conv1", x, 3));
  }

  // Full-resolution UNet features, (ladder[0], H, W).
  Var unet_features(Var x) {
    const int depth = config().depth();
    std::vector<Var> skips;
    for (int l = 0; l < depth; ++l) {
      if (l > 0) x = ag::max_pool2(g_, x);
      x = block("unet.enc" + std::to_string(l), x);
      skips.push_back(x);
    }
    for (int l = depth - 2; l >= 0; --l) {
      const std::string p = "unet.dec" + std::to_string(l);
      Var up = ag::conv_transpose2x2(g_, x, param(p + ".up.weight"), param(p + ".up.bias"));
      x = block(p, ag::concat_channels(g_, {up, skips[static_cast<std::size_t>(l)]}));
    }
    return x;
  }

  // prefix is "prior" or "posterior".
  LatentVars encode(const std::string& prefix, Var x) {
    for (int l = 0; l < config().depth(); ++l) {
      if (l > 0) x = ag::max_pool2(g_, x);
      x = block(prefix + ".enc" + std::to_string(l), x);
    }
    Var head = conv(prefix + ".head", ag::global_mean(g_, x), 1);
    const int d = config().latent_dim;
    return {ag::slice_channels(g_, head, 0, d), ag::slice_channels(g_, head, d, d)};
  }

  Var sample(const LatentVars& lat, Tensor<T> eps) {
    return ag::reparameterize(g_, lat.mean, lat.log_variance, std::move(eps));
  }

  // Tiles z over the plane, concatenates it to the features and applies the
  // 1x1 head with a per-class sigmoid.
  Var combine(Var features, Var z) {
    const Tensor<T>& f = g_.value(features);
    Var x = ag::concat_channels(g_, {features, ag::tile(g_, z, f.height(), f.width())});
    const int layers = config().comb_layers;
    for (int i = 0; i < layers; ++i) {
      x = conv("comb.conv" + std::to_string(i), x, 1);
      if (i + 1 < layers) x = ag::relu(g_, x);
    }
    return ag::sigmoid(g_, x);
  }

  // Gradients w.r.t. every weight tensor after g.backward(); zero for unused ones.
  Gradients<T> gradients() {
    Gradients<T> out;
    out.reserve(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].id >= 0 && g_.has_grad(vars_[i])) {
        out.push_back(g_.grad(vars_[i]));
      } else {
        out.emplace_back(w_.tensor(i).shape());
      }
    }
    return out;
  }

 private:
  Graph<T>& g_;
  const PUNetWeights<T>& w_;
  std::vector<Var> vars_;
};

template <typename T>
LatentGaussian<T> to_gaussian(const Graph<T>& g, const LatentVars& lat) {
  const auto& m = g.value(lat.mean);
  const auto& l = g.value(lat.log_variance);
  LatentGaussian<T> out{{m.data().begin(), m.data().end()}, {l.data().begin(), l.data().end()}};
  for (std::size_t i = 0; i < out.mean.size(); ++i) {
    if (!std::isfinite(out.mean[i]) || !std::isfinite(out.log_variance[i])) {
      throw DivergenceError(-1, "non-finite latent parameters");
    }
  }
  return out;
}

namespace detail {

template <typename T>
void check_label(const Tensor<T>& x, const Tensor<T>& y, const PUNetConfig& cfg) {
  if (y.rank() != 3 || y.channels() != cfg.classes || y.height() != x.height() || y.width() != x.width()) {
    throw ShapeError("label " + shape_string(y.shape()) + " does not match input " + shape_string(x.shape()) +
                     " with " + std::to_string(cfg.classes) + " class channel(s)");
  }
}

}  // namespace detail

template <typename T>
Tensor<T> unet_features(const Tensor<T>& x, const PUNetWeights<T>& w) {
  check_patch(x, w.config());
  Graph<T> g(false);
  PUNetGraph<T> net(g, w);
  return g.value(net.unet_features(g.constant(x)));
}

template <typename T>
LatentGaussian<T> prior_encode(const Tensor<T>& x, const PUNetWeights<T>& w) {
  check_patch(x, w.config());
  Graph<T> g(false);
  PUNetGraph<T> net(g, w);
  return to_gaussian(g, net.encode("prior", g.constant(x)));
}

template <typename T>
LatentGaussian<T> posterior_encode(const Tensor<T>& x, const Tensor<T>& y, const PUNetWeights<T>& w) {
  check_patch(x, w.config());
  detail::check_label(x, y, w.config());
  Graph<T> g(false);
  PUNetGraph<T> net(g, w);
  Var xy = ag::concat_channels(g, {g.constant(x), g.constant(y)});
  return to_gaussian(g, net.encode("posterior", xy));
}

template <typename T>
Tensor<T> combine_predict(const Tensor<T>& features, const std::vector<T>& z, const PUNetWeights<T>& w) {
  const PUNetConfig& cfg = w.config();
  if (static_cast<int>(z.size()) != cfg.latent_dim) {
    throw ShapeError("combine_predict: latent has length " + std::to_string(z.size()) + ", expected " +
                     std::to_string(cfg.latent_dim));
  }
  if (features.rank() != 3 || features.channels() != cfg.features()) {
    throw ShapeError("combine_predict: features " + shape_string(features.shape()) + " do not match the head");
  }
  Graph<T> g(false);
  PUNetGraph<T> net(g, w);
  Var zv = g.constant(Tensor<T>({cfg.latent_dim, 1, 1}, z));
  return g.value(net.combine(g.constant(features), zv));
}

template <typename T>
struct TrainForward {
  Tensor<T> segmentation;
  LatentGaussian<T> prior;
  LatentGaussian<T> posterior;
};

// Training-mode pass: the segmentation comes from a posterior latent sample.
template <typename T>
TrainForward<T> forward_train(const Tensor<T>& x, const Tensor<T>& y, const PUNetWeights<T>& w, SeededRng& rng) {
  check_patch(x, w.config());
  detail::check_label(x, y, w.config());
  Graph<T> g(false);
  PUNetGraph<T> net(g, w);
  Var xv = g.constant(x);
  Var features = net.unet_features(xv);
  LatentVars prior = net.encode("prior", xv);
  LatentVars post = net.encode("posterior", ag::concat_channels(g, {xv, g.constant(y)}));
  Var z = net.sample(post, draw_standard_normal<T>(w.config().latent_dim, rng));
  Var seg = net.combine(features, z);
  return {g.value(seg), to_gaussian(g, prior), to_gaussian(g, post)};
}

// n segmentations from independent prior samples; features and the prior are
// evaluated once.
template <typename T>
std::vector<Tensor<T>> predict_samples(const Tensor<T>& x, const PUNetWeights<T>& w, int n, SeededRng& rng) {
  if (n < 1) throw ConfigError("predict_samples: need at least one sample, got " + std::to_string(n));
  check_patch(x, w.config());
  Graph<T> g(false);
  PUNetGraph<T> net(g, w);
  Var xv = g.constant(x);
  Var features = net.unet_features(xv);
  LatentVars prior = net.encode("prior", xv);
  to_gaussian(g, prior);
  std::vector<Tensor<T>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var z = net.sample(prior, draw_standard_normal<T>(w.config().latent_dim, rng));
    out.push_back(g.value(net.combine(features, z)));
  }
  return out;
}

template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& samples) {
  if (samples.empty()) throw ShapeError("mean_of: no samples");
  Tensor<T> m(samples.front().shape());
  for (const auto& s : samples) {
    if (!s.same_shape(m)) throw ShapeError("mean_of: sample shapes differ");
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += s[i];
  }
  for (T& v : m.data()) v /= static_cast<T>(samples.size());
  return m;
}

}  // namespace probadapt
