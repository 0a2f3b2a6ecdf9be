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

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/tensor.hpp"

// Minimal reverse-mode differentiation over rank-3 (C, H, W) tensors: just the
// layers a 2-D UNet with latent injection needs.

namespace probadapt {

struct Var {
  int id = -1;
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  // With track_gradients == false no backward closures are kept and backward()
  // is unavailable; used for teacher and evaluation passes.
  explicit Graph(bool track_gradients = true) : track_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const noexcept { return track_; }

  Var constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Leaf that refers to externally owned storage (a weight tensor). The
  // referenced tensor must outlive the graph and stay unmodified meanwhile.
  Var parameter(const Tensor<T>& ref) {
    Node n;
    n.ref = &ref;
    n.requires_grad = track_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.ref ? *n.ref : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  // Gradient buffer of v, zero-initialised on first use.
  Tensor<T>& grad(Var v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.touched) {
      n.grad = Tensor<T>(value(v).shape());
      n.touched = true;
    }
    return n.grad;
  }

  // Whether any gradient reached v during backward().
  bool has_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).touched; }

  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var record(Tensor<T> value, const std::vector<Var>& parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (track_) {
      for (Var p : parents) n.requires_grad = n.requires_grad || requires_grad(p);
      if (n.requires_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Seeds d(root)/d(root) = seed for a single-element root and propagates.
  void backward(Var root, T seed = T(1)) {
    if (!track_) throw Error("backward() on a graph built without gradient tracking");
    if (value(root).size() != 1) throw ShapeError("backward() needs a scalar root, got " + shape_string(value(root).shape()));
    if (!requires_grad(root)) return;
    grad(root)[0] += seed;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.touched && n.backward) n.backward(*this, i);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    bool touched = false;
    BackwardFn backward;
  };

  bool track_;
  std::vector<Node> nodes_;
};

namespace ag {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
void im2col(const Tensor<T>& x, int k, int pad, T* cols) {
  const int c = x.channels(), h = x.height(), w = x.width();
  const std::size_t hw = x.plane();
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          T* out = row + static_cast<std::size_t>(y) * w;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* in = &x(ci, iy, 0);
          for (int xo = 0; xo < w; ++xo) {
            const int ix = xo + kx - pad;
            out[xo] = (ix < 0 || ix >= w) ? T(0) : in[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, int k, int pad, Tensor<T>& dx) {
  const int c = dx.channels(), h = dx.height(), w = dx.width();
  const std::size_t hw = dx.plane();
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const T* in = row + static_cast<std::size_t>(y) * w;
          T* out = &dx(ci, iy, 0);
          for (int xo = 0; xo < w; ++xo) {
            const int ix = xo + kx - pad;
            if (ix >= 0 && ix < w) out[ix] += in[xo];
          }
        }
      }
    }
  }
}

inline void require_rank3(const std::vector<int>& shape, const char* op) {
  if (shape.size() != 3) throw ShapeError(std::string(op) + ": expected (C,H,W), got " + shape_string(shape));
}

}  // namespace detail

// Same-size convolution, stride 1. weight: (Cout, Cin, k, k); bias: (Cout).
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, Var bias, int pad) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(weight);
  detail::require_rank3(xv.shape(), "conv2d");
  const int cout = wv.dim(0), cin = wv.dim(1), k = wv.dim(2);
  if (cin != xv.channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(xv.channels()) + " channels, weight expects " +
                     std::to_string(cin));
  }
  if (2 * pad != k - 1) throw ShapeError("conv2d: only same-size padding is supported");
  const int h = xv.height(), w = xv.width();
  const Eigen::Index hw = static_cast<Eigen::Index>(xv.plane());
  const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;

  std::shared_ptr<AlignedVector<T>> cols;
  const T* colptr = xv.ptr();
  if (k != 1) {
    cols = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(kk * hw));
    detail::im2col(xv, k, pad, cols->data());
    colptr = cols->data();
  }
  Tensor<T> out({cout, h, w});
  MatMap<T> om(out.ptr(), cout, hw);
  om.noalias() = ConstMatMap<T>(wv.ptr(), cout, kk) * ConstMatMap<T>(colptr, kk, hw);
  const Tensor<T>& bv = g.value(bias);
  for (int co = 0; co < cout; ++co) om.row(co).array() += bv[co];

  return g.record(std::move(out), {x, weight, bias}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    ConstMatMap<T> gm(go.ptr(), cout, hw);
    const T* cp = cols ? cols->data() : gr.value(x).ptr();
    if (gr.requires_grad(weight)) {
      MatMap<T>(gr.grad(weight).ptr(), cout, kk).noalias() += gm * ConstMatMap<T>(cp, kk, hw).transpose();
    }
    if (gr.requires_grad(bias)) {
      Tensor<T>& gb = gr.grad(bias);
      for (int co = 0; co < cout; ++co) gb[co] += gm.row(co).sum();
    }
    if (gr.requires_grad(x)) {
      ConstMatMap<T> wm(gr.value(weight).ptr(), cout, kk);
      if (k == 1) {
        MatMap<T>(gr.grad(x).ptr(), kk, hw).noalias() += wm.transpose() * gm;
      } else {
        RowMat<T> dcols = wm.transpose() * gm;
        detail::col2im_add(dcols.data(), k, pad, gr.grad(x));
      }
    }
  });
}

// Learned 2x upsampling (transposed convolution, kernel 2, stride 2).
// weight: (Cin, Cout, 2, 2); bias: (Cout).
template <typename T>
Var conv_transpose2x2(Graph<T>& g, Var x, Var weight, Var bias) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(weight);
  detail::require_rank3(xv.shape(), "conv_transpose2x2");
  const int cin = wv.dim(0), cout = wv.dim(1);
  if (cin != xv.channels()) throw ShapeError("conv_transpose2x2: channel mismatch");
  const int h = xv.height(), w = xv.width();
  const Eigen::Index hw = static_cast<Eigen::Index>(xv.plane());
  const Eigen::Index m = static_cast<Eigen::Index>(cout) * 4;

  RowMat<T> prod = ConstMatMap<T>(wv.ptr(), cin, m).transpose() * ConstMatMap<T>(xv.ptr(), cin, hw);
  Tensor<T> out({cout, 2 * h, 2 * w});
  const Tensor<T>& bv = g.value(bias);
  for (int co = 0; co < cout; ++co) {
    for (int d = 0; d < 4; ++d) {
      const int dy = d / 2, dx = d % 2;
      const T* row = prod.data() + (static_cast<Eigen::Index>(co) * 4 + d) * hw;
      for (int y = 0; y < h; ++y) {
        for (int xo = 0; xo < w; ++xo) out(co, 2 * y + dy, 2 * xo + dx) = row[y * w + xo] + bv[co];
      }
    }
  }

  return g.record(std::move(out), {x, weight, bias}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    RowMat<T> gm(m, hw);
    for (int co = 0; co < cout; ++co) {
      for (int d = 0; d < 4; ++d) {
        const int dy = d / 2, dx = d % 2;
        T* row = gm.data() + (static_cast<Eigen::Index>(co) * 4 + d) * hw;
        for (int y = 0; y < h; ++y) {
          for (int xo = 0; xo < w; ++xo) row[y * w + xo] = go(co, 2 * y + dy, 2 * xo + dx);
        }
      }
    }
    if (gr.requires_grad(weight)) {
      MatMap<T>(gr.grad(weight).ptr(), cin, m).noalias() +=
          ConstMatMap<T>(gr.value(x).ptr(), cin, hw) * gm.transpose();
    }
    if (gr.requires_grad(bias)) {
      Tensor<T>& gb = gr.grad(bias);
      for (int co = 0; co < cout; ++co) gb[co] += gm.middleRows(static_cast<Eigen::Index>(co) * 4, 4).sum();
    }
    if (gr.requires_grad(x)) {
      MatMap<T>(gr.grad(x).ptr(), cin, hw).noalias() += ConstMatMap<T>(gr.value(weight).ptr(), cin, m) * gm;
    }
  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& y = gr.value(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] > T(0)) gx[i] += go[i];
    }
  });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (T& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& y = gr.value(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += go[i] * y[i] * (T(1) - y[i]);
  });
}

// 2x2 max pooling, stride 2. Height and width must be even.
template <typename T>
Var max_pool2(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  detail::require_rank3(xv.shape(), "max_pool2");
  const int c = xv.channels(), h = xv.height(), w = xv.width();
  if (h % 2 || w % 2) {
    throw ShapeError("max_pool2: " + std::string(h % 2 ? "height " + std::to_string(h) : "width " + std::to_string(w)) +
                     " is odd");
  }
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out({c, oh, ow});
  auto arg = std::make_shared<std::vector<int>>(out.size());
  std::size_t o = 0;
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo, ++o) {
        int best = (ci * h + 2 * y) * w + 2 * xo;
        for (int d = 1; d < 4; ++d) {
          const int idx = (ci * h + 2 * y + d / 2) * w + 2 * xo + d % 2;
          if (xv[static_cast<std::size_t>(idx)] > xv[static_cast<std::size_t>(best)]) best = idx;
        }
        (*arg)[o] = best;
        out[o] = xv[static_cast<std::size_t>(best)];
      }
    }
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[static_cast<std::size_t>((*arg)[i])] += go[i];
  });
}

// Channel-wise concatenation of tensors sharing (H, W).
template <typename T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const Tensor<T>& first = g.value(parts.front());
  detail::require_rank3(first.shape(), "concat_channels");
  int c = 0;
  for (Var p : parts) {
    const Tensor<T>& v = g.value(p);
    detail::require_rank3(v.shape(), "concat_channels");
    if (v.height() != first.height() || v.width() != first.width()) {
      throw ShapeError("concat_channels: spatial mismatch " + shape_string(v.shape()) + " vs " +
                       shape_string(first.shape()));
    }
    c += v.channels();
  }
  Tensor<T> out({c, first.height(), first.width()});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& v = g.value(p);
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return g.record(std::move(out), parts, [parts](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t n = gr.value(p).size();
      if (gr.requires_grad(p)) {
        Tensor<T>& gp = gr.grad(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += go[off + i];
      }
      off += n;
    }
  });
}

// (C, H, W) -> (C, 1, 1) spatial mean.
template <typename T>
Var global_mean(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  detail::require_rank3(xv.shape(), "global_mean");
  const int c = xv.channels();
  const std::size_t hw = xv.plane();
  Tensor<T> out({c, 1, 1});
  for (int ci = 0; ci < c; ++ci) {
    T s = 0;
    for (T v : xv.channel(ci)) s += v;
    out[static_cast<std::size_t>(ci)] = s / static_cast<T>(hw);
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (int ci = 0; ci < c; ++ci) {
      const T share = go[static_cast<std::size_t>(ci)] / static_cast<T>(hw);
      for (T& v : gx.channel(ci)) v += share;
    }
  });
}

// Channels [begin, begin + count) of x.
template <typename T>
Var slice_channels(Graph<T>& g, Var x, int begin, int count) {
  const Tensor<T>& xv = g.value(x);
  detail::require_rank3(xv.shape(), "slice_channels");
  if (begin < 0 || count < 0 || begin + count > xv.channels()) throw ShapeError("slice_channels: range out of bounds");
  const std::size_t hw = xv.plane();
  Tensor<T> out({count, xv.height(), xv.width()});
  std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * hw), count * hw, out.data().begin());
  return g.record(std::move(out), {x}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[begin * hw + i] += go[i];
  });
}

// (D, 1, 1) -> (D, H, W) by repeating each entry over the plane.
template <typename T>
Var tile(Graph<T>& g, Var z, int h, int w) {
  const Tensor<T>& zv = g.value(z);
  const int d = static_cast<int>(zv.size());
  Tensor<T> out({d, h, w});
  for (int i = 0; i < d; ++i) {
    for (T& v : out.channel(i)) v = zv[static_cast<std::size_t>(i)];
  }
  return g.record(std::move(out), {z}, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gz = gr.grad(z);
    for (int i = 0; i < d; ++i) {
      T s = 0;
      for (T v : go.channel(i)) s += v;
      gz[static_cast<std::size_t>(i)] += s;
    }
  });
}

// Largest log-variance that is exponentiated as-is.
inline constexpr double kMaxLogVariance = 20.0;

// z = mean + exp(0.5 * min(log_variance, 20)) * eps, elementwise.
template <typename T>
Var reparameterize(Graph<T>& g, Var mean, Var log_variance, Tensor<T> eps) {
  const Tensor<T>& mv = g.value(mean);
  const Tensor<T>& lv = g.value(log_variance);
  if (!mv.same_shape(lv) || mv.size() != eps.size()) throw ShapeError("reparameterize: shape mismatch");
  Tensor<T> out = mv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += std::exp(T(0.5) * std::min(lv[i], T(kMaxLogVariance))) * eps[i];
  }
  return g.record(std::move(out), {mean, log_variance}, [=, eps = std::move(eps)](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.requires_grad(mean)) {
      Tensor<T>& gm = gr.grad(mean);
      for (std::size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
    }
    if (gr.requires_grad(log_variance)) {
      const Tensor<T>& l = gr.value(log_variance);
      Tensor<T>& gl = gr.grad(log_variance);
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (l[i] < T(kMaxLogVariance)) gl[i] += go[i] * T(0.5) * std::exp(T(0.5) * l[i]) * eps[i];
      }
    }
  });
}

// Sum of the given scalar nodes, each multiplied by its coefficient.
template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& terms, const std::vector<T>& coeffs) {
  if (terms.size() != coeffs.size()) throw ShapeError("weighted_sum: term/coefficient count mismatch");
  T total = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (g.value(terms[i]).size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += coeffs[i] * g.value(terms[i])[0];
  }
  return g.record(Tensor<T>({1}, total), terms, [terms, coeffs](Graph<T>& gr, int self) {
    const T go = gr.grad(Var{self})[0];
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (gr.requires_grad(terms[i])) gr.grad(terms[i])[0] += coeffs[i] * go;
    }
  });
}

}  // namespace ag
}  // namespace probadapt
