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

// Independent reference implementations used as test oracles. They follow the
// textbook definitions directly and share no code with the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>
#include <vector>

namespace probadapt::oracle {

// KL(q || p) for 1-D Gaussians by composite Simpson quadrature of q log(q/p).
inline double kl_quadrature_1d(double mq, double vq, double mp, double vp, int intervals = 20000) {
  const double sq = std::sqrt(vq);
  const double lo = mq - 14.0 * sq, hi = mq + 14.0 * sq;
  const double h = (hi - lo) / intervals;
  auto f = [&](double x) {
    const double lq = -0.5 * std::log(2 * M_PI * vq) - (x - mq) * (x - mq) / (2 * vq);
    const double lp = -0.5 * std::log(2 * M_PI * vp) - (x - mp) * (x - mp) / (2 * vp);
    return std::exp(lq) * (lq - lp);
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Per-pixel count of samples with any channel >= theta, divided by N.
// samples[j][k][i]: sample j, channel k, pixel i.
inline std::vector<double> consensus(const std::vector<std::vector<std::vector<double>>>& samples, double theta) {
  const std::size_t n = samples.size(), pixels = samples[0][0].size();
  std::vector<double> out(pixels, 0.0);
  for (std::size_t i = 0; i < pixels; ++i) {
    int hits = 0;
    for (std::size_t j = 0; j < n; ++j) {
      bool any = false;
      for (const auto& channel : samples[j]) any = any || channel[i] >= theta;
      hits += any;
    }
    out[i] = static_cast<double>(hits) / static_cast<double>(n);
  }
  return out;
}

// Seeded watershed as a seeded minimum spanning forest: Kruskal over the
// 4-neighbour edges of the mask, edge weight (max height, min height), never
// merging two components that both hold a seed. Ties broken by edge index in
// raster order, which coincides with any consistent order when heights are
// distinct. Returns per-pixel seed label, 0 where no seed is reachable.
inline std::vector<int> watershed_msf(const std::vector<double>& height, const std::vector<int>& seeds,
                                      const std::vector<int>& mask, int h, int w) {
  const int n = h * w;
  std::vector<int> parent(static_cast<std::size_t>(n)), label(seeds);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  std::vector<std::tuple<double, double, int, int>> edges;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int p = y * w + x;
      if (!mask[static_cast<std::size_t>(p)]) continue;
      for (int q : {x + 1 < w ? p + 1 : -1, y + 1 < h ? p + w : -1}) {
        if (q < 0 || !mask[static_cast<std::size_t>(q)]) continue;
        const double a = height[static_cast<std::size_t>(p)], b = height[static_cast<std::size_t>(q)];
        edges.emplace_back(std::max(a, b), std::min(a, b), p, q);
      }
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const auto& l, const auto& r) {
    return std::tie(std::get<0>(l), std::get<1>(l)) < std::tie(std::get<0>(r), std::get<1>(r));
  });
  for (const auto& [hi, lo, p, q] : edges) {
    const int a = find(p), b = find(q);
    if (a == b) continue;
    const int la = label[static_cast<std::size_t>(a)], lb = label[static_cast<std::size_t>(b)];
    if (la && lb) continue;
    parent[static_cast<std::size_t>(b)] = a;
    label[static_cast<std::size_t>(a)] = la ? la : lb;
  }
  std::vector<int> out(static_cast<std::size_t>(n), 0);
  for (int p = 0; p < n; ++p) {
    if (mask[static_cast<std::size_t>(p)]) out[static_cast<std::size_t>(p)] = label[static_cast<std::size_t>(find(p))];
  }
  return out;
}

// True when two labelings induce the same partition (0 must map to 0).
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == 0) != (b[i] == 0)) return false;
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

}  // namespace probadapt::oracle
