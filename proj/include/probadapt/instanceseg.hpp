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

#include <cstdint>
#include <filesystem>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/pgm.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

// 0 is background, 1..count are instances.
struct InstanceLabeling {
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  int count = 0;

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

template <typename T>
void require_plane(const Tensor<T>& t, const char* what) {
  if (t.rank() != 3 || t.channels() != 1) throw ShapeError(std::string(what) + ": expected (1,H,W), got " + shape_string(t.shape()));
}

inline int neighbours(int y, int x, int h, int w, int connectivity, int (&ny)[8], int (&nx)[8]) {
  static const int dy4[4] = {-1, 0, 0, 1}, dx4[4] = {0, -1, 1, 0};
  static const int dy8[8] = {-1, -1, -1, 0, 0, 1, 1, 1}, dx8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
  const int* dy = connectivity == 8 ? dy8 : dy4;
  const int* dx = connectivity == 8 ? dx8 : dx4;
  int n = 0;
  for (int k = 0; k < connectivity; ++k) {
    const int yy = y + dy[k], xx = x + dx[k];
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
    ny[n] = yy;
    nx[n] = xx;
    ++n;
  }
  return n;
}

}  // namespace detail

// Maximal connected foreground regions (mask > 0.5), numbered in raster order
// of their first pixel.
template <typename T>
InstanceLabeling connected_components(const Tensor<T>& mask, int connectivity = 4) {
  detail::require_plane(mask, "connected_components");
  if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
  const int h = mask.height(), w = mask.width();
  InstanceLabeling out{h, w, std::vector<int>(mask.size(), 0), 0};
  std::vector<int> stack;
  int ny[8], nx[8];
  for (int start = 0; start < h * w; ++start) {
    if (!(mask[static_cast<std::size_t>(start)] > T(0.5)) || out.labels[static_cast<std::size_t>(start)]) continue;
    const int id = ++out.count;
    out.labels[static_cast<std::size_t>(start)] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int n = detail::neighbours(p / w, p % w, h, w, connectivity, ny, nx);
      for (int k = 0; k < n; ++k) {
        const std::size_t q = static_cast<std::size_t>(ny[k]) * w + nx[k];
        if (mask[q] > T(0.5) && !out.labels[q]) {
          out.labels[q] = id;
          stack.push_back(static_cast<int>(q));
        }
      }
    }
  }
  return out;
}

// Seeded watershed by priority flood over the 4-neighbourhood. Pixels join the
// region across the cheapest edge into it, edges ordered by the higher of their
// two heights, then the lower, then insertion order. Each mask pixel thereby
// receives the label of the seed it reaches by a lowest-maximum path. Seed
// pixels keep their labels, pixels outside the mask stay 0 and mask regions
// that contain no seed stay 0.
template <typename T>
InstanceLabeling watershed(const Tensor<T>& height_map, const InstanceLabeling& seeds, const Tensor<T>& mask) {
  detail::require_plane(height_map, "watershed");
  detail::require_plane(mask, "watershed");
  const int h = height_map.height(), w = height_map.width();
  if (mask.height() != h || mask.width() != w || seeds.height != h || seeds.width != w) {
    throw ShapeError("watershed: height map, seeds and mask must share their shape");
  }
  InstanceLabeling out{h, w, std::vector<int>(height_map.size(), 0), seeds.count};
  using Entry = std::tuple<T, T, std::uint64_t, int, int>;  // high, low, order, pixel, label
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> queue;
  std::uint64_t order = 0;
  int ny[8], nx[8];
  auto inside = [&](std::size_t q) { return mask[q] > T(0.5); };
  auto push_neighbours = [&](int p, int label) {
    const int n = detail::neighbours(p / w, p % w, h, w, 4, ny, nx);
    for (int k = 0; k < n; ++k) {
      const std::size_t q = static_cast<std::size_t>(ny[k]) * w + nx[k];
      if (!inside(q) || out.labels[q]) continue;
      const T a = height_map[static_cast<std::size_t>(p)], b = height_map[q];
      queue.emplace(std::max(a, b), std::min(a, b), order++, static_cast<int>(q), label);
    }
  };
  bool any = false;
  for (std::size_t p = 0; p < seeds.labels.size(); ++p) {
    if (seeds.labels[p] <= 0) continue;
    if (!inside(p)) throw ShapeError("watershed: seed pixel outside the mask");
    out.labels[p] = seeds.labels[p];
    any = true;
  }
  if (!any) {
    out.count = 0;
    return out;
  }
  for (std::size_t p = 0; p < seeds.labels.size(); ++p) {
    if (seeds.labels[p] > 0) push_neighbours(static_cast<int>(p), seeds.labels[p]);
  }
  while (!queue.empty()) {
    const auto [high, low, ord, p, label] = queue.top();
    queue.pop();
    if (out.labels[static_cast<std::size_t>(p)]) continue;
    out.labels[static_cast<std::size_t>(p)] = label;
    push_neighbours(p, label);
  }
  return out;
}

// Renumbers the labels present to 1..count in raster order of first appearance.
inline InstanceLabeling relabel_sequential(const InstanceLabeling& in) {
  InstanceLabeling out{in.height, in.width, std::vector<int>(in.labels.size(), 0), 0};
  std::vector<int> map;
  for (std::size_t i = 0; i < in.labels.size(); ++i) {
    const int l = in.labels[i];
    if (l <= 0) continue;
    if (static_cast<std::size_t>(l) >= map.size()) map.resize(static_cast<std::size_t>(l) + 1, 0);
    if (!map[static_cast<std::size_t>(l)]) map[static_cast<std::size_t>(l)] = ++out.count;
    out.labels[i] = map[static_cast<std::size_t>(l)];
  }
  return out;
}

// Instances from a (foreground, boundary) prediction: mask = fg >= fg_threshold,
// seeds = components of (fg - boundary >= seed_threshold) inside the mask, then
// a watershed on the boundary channel. Mask regions without a seed become
// instances of their own.
template <typename T>
InstanceLabeling instances_from_prediction(const Tensor<T>& seg, double fg_threshold = 0.5, double seed_threshold = 0.5) {
  if (seg.rank() != 3 || seg.channels() != 2) {
    throw ShapeError("instances_from_prediction: expected (2,H,W) foreground/boundary prediction, got " +
                     shape_string(seg.shape()));
  }
  const int h = seg.height(), w = seg.width();
  Tensor<T> mask({1, h, w}), seed_mask({1, h, w}), boundary({1, h, w});
  for (std::size_t i = 0; i < seg.plane(); ++i) {
    const T fg = seg[i], bd = seg[seg.plane() + i];
    mask[i] = fg >= T(fg_threshold) ? T(1) : T(0);
    seed_mask[i] = (mask[i] > T(0.5) && fg - bd >= T(seed_threshold)) ? T(1) : T(0);
    boundary[i] = bd;
  }
  InstanceLabeling lab = watershed(boundary, connected_components(seed_mask, 4), mask);
  Tensor<T> rest({1, h, w});
  bool leftover = false;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    rest[i] = (mask[i] > T(0.5) && lab.labels[i] == 0) ? T(1) : T(0);
    leftover = leftover || rest[i] > T(0.5);
  }
  if (leftover) {
    const InstanceLabeling extra = connected_components(rest, 4);
    for (std::size_t i = 0; i < rest.size(); ++i) {
      if (extra.labels[i]) lab.labels[i] = lab.count + extra.labels[i];
    }
    lab.count += extra.count;
  }
  return relabel_sequential(lab);
}

// 16-bit P5 export (maxval 65535).
inline void write_instances(const std::filesystem::path& path, const InstanceLabeling& lab) {
  if (lab.count > 65535) throw IoError(path.string() + ": too many instances for a 16-bit PGM");
  pgm::Image img{lab.width, lab.height, 65535, {}};
  img.pixels.reserve(lab.labels.size());
  for (int l : lab.labels) img.pixels.push_back(static_cast<std::uint16_t>(l));
  pgm::write(path, img);
}

}  // namespace probadapt
