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
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "probadapt/augment.hpp"
#include "probadapt/config.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/pgm.hpp"
#include "probadapt/rng.hpp"
#include "probadapt/tensor.hpp"

namespace probadapt {

using Image = Tensor<float>;

// Appearance and layout of one synthetic domain: random elliptical blobs on a
// flat background, then blur, additive texture noise and optional inversion.
struct DomainSpec {
  std::string name = "source";
  Interval blob_count{2, 5};
  Interval blob_radius{3.0, 7.0};
  double foreground_intensity = 0.8;
  double background_intensity = 0.2;
  double texture_noise_sigma = 0.05;
  double blur_sigma = 0.0;
  bool invert = false;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 1;

  static DomainSpec default_source() { return {}; }
  static DomainSpec default_target() {
    DomainSpec s;
    s.name = "target";
    s.foreground_intensity = 0.6;
    s.background_intensity = 0.35;
    s.texture_noise_sigma = 0.12;
    s.blur_sigma = 1.0;
    s.seed = 2;
    return s;
  }

  void validate(int spatial_divisor = 1) const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!unit(foreground_intensity) || !unit(background_intensity)) {
      throw ConfigError("domain '" + name + "': intensities must lie in [0,1]");
    }
    if (texture_noise_sigma < 0.0 || blur_sigma < 0.0) throw ConfigError("domain '" + name + "': negative sigma");
    if (blob_count.lo < 0 || blob_count.hi < blob_count.lo) throw ConfigError("domain '" + name + "': bad blob_count");
    if (blob_radius.lo <= 0 || blob_radius.hi < blob_radius.lo) throw ConfigError("domain '" + name + "': bad blob_radius");
    if (height < 1 || width < 1 || height % spatial_divisor || width % spatial_divisor) {
      throw ConfigError("domain '" + name + "': image size " + std::to_string(height) + "x" + std::to_string(width) +
                        " must be a positive multiple of " + std::to_string(spatial_divisor));
    }
  }

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

struct Sample {
  Image image;                   // (1, H, W)
  std::optional<Image> mask;     // (1, H, W), values 0/1; absent for unlabeled data
  std::optional<Image> boundary; // (1, H, W), instance boundaries when known
  int domain_id = 0;
  int index = 0;
};

// Training target with `classes` channels: foreground, then boundaries.
inline Image target_of(const Sample& s, int classes) {
  if (!s.mask) throw Error("sample " + std::to_string(s.index) + " has no label");
  if (classes == 1) return *s.mask;
  if (classes == 2) {
    if (!s.boundary) throw Error("sample " + std::to_string(s.index) + " has no boundary label");
    Image t({2, s.image.height(), s.image.width()});
    std::copy(s.mask->data().begin(), s.mask->data().end(), t.channel(0).begin());
    std::copy(s.boundary->data().begin(), s.boundary->data().end(), t.channel(1).begin());
    return t;
  }
  throw ConfigError("targets exist for 1 or 2 classes, not " + std::to_string(classes));
}

struct Blob {
  double cy, cx, a, b, angle;
  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / a;
    const double v = (-dx * std::sin(angle) + dy * std::cos(angle)) / b;
    return u * u + v * v <= 1.0;
  }
};

// Blob layout of image `index` of a domain; a pure function of (spec, index).
inline std::vector<Blob> blob_layout(const DomainSpec& spec, int index) {
  SeededRng rng = SeededRng(spec.seed).derive("layout", static_cast<std::uint64_t>(index));
  const int count = rng.uniform_int(static_cast<int>(spec.blob_count.lo), static_cast<int>(spec.blob_count.hi));
  std::vector<Blob> blobs;
  for (int i = 0; i < count; ++i) {
    Blob b;
    b.cy = rng.uniform(0.0, spec.height);
    b.cx = rng.uniform(0.0, spec.width);
    b.a = spec.blob_radius.draw(rng);
    b.b = spec.blob_radius.draw(rng);
    b.angle = rng.uniform(0.0, 3.14159265358979323846);
    blobs.push_back(b);
  }
  return blobs;
}

// Instance ids (0 background, later blobs over earlier ones) at pixel centres.
inline std::vector<int> rasterize(const std::vector<Blob>& blobs, int height, int width) {
  std::vector<int> ids(static_cast<std::size_t>(height) * width, 0);
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (blobs[k].contains(y + 0.5, x + 0.5)) ids[static_cast<std::size_t>(y) * width + x] = static_cast<int>(k) + 1;
      }
    }
  }
  return ids;
}

// Pixels of an instance that touch (4-neighbourhood) a different id or the border.
inline Image boundary_of(const std::vector<int>& ids, int height, int width) {
  Image b({1, height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int id = ids[static_cast<std::size_t>(y) * width + x];
      if (id == 0) continue;
      bool edge = false;
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4 && !edge; ++k) {
        if (ny[k] < 0 || ny[k] >= height || nx[k] < 0 || nx[k] >= width) continue;
        edge = ids[static_cast<std::size_t>(ny[k]) * width + nx[k]] != id;
      }
      b(0, y, x) = edge ? 1.0f : 0.0f;
    }
  }
  return b;
}

inline Sample render_sample(const DomainSpec& spec, int index, int domain_id = 0) {
  const auto ids = rasterize(blob_layout(spec, index), spec.height, spec.width);
  Sample s;
  s.index = index;
  s.domain_id = domain_id;
  Image mask({1, spec.height, spec.width});
  Image img({1, spec.height, spec.width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    mask[i] = ids[i] ? 1.0f : 0.0f;
    img[i] = static_cast<float>(ids[i] ? spec.foreground_intensity : spec.background_intensity);
  }
  img = gaussian_blur(img, spec.blur_sigma);
  if (spec.texture_noise_sigma > 0.0) {
    SeededRng rng = SeededRng(spec.seed).derive("texture", static_cast<std::uint64_t>(index));
    for (float& v : img.data()) v = static_cast<float>(v + spec.texture_noise_sigma * rng.normal());
  }
  clamp_unit(img);
  if (spec.invert) {
    for (float& v : img.data()) v = 1.0f - v;
  }
  s.image = std::move(img);
  s.mask = std::move(mask);
  s.boundary = boundary_of(ids, spec.height, spec.width);
  return s;
}

inline std::vector<Sample> generate_domain(const DomainSpec& spec, int n, int domain_id = 0) {
  spec.validate();
  if (n < 0) throw ConfigError("generate_domain: negative count");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(render_sample(spec, i, domain_id));
  return out;
}

// Image plus optional label read from 8-bit P5 files; masks binarised at > 127.
inline Sample load_pgm_pair(const std::filesystem::path& image_path,
                            const std::optional<std::filesystem::path>& mask_path = std::nullopt) {
  const pgm::Image img = pgm::read(image_path);
  if (img.maxval != 255) throw IoError(image_path.string() + ": unsupported bit depth (maxval " + std::to_string(img.maxval) + ")");
  Sample s;
  s.image = pgm::to_unit<float>(img);
  if (mask_path) {
    const pgm::Image m = pgm::read(*mask_path);
    if (m.maxval != 255) throw IoError(mask_path->string() + ": unsupported bit depth (maxval " + std::to_string(m.maxval) + ")");
    if (m.width != img.width || m.height != img.height) {
      throw ShapeError("mask " + mask_path->string() + " is " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                       " but image is " + std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    Image mask({1, m.height, m.width});
    for (std::size_t i = 0; i < m.pixels.size(); ++i) mask[i] = m.pixels[i] > 127 ? 1.0f : 0.0f;
    s.mask = std::move(mask);
  }
  return s;
}

inline std::string file_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

// Writes <root>/<domain>/{images,labels,boundaries}/NNNN.pgm.
inline void write_domain(const std::filesystem::path& root, const std::string& domain,
                         const std::vector<Sample>& samples) {
  namespace fs = std::filesystem;
  const fs::path dir = root / domain;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  const bool labeled = std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.mask.has_value(); });
  if (labeled || samples.empty()) fs::create_directories(dir / "labels", ec);
  const bool bounded = std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.boundary.has_value(); });
  if (bounded) fs::create_directories(dir / "boundaries", ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  for (const Sample& s : samples) {
    const std::string f = file_stem(s.index) + ".pgm";
    pgm::write(dir / "images" / f, pgm::from_unit(s.image));
    if (s.mask) pgm::write(dir / "labels" / f, pgm::from_unit(*s.mask));
    if (s.boundary) pgm::write(dir / "boundaries" / f, pgm::from_unit(*s.boundary));
  }
}

// Loads every image of <root>/<domain>, with labels when the labels directory
// exists (and require_labels demands it).
inline std::vector<Sample> load_domain(const std::filesystem::path& root, const std::string& domain,
                                       bool require_labels = false, int domain_id = 0) {
  namespace fs = std::filesystem;
  const fs::path dir = root / domain;
  if (!fs::is_directory(dir / "images")) throw IoError(dir.string() + ": no images directory");
  const bool labeled = fs::is_directory(dir / "labels");
  if (require_labels && !labeled) throw IoError(dir.string() + ": labels directory is missing");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir / "images")) {
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Sample> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const fs::path name = files[i].filename();
    std::optional<fs::path> mask;
    if (labeled) {
      mask = dir / "labels" / name;
      if (!fs::exists(*mask)) throw IoError(mask->string() + ": label file is missing");
    }
    Sample s = load_pgm_pair(files[i], mask);
    const fs::path bpath = dir / "boundaries" / name;
    if (fs::exists(bpath)) s.boundary = load_pgm_pair(bpath, bpath).mask;
    s.domain_id = domain_id;
    try {
      s.index = std::stoi(name.stem().string());
    } catch (const std::exception&) {
      s.index = static_cast<int>(i);
    }
    out.push_back(std::move(s));
  }
  return out;
}

// Deterministic 80/10/10 split by position.
struct Splits {
  std::vector<Sample> train, val, test;
};

inline Splits split_by_index(std::vector<Sample> samples) {
  const std::size_t n = samples.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  Splits s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.push_back(std::move(samples[i]));
  }
  return s;
}

struct Batch {
  std::vector<Image> images;
  std::vector<Image> targets;  // empty for unlabeled batches
  std::vector<int> indices;    // source sample of each crop
  std::vector<int> offsets_y, offsets_x;
};

// Infinite stream of uniformly random crops; the sequence depends only on the
// rng it was constructed with.
class PatchSampler {
 public:
  PatchSampler(const std::vector<Sample>& samples, int patch_h, int patch_w, int batch_size, SeededRng rng,
               int classes = 1, bool with_targets = true)
      : samples_(&samples), ph_(patch_h), pw_(patch_w), batch_(batch_size), rng_(rng), classes_(classes),
        targets_(with_targets) {
    if (samples.empty()) throw ConfigError("patch sampler: no samples");
    if (batch_size < 1) throw ConfigError("patch sampler: batch size must be positive");
    for (const Sample& s : samples) {
      if (patch_h < 1 || patch_w < 1 || patch_h > s.image.height() || patch_w > s.image.width()) {
        throw ShapeError("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) + " does not fit image " +
                         std::to_string(s.image.height()) + "x" + std::to_string(s.image.width()));
      }
      if (with_targets && !s.mask) throw ConfigError("patch sampler: labeled batches need labeled samples");
    }
  }

  Batch next() {
    Batch b;
    for (int i = 0; i < batch_; ++i) {
      const int idx = rng_.uniform_int(0, static_cast<int>(samples_->size()) - 1);
      const Sample& s = (*samples_)[static_cast<std::size_t>(idx)];
      const int oy = rng_.uniform_int(0, s.image.height() - ph_);
      const int ox = rng_.uniform_int(0, s.image.width() - pw_);
      b.images.push_back(crop(s.image, oy, ox));
      if (targets_) b.targets.push_back(crop(target_of(s, classes_), oy, ox));
      b.indices.push_back(idx);
      b.offsets_y.push_back(oy);
      b.offsets_x.push_back(ox);
    }
    return b;
  }

  Image crop(const Image& img, int oy, int ox) const {
    if (oy == 0 && ox == 0 && img.height() == ph_ && img.width() == pw_) return img;
    Image out({img.channels(), ph_, pw_});
    for (int c = 0; c < img.channels(); ++c) {
      for (int y = 0; y < ph_; ++y) {
        for (int x = 0; x < pw_; ++x) out(c, y, x) = img(c, oy + y, ox + x);
      }
    }
    return out;
  }

 private:
  const std::vector<Sample>* samples_;
  int ph_, pw_, batch_;
  SeededRng rng_;
  int classes_;
  bool targets_;
};

// Domain spec <-> config section.
inline void write_domain_spec(ConfigDoc& doc, const std::string& section, const DomainSpec& s) {
  doc.set_string(section, "name", s.name);
  doc.set_array(section, "blob_count", {s.blob_count.lo, s.blob_count.hi});
  doc.set_array(section, "blob_radius", {s.blob_radius.lo, s.blob_radius.hi});
  doc.set_double(section, "foreground", s.foreground_intensity);
  doc.set_double(section, "background", s.background_intensity);
  doc.set_double(section, "texture_noise_sigma", s.texture_noise_sigma);
  doc.set_double(section, "blur_sigma", s.blur_sigma);
  doc.set_bool(section, "invert", s.invert);
  doc.set_array(section, "image_size", {static_cast<double>(s.height), static_cast<double>(s.width)});
  doc.set_uint(section, "seed", s.seed);
}

inline Interval read_interval(const ConfigDoc& doc, const std::string& section, const std::string& key, Interval fallback) {
  const auto v = doc.get_array(section, key, {fallback.lo, fallback.hi});
  if (v.size() != 2) throw ConfigError(section + "." + key + ": expected [lo, hi]");
  return {v[0], v[1]};
}

inline DomainSpec read_domain_spec(const ConfigDoc& doc, const std::string& section, DomainSpec s) {
  s.name = doc.get_string(section, "name", s.name);
  s.blob_count = read_interval(doc, section, "blob_count", s.blob_count);
  s.blob_radius = read_interval(doc, section, "blob_radius", s.blob_radius);
  s.foreground_intensity = doc.get_double(section, "foreground", s.foreground_intensity);
  s.background_intensity = doc.get_double(section, "background", s.background_intensity);
  s.texture_noise_sigma = doc.get_double(section, "texture_noise_sigma", s.texture_noise_sigma);
  s.blur_sigma = doc.get_double(section, "blur_sigma", s.blur_sigma);
  s.invert = doc.get_bool(section, "invert", s.invert);
  const auto size = doc.get_array(section, "image_size", {static_cast<double>(s.height), static_cast<double>(s.width)});
  if (size.size() != 2) throw ConfigError(section + ".image_size: expected [height, width]");
  s.height = static_cast<int>(size[0]);
  s.width = static_cast<int>(size[1]);
  s.seed = doc.get_uint(section, "seed", s.seed);
  return s;
}

}  // namespace probadapt
