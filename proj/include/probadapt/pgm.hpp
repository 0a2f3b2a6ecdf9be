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
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "probadapt/errors.hpp"
#include "probadapt/tensor.hpp"

// Binary graymap (P5) reading and writing.

namespace probadapt::pgm {

struct Image {
  int width = 0;
  int height = 0;
  int maxval = 255;
  std::vector<std::uint16_t> pixels;  // row-major
};

namespace detail {

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Reads one header integer, skipping whitespace and '#' comments.
inline long read_header_int(const std::string& buf, std::size_t& pos, const std::string& path) {
  for (;;) {
    while (pos < buf.size() && is_space(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= buf.size() || buf[pos] < '0' || buf[pos] > '9') throw IoError(path + ": malformed PGM header");
  long v = 0;
  while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') {
    v = v * 10 + (buf[pos] - '0');
    if (v > 1'000'000) throw IoError(path + ": PGM header value out of range");
    ++pos;
  }
  return v;
}

}  // namespace detail

// Parses a P5 file held in memory. `path` is only used in diagnostics.
inline Image decode(const std::string& buf, const std::string& path = "<memory>") {
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') throw IoError(path + ": not a binary PGM (P5) file");
  std::size_t pos = 2;
  Image img;
  img.width = static_cast<int>(detail::read_header_int(buf, pos, path));
  img.height = static_cast<int>(detail::read_header_int(buf, pos, path));
  img.maxval = static_cast<int>(detail::read_header_int(buf, pos, path));
  if (img.width < 1 || img.height < 1) throw IoError(path + ": PGM has empty extent");
  if (img.maxval < 1 || img.maxval > 65535) throw IoError(path + ": PGM maxval out of range");
  if (pos >= buf.size() || !detail::is_space(static_cast<unsigned char>(buf[pos]))) {
    throw IoError(path + ": malformed PGM header");
  }
  ++pos;
  const std::size_t bytes_per = img.maxval > 255 ? 2 : 1;
  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (buf.size() - pos < n * bytes_per) throw IoError(path + ": truncated PGM pixel data");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (bytes_per == 1) {
      img.pixels[i] = static_cast<unsigned char>(buf[pos + i]);
    } else {
      img.pixels[i] = static_cast<std::uint16_t>((static_cast<unsigned char>(buf[pos + 2 * i]) << 8) |
                                                 static_cast<unsigned char>(buf[pos + 2 * i + 1]));
    }
    if (img.pixels[i] > img.maxval) throw IoError(path + ": PGM pixel exceeds maxval");
  }
  return img;
}

inline std::string encode(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" +
                    std::to_string(img.maxval) + "\n";
  const bool wide = img.maxval > 255;
  for (std::uint16_t v : img.pixels) {
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

inline Image read(const std::filesystem::path& path) { return decode(read_file(path), path.string()); }

inline void write(const std::filesystem::path& path, const Image& img) { write_file(path, encode(img)); }

// 8-bit quantisation of a [0,1] channel: round(255 v).
template <typename T>
Image from_unit(const Tensor<T>& t, int channel = 0) {
  Image img{t.width(), t.height(), 255, {}};
  img.pixels.reserve(t.plane());
  for (T v : t.channel(channel)) {
    const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
    img.pixels.push_back(static_cast<std::uint16_t>(std::lround(c * 255.0)));
  }
  return img;
}

template <typename T>
Tensor<T> to_unit(const Image& img) {
  Tensor<T> t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = static_cast<T>(img.pixels[i]) / static_cast<T>(img.maxval);
  return t;
}

}  // namespace probadapt::pgm
