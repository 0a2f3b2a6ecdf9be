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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "probadapt/data.hpp"

namespace probadapt {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("probadapt_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                         "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

DomainSpec clean_spec() {
  DomainSpec s;
  s.foreground_intensity = 1.0;
  s.background_intensity = 0.0;
  s.texture_noise_sigma = 0.0;
  s.blur_sigma = 0.0;
  return s;
}

double foreground_fraction(const Sample& s) {
  double f = 0.0;
  for (float v : s.mask->data()) f += v;
  return f / static_cast<double>(s.mask->size());
}

TEST(Generate, CleanImageEqualsMask) {
  for (const Sample& s : generate_domain(clean_spec(), 20)) EXPECT_EQ(s.image.to_vector(), s.mask->to_vector());
}

TEST(Generate, InvertFlipsImageOnly) {
  DomainSpec inv = DomainSpec::default_target();
  inv.invert = true;
  const auto plain = generate_domain(DomainSpec::default_target(), 10);
  const auto flipped = generate_domain(inv, 10);
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_EQ(plain[i].mask->to_vector(), flipped[i].mask->to_vector());
    for (std::size_t p = 0; p < plain[i].image.size(); ++p) EXPECT_FLOAT_EQ(flipped[i].image[p], 1.0f - plain[i].image[p]);
  }
}

TEST(Generate, Deterministic) {
  const auto a = generate_domain(DomainSpec::default_source(), 8);
  const auto b = generate_domain(DomainSpec::default_source(), 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image.to_vector(), b[i].image.to_vector());
    EXPECT_EQ(a[i].mask->to_vector(), b[i].mask->to_vector());
  }
}

TEST(Generate, SeedChangesLayoutButNotStatistics) {
  DomainSpec other = DomainSpec::default_source();
  other.seed = 77;
  const auto a = generate_domain(DomainSpec::default_source(), 100);
  const auto b = generate_domain(other, 100);
  int differing = 0;
  double ma = 0, mb = 0, va = 0, vb = 0;
  for (int i = 0; i < 100; ++i) {
    differing += a[i].mask->to_vector() != b[i].mask->to_vector();
    ma += foreground_fraction(a[i]);
    mb += foreground_fraction(b[i]);
  }
  ma /= 100, mb /= 100;
  for (int i = 0; i < 100; ++i) {
    va += std::pow(foreground_fraction(a[i]) - ma, 2);
    vb += std::pow(foreground_fraction(b[i]) - mb, 2);
  }
  va /= 99, vb /= 99;
  EXPECT_GT(differing, 95);
  EXPECT_LT(std::abs(ma - mb), 2.0 * std::sqrt(va / 100 + vb / 100));
}

TEST(Generate, MaskMatchesAnalyticSupport) {
  const DomainSpec spec = DomainSpec::default_source();
  for (int index = 0; index < 10; ++index) {
    const auto blobs = blob_layout(spec, index);
    const Sample s = render_sample(spec, index);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        bool inside = false;
        for (const Blob& b : blobs) inside = inside || b.contains(y + 0.5, x + 0.5);
        ASSERT_EQ((*s.mask)(0, y, x), inside ? 1.0f : 0.0f);
      }
    }
  }
}

TEST(Generate, BoundaryLiesInsideMask) {
  for (const Sample& s : generate_domain(DomainSpec::default_source(), 10)) {
    for (std::size_t i = 0; i < s.mask->size(); ++i) {
      if ((*s.boundary)[i] > 0) EXPECT_EQ((*s.mask)[i], 1.0f);
    }
  }
}

TEST(Generate, ValidationErrors) {
  DomainSpec s;
  s.foreground_intensity = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = DomainSpec{};
  s.height = 30;
  EXPECT_THROW(s.validate(8), ConfigError);
  EXPECT_NO_THROW(s.validate(2));
  EXPECT_THROW(generate_domain(DomainSpec{}, -1), ConfigError);
}

TEST(Targets, TwoClassStacksBoundary) {
  const Sample s = render_sample(DomainSpec::default_source(), 3);
  const Image t = target_of(s, 2);
  EXPECT_EQ(t.channels(), 2);
  for (std::size_t i = 0; i < s.mask->size(); ++i) EXPECT_EQ(t.channel(1)[i], (*s.boundary)[i]);
  Sample unlabeled = s;
  unlabeled.mask.reset();
  EXPECT_THROW(target_of(unlabeled, 1), Error);
  EXPECT_THROW(target_of(s, 3), ConfigError);
}

TEST(Pgm, RoundTripIsBitExact) {
  TempDir dir;
  const auto samples = generate_domain(DomainSpec::default_target(), 6);
  write_domain(dir.path(), "target", samples);
  const auto back = load_domain(dir.path(), "target", true);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto q = pgm::to_unit<float>(pgm::from_unit(samples[i].image));
    EXPECT_EQ(back[i].image.to_vector(), q.to_vector());
    EXPECT_EQ(back[i].mask->to_vector(), samples[i].mask->to_vector());
    EXPECT_EQ(back[i].boundary->to_vector(), samples[i].boundary->to_vector());
    EXPECT_EQ(back[i].index, samples[i].index);
  }
  // Quantised images are a fixed point of a second round trip.
  write_domain(dir.path(), "again", back);
  const auto twice = load_domain(dir.path(), "again", true);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_EQ(twice[i].image.to_vector(), back[i].image.to_vector());
}

TEST(Pgm, AllWhiteMaskIsAllOnes) {
  TempDir dir;
  pgm::write(dir.path() / "img.pgm", pgm::Image{4, 3, 255, std::vector<std::uint16_t>(12, 10)});
  pgm::write(dir.path() / "mask.pgm", pgm::Image{4, 3, 255, std::vector<std::uint16_t>(12, 255)});
  const Sample s = load_pgm_pair(dir.path() / "img.pgm", dir.path() / "mask.pgm");
  for (float v : s.mask->to_vector()) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(s.image.height(), 3);
  EXPECT_EQ(s.image.width(), 4);
}

TEST(Pgm, ShapeMismatchRejected) {
  TempDir dir;
  pgm::write(dir.path() / "img.pgm", pgm::Image{4, 3, 255, std::vector<std::uint16_t>(12, 10)});
  pgm::write(dir.path() / "mask.pgm", pgm::Image{3, 4, 255, std::vector<std::uint16_t>(12, 255)});
  EXPECT_THROW(load_pgm_pair(dir.path() / "img.pgm", dir.path() / "mask.pgm"), ShapeError);
}

TEST(Pgm, SixteenBitRejectedByLoaderButDecoded) {
  TempDir dir;
  const pgm::Image wide{2, 2, 1000, {0, 1000, 500, 3}};
  pgm::write(dir.path() / "wide.pgm", wide);
  EXPECT_THROW(load_pgm_pair(dir.path() / "wide.pgm"), IoError);
  const pgm::Image back = pgm::read(dir.path() / "wide.pgm");
  EXPECT_EQ(back.pixels, wide.pixels);
  EXPECT_EQ(back.maxval, 1000);
}

TEST(Pgm, MalformedHeadersRejected) {
  EXPECT_THROW(pgm::decode("P2\n1 1\n255\n0"), IoError);
  EXPECT_THROW(pgm::decode("P5\n# comment only"), IoError);
  EXPECT_THROW(pgm::decode("P5\n0 4\n255\n"), IoError);
  EXPECT_THROW(pgm::decode("P5\n1 1\n70000\n\0\0"), IoError);
  EXPECT_THROW(pgm::decode(std::string("P5\n1 1\n100\n\xff", 12)), IoError);
  EXPECT_EQ(pgm::decode("P5\n# c\n2 1 # x\n255\nab").pixels, (std::vector<std::uint16_t>{'a', 'b'}));
}

TEST(Pgm, TruncationsAndCorruptionNeverCrash) {
  const std::string full = pgm::encode(pgm::from_unit(render_sample(DomainSpec::default_source(), 0).image));
  for (std::size_t n = 0; n < full.size(); ++n) EXPECT_THROW(pgm::decode(full.substr(0, n)), IoError) << n;
  SeededRng rng(9);
  for (int trial = 0; trial < 2000; ++trial) {
    std::string bad = full;
    const int flips = rng.uniform_int(1, 4);
    for (int f = 0; f < flips; ++f) {
      bad[static_cast<std::size_t>(rng.uniform_int(0, 20))] = static_cast<char>(rng.uniform_int(0, 255));
    }
    try {
      const pgm::Image img = pgm::decode(bad);
      EXPECT_EQ(img.pixels.size(), static_cast<std::size_t>(img.width) * img.height);
    } catch (const IoError&) {
    }
  }
}

TEST(Loader, MissingLabelsReported) {
  TempDir dir;
  auto samples = generate_domain(DomainSpec::default_source(), 3);
  for (Sample& s : samples) s.mask.reset(), s.boundary.reset();
  write_domain(dir.path(), "u", samples);
  fs::remove_all(dir.path() / "u" / "labels");
  EXPECT_THROW(load_domain(dir.path(), "u", true), IoError);
  const auto loaded = load_domain(dir.path(), "u", false);
  ASSERT_EQ(loaded.size(), 3u);
  EXPECT_FALSE(loaded[0].mask.has_value());
  EXPECT_THROW(load_domain(dir.path(), "missing"), IoError);
}

TEST(Splits, EightyTenTen) {
  const auto s = split_by_index(generate_domain(clean_spec(), 640));
  EXPECT_EQ(s.train.size(), 512u);
  EXPECT_EQ(s.val.size(), 64u);
  EXPECT_EQ(s.test.size(), 64u);
  EXPECT_EQ(s.val.front().index, 512);
  EXPECT_EQ(s.test.front().index, 576);
}

TEST(Sampler, FullImagePatchReturnsSourceImages) {
  const auto samples = generate_domain(DomainSpec::default_source(), 5);
  PatchSampler sampler(samples, 32, 32, 4, SeededRng(1));
  for (int i = 0; i < 5; ++i) {
    const Batch b = sampler.next();
    for (std::size_t j = 0; j < b.images.size(); ++j) {
      EXPECT_EQ(b.images[j].to_vector(), samples[static_cast<std::size_t>(b.indices[j])].image.to_vector());
      EXPECT_EQ(b.targets[j].to_vector(), samples[static_cast<std::size_t>(b.indices[j])].mask->to_vector());
    }
  }
}

std::uint64_t batch_hash(const Batch& b) {
  std::string bytes;
  for (const Image& im : b.images) bytes.append(reinterpret_cast<const char*>(im.data().data()), im.size() * sizeof(float));
  return fnv1a(bytes);
}

TEST(Sampler, FixedSeedGivesIdenticalBatches) {
  const auto samples = generate_domain(DomainSpec::default_source(), 10);
  PatchSampler a(samples, 16, 16, 2, SeededRng(5)), b(samples, 16, 16, 2, SeededRng(5)), c(samples, 16, 16, 2, SeededRng(6));
  std::set<std::uint64_t> seen;
  int same_as_other_seed = 0;
  for (int i = 0; i < 10; ++i) {
    const auto ha = batch_hash(a.next());
    EXPECT_EQ(ha, batch_hash(b.next()));
    same_as_other_seed += ha == batch_hash(c.next());
    seen.insert(ha);
  }
  EXPECT_GT(seen.size(), 5u);
  EXPECT_LT(same_as_other_seed, 10);
}

TEST(Sampler, OffsetsAreUniform) {
  // 8 admissible offsets per axis; chi-square with 7 dof, p = 0.01 critical value.
  const double critical = 18.475;
  std::vector<Sample> one{render_sample(DomainSpec::default_source(), 0)};
  for (const auto& [ph, pw] : {std::pair{25, 32}, std::pair{32, 25}}) {
    PatchSampler sampler(one, ph, pw, 1, SeededRng(123));
    std::vector<int> counts(8, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      const Batch b = sampler.next();
      ++counts[static_cast<std::size_t>(ph == 25 ? b.offsets_y[0] : b.offsets_x[0])];
    }
    double chi2 = 0.0;
    for (int c : counts) chi2 += std::pow(c - draws / 8.0, 2) / (draws / 8.0);
    EXPECT_LT(chi2, critical);
  }
}

TEST(Sampler, Errors) {
  const auto samples = generate_domain(DomainSpec::default_source(), 2);
  EXPECT_THROW(PatchSampler(samples, 40, 8, 1, SeededRng(1)), ShapeError);
  EXPECT_THROW(PatchSampler({}, 8, 8, 1, SeededRng(1)), ConfigError);
  EXPECT_THROW(PatchSampler(samples, 8, 8, 0, SeededRng(1)), ConfigError);
  auto unlabeled = samples;
  for (Sample& s : unlabeled) s.mask.reset();
  EXPECT_THROW(PatchSampler(unlabeled, 8, 8, 1, SeededRng(1)), ConfigError);
  EXPECT_NO_THROW(PatchSampler(unlabeled, 8, 8, 1, SeededRng(1), 1, false));
}

TEST(DomainConfig, RoundTrip) {
  DomainSpec s = DomainSpec::default_target();
  s.invert = true;
  s.blob_count = {1, 3};
  s.seed = 1234567890123ULL;
  ConfigDoc doc;
  write_domain_spec(doc, "target", s);
  const ConfigDoc back = ConfigDoc::parse(doc.dump());
  EXPECT_EQ(read_domain_spec(back, "target", DomainSpec{}), s);
}

}  // namespace
}  // namespace probadapt
