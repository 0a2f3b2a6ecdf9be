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
#include <map>

#include "probadapt/run.hpp"

namespace probadapt {
namespace {

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("probadapt_run_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Small two-domain dataset with the default appearance shift.
  fs::path make_data(int count = 40) {
    GenerateConfig g = GenerateConfig::two_domain();
    g.out = (dir_ / "data").string();
    for (auto& d : g.domains) d.count = count;
    generate_dataset(g);
    return g.out;
  }

  RunConfig tiny(const std::string& method, const fs::path& data) const {
    RunConfig rc;
    TrainConfig& c = rc.train;
    c.method = parse_method(method);
    c.model.ladder = {4, 8};
    c.model.latent_dim = 2;
    c.model.comb_layers = 2;
    c.patch_h = c.patch_w = 16;
    c.iterations = 4;
    c.val_every = 2;
    c.n_samples = 2;
    c.val_samples = 2;
    c.seed = 3;
    rc.data_root = data.string();
    if (c.method.strategy != Strategy::Separate) rc.source_domain = "source";
    if (c.method.strategy != Strategy::Source) rc.target_domain = "target";
    return rc;
  }

  RunOptions quiet() const {
    RunOptions o;
    o.eval_samples = 2;
    return o;
  }

  fs::path dir_;
};

std::map<std::string, std::uint64_t> tree_hashes(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = fnv1a(pgm::read_file(e.path()));
  }
  return out;
}

TEST(RunConfigText, EveryMethodRoundTrips) {
  std::vector<std::string> names = grid_method_names();
  names.push_back("source");
  for (const auto& name : names) {
    RunConfig rc;
    rc.train.method = parse_method(name);
    rc.train.theta = 0.7;
    rc.train.weak.apply_probability = 0.1;
    rc.train.model.latent_dim = 4;
    rc.source_domain = "s";
    rc.target_domain = "t";
    rc.pretrained = "x.ckpt";
    const std::string text = to_config(rc).dump();
    const RunConfig back = run_config_from(ConfigDoc::parse(text));
    EXPECT_EQ(method_name(back.train.method), name);
    EXPECT_EQ(to_config(back).dump(), text);
    EXPECT_EQ(config_hash(back), config_hash(rc));
  }
}

TEST(RunConfigText, UnknownKeysAndSectionsRejected) {
  EXPECT_THROW(run_config_from(ConfigDoc::parse("[run]\nmethod = \"source\"\n[trian]\nx = 1\n")), ConfigError);
  try {
    run_config_from(ConfigDoc::parse("[train]\nlearning_rat = 0.1\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rat"), std::string::npos);
  }
  EXPECT_THROW(run_config_from(ConfigDoc::parse("[run]\nmethod = \"mt_q\"\n")), ConfigError);
  EXPECT_THROW(run_config_from(ConfigDoc::parse("[train]\npatch = [30, 32]\n")), ConfigError);
  EXPECT_NO_THROW(run_config_from(ConfigDoc::parse("[manifest]\nanything = 1\n")));
}

TEST_F(Workspace, StrategyDataRequirements) {
  const fs::path data = dir_ / "data";
  RunConfig sep = tiny("mt_s_m", data);
  EXPECT_THROW(validate_run(sep), ConfigError);  // no pretrained
  sep.pretrained = (dir_ / "missing.ckpt").string();
  EXPECT_THROW(validate_run(sep), ConfigError);
  pgm::write_file(dir_ / "p.ckpt", "x");
  sep.pretrained = (dir_ / "p.ckpt").string();
  EXPECT_NO_THROW(validate_run(sep));
  sep.source_domain = "source";
  try {
    validate_run(sep);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("without source data"), std::string::npos);
  }
  RunConfig joint = tiny("fm_j_m", data);
  joint.target_domain.clear();
  EXPECT_THROW(validate_run(joint), ConfigError);
  RunConfig src = tiny("source", data);
  src.pretrained = (dir_ / "p.ckpt").string();
  EXPECT_THROW(validate_run(src), ConfigError);
}

TEST_F(Workspace, LockBlocksSecondRun) {
  {
    OutputLock a(dir_ / "out");
    EXPECT_TRUE(fs::exists(dir_ / "out" / ".lock"));
    EXPECT_THROW(OutputLock(dir_ / "out"), ConfigError);
  }
  EXPECT_FALSE(fs::exists(dir_ / "out" / ".lock"));
  EXPECT_NO_THROW(OutputLock(dir_ / "out"));
}

TEST_F(Workspace, GenerateIsByteIdenticalOnRerun) {
  make_data();
  const auto first = tree_hashes(dir_ / "data");
  make_data();
  EXPECT_EQ(tree_hashes(dir_ / "data"), first);
  EXPECT_TRUE(fs::exists(dir_ / "data" / "source" / "train" / "labels"));
  EXPECT_FALSE(fs::exists(dir_ / "data" / "target" / "train" / "labels"));
  EXPECT_TRUE(fs::exists(dir_ / "data" / "target" / "test" / "labels"));
  const ConfigDoc m = ConfigDoc::load(dir_ / "data" / "dataset.toml");
  EXPECT_EQ(m.get_array("source", "train_indices", {}).size(), 32u);
  EXPECT_EQ(m.get_array("target", "test_indices", {}).front(), 36.0);
}

TEST_F(Workspace, GenerateConfigParsing) {
  const GenerateConfig g = generate_config_from(
      ConfigDoc::parse("[generate]\nout = \"d\"\ndomains = \"a, target\"\n[a]\ncount = 5\ninvert = true\n"));
  ASSERT_EQ(g.domains.size(), 2u);
  EXPECT_EQ(g.domains[0].spec.name, "a");
  EXPECT_EQ(g.domains[0].count, 5);
  EXPECT_TRUE(g.domains[0].spec.invert);
  EXPECT_FALSE(g.domains[1].labeled_train);
  EXPECT_EQ(g.domains[1].spec.blur_sigma, 1.0);
  EXPECT_THROW(generate_config_from(ConfigDoc::parse("[generate]\ndomains = \"a\"\n[a]\ncolour = 1\n")), ConfigError);
  EXPECT_THROW(generate_config_from(ConfigDoc::parse("[generate]\ndomains = \"a\"\n[b]\ncount = 1\n")), ConfigError);
  EXPECT_THROW(generate_config_from(ConfigDoc::parse("[generate]\ndomains = \"a,a\"\n")), ConfigError);
}

TEST_F(Workspace, ManifestReproducesMetricsByteForByte) {
  const fs::path data = make_data();
  RunOptions opt = quiet();
  opt.plots = true;
  const RunOutcome a = run_train(tiny("source", data), dir_ / "a", opt);
  const ConfigDoc manifest = ConfigDoc::load(a.manifest);
  EXPECT_EQ(manifest.get_string("manifest", "status", ""), "completed");
  EXPECT_EQ(manifest.get_string("manifest", "config_hash", ""), config_hash(tiny("source", fs::absolute(data))));
  EXPECT_EQ(manifest.get_uint("manifest", "seed", 0), 3u);
  for (const char* f : {"model.ckpt", "final.ckpt", "summary.toml", "plots/loss.svg", "plots/dice.svg"}) {
    EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir_ / "a" / ".lock"));
  EXPECT_EQ(pgm::read_file(dir_ / "a" / "plots" / "loss.svg").rfind("<svg", 0), 0u);

  const RunOutcome b = run_train(run_config_from(manifest), dir_ / "b", quiet());
  const std::string csv = pgm::read_file(a.metrics);
  EXPECT_EQ(pgm::read_file(b.metrics), csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(load_checkpoint(b.checkpoint).weights, load_checkpoint(a.checkpoint).weights);
  ASSERT_EQ(a.test_scores.size(), 1u);
  EXPECT_EQ(a.test_scores[0].images, 4u);
  EXPECT_EQ(ConfigDoc::load(dir_ / "a" / "summary.toml").get_double("test_dice", "source", -1), a.test_scores[0].dice);
}

TEST_F(Workspace, ZeroIterationRunWritesValidManifest) {
  const fs::path data = make_data();
  RunConfig rc = tiny("source", data);
  rc.train.iterations = 0;
  const RunOutcome o = run_train(rc, dir_ / "zero", quiet());
  const ConfigDoc m = ConfigDoc::load(o.manifest);
  EXPECT_EQ(m.get_string("manifest", "status", ""), "completed");
  EXPECT_EQ(run_config_from(m).train.iterations, 0);
  EXPECT_EQ(pgm::read_file(o.metrics), metrics_csv_header());
  EXPECT_EQ(load_checkpoint(o.checkpoint).weights, o.result.student);
}

TEST_F(Workspace, JointAndSeparateRuns) {
  const fs::path data = make_data();
  const RunOutcome joint = run_train(tiny("mt_j_m", data), dir_ / "joint", quiet());
  EXPECT_TRUE(fs::exists(dir_ / "joint" / "teacher.ckpt"));
  ASSERT_EQ(joint.test_scores.size(), 2u);
  EXPECT_EQ(joint.test_scores[1].domain, "target");

  RunConfig sep = tiny("fm_s_w", data);
  sep.pretrained = joint.checkpoint.string();
  const RunOutcome adapted = run_train(sep, dir_ / "sep", quiet());
  EXPECT_FALSE(fs::exists(dir_ / "sep" / "teacher.ckpt"));
  for (const auto& row : adapted.result.rows) EXPECT_EQ(row.loss_sup, 0.0);
  ASSERT_EQ(adapted.test_scores.size(), 1u);
  EXPECT_EQ(ConfigDoc::load(adapted.manifest).get_string("run", "pretrained", ""), fs::absolute(joint.checkpoint).string());

  RunConfig wrong = sep;
  wrong.train.model.latent_dim = 3;
  EXPECT_THROW(run_train(wrong, dir_ / "wrong", quiet()), ArchitectureMismatch);
}

TEST_F(Workspace, DivergedRunIsRecorded) {
  const fs::path data = make_data();
  RunConfig rc = tiny("source", data);
  rc.train.learning_rate = 1e30;
  EXPECT_THROW(run_train(rc, dir_ / "div", quiet()), DivergenceError);
  const ConfigDoc m = ConfigDoc::load(dir_ / "div" / "manifest.toml");
  EXPECT_EQ(m.get_string("manifest", "status", ""), "diverged");
  EXPECT_GE(m.get_int("manifest", "diverged_at", 0), 1);
}

TEST_F(Workspace, EvalReportsMissingLabels) {
  const fs::path data = make_data();
  const RunOutcome o = run_train(tiny("source", data), dir_ / "src", quiet());
  try {
    run_eval(o.checkpoint, data / "target" / "train", 2, 0);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("labels"), std::string::npos);
  }
  const EvalOutcome e = run_eval(o.checkpoint, data / "target" / "test/", 2, 0);
  EXPECT_EQ(e.report.per_image.size(), 4u);
  EXPECT_EQ(e.report.indices.front(), 36);
  EXPECT_THROW(run_eval(o.checkpoint, data / "target" / "test", 2, 0, std::nullopt, dir_ / "inst"), ConfigError);
  PUNetConfig other = o.result.student.config();
  other.ladder = {4, 4};
  EXPECT_THROW(run_eval(o.checkpoint, data / "target" / "test", 2, 0, other), ArchitectureMismatch);
}

TEST_F(Workspace, TwoClassEvalWritesInstances) {
  GenerateConfig g = GenerateConfig::two_domain();
  g.out = (dir_ / "data").string();
  g.domains.resize(1);
  g.domains[0].count = 20;
  generate_dataset(g);
  RunConfig rc = tiny("source", g.out);
  rc.train.model.classes = 2;
  const RunOutcome o = run_train(rc, dir_ / "k2", quiet());
  const EvalOutcome e = run_eval(o.checkpoint, fs::path(g.out) / "source" / "test", 2, 0, std::nullopt, dir_ / "inst");
  ASSERT_EQ(e.instance_counts.size(), 2u);
  const pgm::Image img = pgm::read(dir_ / "inst" / "0018.pgm");
  EXPECT_EQ(img.maxval, 65535);
}

TEST_F(Workspace, PredictWritesSamplesMeanAndConsensus) {
  const fs::path data = make_data();
  const RunOutcome o = run_train(tiny("source", data), dir_ / "src", quiet());
  const fs::path image = data / "target" / "test" / "images" / "0036.pgm";

  const PredictOutcome one = run_predict(o.checkpoint, image, dir_ / "p1", 1, 4);
  EXPECT_EQ(pgm::read_file(dir_ / "p1" / "mean.pgm"), pgm::read_file(dir_ / "p1" / "sample_000.pgm"));

  const int n = 4;
  const PredictOutcome four = run_predict(o.checkpoint, image, dir_ / "p4", n, 4);
  EXPECT_EQ(four.files.size(), static_cast<std::size_t>(n + 2));
  const pgm::Image c = pgm::read(dir_ / "p4" / "consensus.pgm");
  for (std::uint16_t v : c.pixels) {
    const double scaled = v / 255.0 * n;
    EXPECT_NEAR(scaled, std::round(scaled), n * 0.5 / 255.0 + 1e-9);
  }
  EXPECT_EQ(four.consensus.samples, n);
  EXPECT_EQ(run_predict(o.checkpoint, image, dir_ / "p4b", n, 4).mean.to_vector(), four.mean.to_vector());
  EXPECT_THROW(run_predict(o.checkpoint, image, dir_ / "p0", 0, 4), ConfigError);
}

}  // namespace
}  // namespace probadapt
