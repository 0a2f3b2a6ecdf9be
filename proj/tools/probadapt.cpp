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

// probadapt command-line entry point: generate, train, eval, predict.
// Exit codes: 0 success, 1 usage or config error, 2 runtime or training failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "probadapt/run.hpp"

namespace {

using namespace probadapt;

ConfigDoc load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  ConfigDoc doc = path.empty() ? ConfigDoc{} : ConfigDoc::load(path);
  for (const auto& o : overrides) doc.apply_override(o);
  return doc;
}

int cmd_generate(const std::string& config, const std::string& out, const std::vector<std::string>& sets) {
  ConfigDoc doc = load_with_overrides(config, sets);
  GenerateConfig g = config.empty() && sets.empty() ? GenerateConfig::two_domain() : generate_config_from(doc);
  if (!out.empty()) g.out = out;
  const auto manifest = generate_dataset(g);
  for (const auto& d : g.domains) {
    std::cout << d.spec.name << ": " << d.count << " images" << (d.labeled_train ? "" : " (train split unlabeled)")
              << "\n";
  }
  std::cout << "dataset manifest: " << manifest.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
              const std::string& pretrained, int samples, bool plots, const std::vector<std::string>& sets) {
  ConfigDoc doc = load_with_overrides(config, sets);
  if (seed) doc.set_uint("run", "seed", *seed);
  if (!pretrained.empty()) doc.set_string("run", "pretrained", pretrained);
  const RunConfig rc = run_config_from(doc);
  RunOptions opt;
  opt.plots = plots;
  opt.eval_samples = samples;
  opt.log = &std::cout;
  std::cout << "method " << method_name(rc.train.method) << ", seed " << rc.train.seed << ", " << rc.train.iterations
            << " iterations -> " << out << "\n";
  const RunOutcome o = run_train(rc, out, opt);
  for (const auto& t : o.test_scores) {
    std::printf("test dice %s: %.2f (%zu images)\n", t.domain.c_str(), t.dice, t.images);
  }
  std::cout << "manifest: " << o.manifest.string() << "\ncheckpoint: " << o.checkpoint.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, int samples, std::uint64_t seed,
             const std::string& config, const std::string& instances, const std::string& out) {
  std::optional<PUNetConfig> expected;
  if (!config.empty()) expected = model_config_from(ConfigDoc::load(config));
  std::optional<std::filesystem::path> inst;
  if (!instances.empty()) inst = instances;
  const EvalOutcome e = run_eval(checkpoint, data, samples, seed, expected, inst);
  std::string table = inst ? "index,dice,instances\n" : "index,dice\n";
  for (std::size_t i = 0; i < e.report.per_image.size(); ++i) {
    char row[96];
    std::snprintf(row, sizeof row, "%d,%.4f", e.report.indices[i], e.report.per_image[i]);
    table += row;
    if (inst) table += "," + std::to_string(e.instance_counts[i]);
    table += "\n";
  }
  std::cout << table;
  std::printf("mean dice %.2f (%zu images, %d samples)\n", e.report.mean_dice, e.report.per_image.size(), samples);
  if (!out.empty()) pgm::write_file(out, table);
  return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& image, const std::string& out, int samples,
                std::uint64_t seed, const std::string& config) {
  TrainConfig cfg;
  if (!config.empty()) cfg = train_config_from(ConfigDoc::load(config));
  const PredictOutcome p = run_predict(checkpoint, image, out, samples, seed, cfg);
  for (const auto& f : p.files) std::cout << f.string() << "\n";
  std::printf("mean consensus %.4f\n", p.consensus.mean());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic domain adaptation for segmentation"};
  app.require_subcommand(1);
  std::string config, out, pretrained, checkpoint, data, image, instances;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  int samples = 8;
  bool plots = false;

  auto* gen = app.add_subcommand("generate", "write a synthetic multi-domain PGM dataset");
  gen->add_option("--config", config, "generator config (TOML)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "dataset root (overrides generate.out)");
  gen->add_option("--set", sets, "override section.key=value");

  auto* train = app.add_subcommand("train", "train a source model or run self-training adaptation");
  train->add_option("--config", config, "run config or a previous run's manifest.toml")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "output directory")->required();
  auto* seed_opt = train->add_option("--seed", seed, "run seed (overrides run.seed)");
  train->add_option("--pretrained", pretrained, "source checkpoint for separate adaptation");
  train->add_option("--samples", samples, "samples per image for the final test evaluation")->check(CLI::PositiveNumber);
  train->add_flag("--plots", plots, "write SVG loss and dice curves");
  train->add_option("--set", sets, "override section.key=value");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a labeled image directory");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "directory with images/ and labels/")->required();
  eval->add_option("--samples", samples, "prior samples per image")->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed, "sampling seed");
  eval->add_option("--config", config, "config whose [model] the checkpoint must match")->check(CLI::ExistingFile);
  eval->add_option("--instances", instances, "write instance maps here (2-class models)");
  eval->add_option("--out", out, "write the per-image table to this CSV file");

  auto* pred = app.add_subcommand("predict", "write sampled predictions, their mean and the consensus map");
  pred->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  pred->add_option("--image", image, "8-bit P5 input image")->required()->check(CLI::ExistingFile);
  pred->add_option("--out", out, "output directory")->required();
  pred->add_option("--samples", samples, "prior samples")->check(CLI::PositiveNumber);
  pred->add_option("--seed", seed, "sampling seed");
  pred->add_option("--config", config, "config supplying train.theta and train.consensus_complement")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(config, out, sets);
    if (*train) {
      return cmd_train(config, out, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt, pretrained,
                       samples, plots, sets);
    }
    if (*eval) return cmd_eval(checkpoint, data, samples, seed, config, instances, out);
    if (*pred) return cmd_predict(checkpoint, image, out, samples, seed, config);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ArchitectureMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged at iteration " << e.iteration() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
