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

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "probadapt/checkpoint.hpp"
#include "probadapt/config.hpp"
#include "probadapt/consensus.hpp"
#include "probadapt/data.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/instanceseg.hpp"
#include "probadapt/pgm.hpp"
#include "probadapt/plot.hpp"
#include "probadapt/selftrain.hpp"
#include "probadapt/version.hpp"

namespace probadapt {

namespace fs = std::filesystem;

// Everything a `train` invocation needs. Source, target and pretrained are
// optional and validated against the method's strategy.
struct RunConfig {
  TrainConfig train;
  std::string data_root = "data";
  std::string source_domain;
  std::string target_domain;
  std::string pretrained;
};

namespace detail {

inline void reject_unknown(const ConfigDoc& doc, const std::string& section) {
  const auto extra = doc.unread(section);
  if (extra.empty()) return;
  std::string list;
  for (const auto& k : extra) list += (list.empty() ? "" : ", ") + k;
  throw ConfigError("unknown key(s) in [" + section + "]: " + list);
}

inline AugmentationSpec read_augmentation(const ConfigDoc& doc, const std::string& section, AugmentationSpec a) {
  a.apply_probability = doc.get_double(section, "probability", a.apply_probability);
  a.blur_sigma = read_interval(doc, section, "blur_sigma", a.blur_sigma);
  a.noise_sigma = read_interval(doc, section, "noise_sigma", a.noise_sigma);
  a.contrast = read_interval(doc, section, "contrast", a.contrast);
  return a;
}

inline void write_augmentation(ConfigDoc& doc, const std::string& section, const AugmentationSpec& a) {
  doc.set_double(section, "probability", a.apply_probability);
  doc.set_array(section, "blur_sigma", {a.blur_sigma.lo, a.blur_sigma.hi});
  doc.set_array(section, "noise_sigma", {a.noise_sigma.lo, a.noise_sigma.hi});
  doc.set_array(section, "contrast", {a.contrast.lo, a.contrast.hi});
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline PUNetConfig model_config_from(const ConfigDoc& doc, PUNetConfig m = {}) {
  const auto ladder = doc.get_array("model", "ladder", std::vector<double>(m.ladder.begin(), m.ladder.end()));
  m.ladder.clear();
  for (double v : ladder) {
    if (v != static_cast<int>(v)) throw ConfigError("model.ladder: channel counts must be integers");
    m.ladder.push_back(static_cast<int>(v));
  }
  m.in_channels = static_cast<int>(doc.get_int("model", "in_channels", m.in_channels));
  m.latent_dim = static_cast<int>(doc.get_int("model", "latent_dim", m.latent_dim));
  m.classes = static_cast<int>(doc.get_int("model", "classes", m.classes));
  m.comb_layers = static_cast<int>(doc.get_int("model", "comb_layers", m.comb_layers));
  m.validate();
  return m;
}

inline void write_model_config(ConfigDoc& doc, const PUNetConfig& m) {
  doc.set_array("model", "ladder", std::vector<double>(m.ladder.begin(), m.ladder.end()));
  doc.set_int("model", "in_channels", m.in_channels);
  doc.set_int("model", "latent_dim", m.latent_dim);
  doc.set_int("model", "classes", m.classes);
  doc.set_int("model", "comb_layers", m.comb_layers);
}

inline TrainConfig train_config_from(const ConfigDoc& doc, TrainConfig c = {}) {
  c.method = parse_method(doc.get_string("run", "method", method_name(c.method)));
  c.seed = doc.get_uint("run", "seed", c.seed);
  c.iterations = doc.get_int("train", "iterations", c.iterations);
  c.learning_rate = doc.get_double("train", "learning_rate", c.learning_rate);
  c.batch_size = static_cast<int>(doc.get_int("train", "batch_size", c.batch_size));
  const auto patch = doc.get_array("train", "patch", {static_cast<double>(c.patch_h), static_cast<double>(c.patch_w)});
  if (patch.size() != 2) throw ConfigError("train.patch: expected [height, width]");
  c.patch_h = static_cast<int>(patch[0]);
  c.patch_w = static_cast<int>(patch[1]);
  c.theta = doc.get_double("train", "theta", c.theta);
  c.n_samples = static_cast<int>(doc.get_int("train", "n_samples", c.n_samples));
  c.alpha = doc.get_double("train", "alpha", c.alpha);
  c.beta = doc.get_double("train", "beta", c.beta);
  c.mean_target = doc.get_bool("train", "mean_target", c.mean_target);
  c.consensus_complement = doc.get_bool("train", "consensus_complement", c.consensus_complement);
  c.val_every = static_cast<int>(doc.get_int("train", "val_every", c.val_every));
  c.val_samples = static_cast<int>(doc.get_int("train", "val_samples", c.val_samples));
  c.plateau_factor = doc.get_double("train", "plateau_factor", c.plateau_factor);
  c.plateau_patience = static_cast<int>(doc.get_int("train", "plateau_patience", c.plateau_patience));
  c.weak = detail::read_augmentation(doc, "weak", c.weak);
  c.strong = detail::read_augmentation(doc, "strong", c.strong);
  c.model = model_config_from(doc, c.model);
  c.validate();
  return c;
}

inline void write_train_config(ConfigDoc& doc, const TrainConfig& c) {
  doc.set_string("run", "method", method_name(c.method));
  doc.set_uint("run", "seed", c.seed);
  doc.set_int("train", "iterations", c.iterations);
  doc.set_double("train", "learning_rate", c.learning_rate);
  doc.set_int("train", "batch_size", c.batch_size);
  doc.set_array("train", "patch", {static_cast<double>(c.patch_h), static_cast<double>(c.patch_w)});
  doc.set_double("train", "theta", c.theta);
  doc.set_int("train", "n_samples", c.n_samples);
  doc.set_double("train", "alpha", c.alpha);
  doc.set_double("train", "beta", c.beta);
  doc.set_bool("train", "mean_target", c.mean_target);
  doc.set_bool("train", "consensus_complement", c.consensus_complement);
  doc.set_int("train", "val_every", c.val_every);
  doc.set_int("train", "val_samples", c.val_samples);
  doc.set_double("train", "plateau_factor", c.plateau_factor);
  doc.set_int("train", "plateau_patience", c.plateau_patience);
  detail::write_augmentation(doc, "weak", c.weak);
  detail::write_augmentation(doc, "strong", c.strong);
  write_model_config(doc, c.model);
}

// Parses a train config; unknown sections or keys are errors so that typos do
// not silently fall back to defaults. A [manifest] section is ignored, which
// lets a run manifest serve as config.
inline RunConfig run_config_from(const ConfigDoc& doc) {
  static const std::set<std::string> known{"run", "data", "train", "model", "weak", "strong", "manifest"};
  for (const auto& s : doc.sections()) {
    if (!known.count(s)) throw ConfigError("unknown config section [" + s + "]");
  }
  RunConfig rc;
  rc.train = train_config_from(doc);
  rc.pretrained = doc.get_string("run", "pretrained", "");
  rc.data_root = doc.get_string("data", "root", rc.data_root);
  rc.source_domain = doc.get_string("data", "source", "");
  rc.target_domain = doc.get_string("data", "target", "");
  for (const char* s : {"run", "data", "train", "model", "weak", "strong"}) detail::reject_unknown(doc, s);
  return rc;
}

inline ConfigDoc to_config(const RunConfig& rc) {
  ConfigDoc doc;
  write_train_config(doc, rc.train);
  if (!rc.pretrained.empty()) doc.set_string("run", "pretrained", rc.pretrained);
  doc.set_string("data", "root", rc.data_root);
  if (!rc.source_domain.empty()) doc.set_string("data", "source", rc.source_domain);
  if (!rc.target_domain.empty()) doc.set_string("data", "target", rc.target_domain);
  return doc;
}

inline std::string config_hash(const RunConfig& rc) { return detail::hex64(fnv1a(to_config(rc).dump())); }

// Checks the data/pretrained combination the method's strategy needs.
inline void validate_run(const RunConfig& rc) {
  rc.train.validate();
  const std::string name = method_name(rc.train.method);
  switch (rc.train.method.strategy) {
    case Strategy::Source:
      if (rc.source_domain.empty()) throw ConfigError("method source needs data.source");
      break;
    case Strategy::Joint:
      if (rc.source_domain.empty() || rc.target_domain.empty()) {
        throw ConfigError("method " + name + " needs data.source and data.target");
      }
      break;
    case Strategy::Separate:
      if (!rc.source_domain.empty()) {
        throw ConfigError("method " + name + " adapts without source data; remove data.source from the config");
      }
      if (rc.target_domain.empty()) throw ConfigError("method " + name + " needs data.target");
      if (rc.pretrained.empty()) throw ConfigError("method " + name + " requires a --pretrained checkpoint");
      if (!fs::exists(rc.pretrained)) throw ConfigError("pretrained checkpoint " + rc.pretrained + " does not exist");
      break;
  }
  if (rc.train.method.strategy != Strategy::Separate && !rc.pretrained.empty()) {
    throw ConfigError("method " + name + " trains from scratch; --pretrained only applies to separate methods");
  }
}

// Exclusive claim on an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir.string() + ": " + ec.message());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw ConfigError("output directory " + dir.string() + " is in use by another run (remove " + path_.string() +
                        " if no run is active)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The pid is informational only.
    }
  }
  ~OutputLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// ---- dataset generation ----

struct DomainSetup {
  DomainSpec spec;
  int count = 640;
  bool labeled_train = true;
};

struct GenerateConfig {
  std::string out = "data";
  std::vector<DomainSetup> domains;

  static GenerateConfig two_domain() {
    GenerateConfig g;
    g.domains.push_back({DomainSpec::default_source(), 640, true});
    g.domains.push_back({DomainSpec::default_target(), 640, false});
    return g;
  }
};

inline GenerateConfig generate_config_from(const ConfigDoc& doc) {
  GenerateConfig g;
  g.out = doc.get_string("generate", "out", g.out);
  const std::string list = doc.get_string("generate", "domains", "source,target");
  std::stringstream ss(list);
  std::string name;
  std::set<std::string> seen;
  while (std::getline(ss, name, ',')) {
    name.erase(0, name.find_first_not_of(" \t"));
    name.erase(name.find_last_not_of(" \t") + 1);
    if (name.empty()) continue;
    if (!seen.insert(name).second) throw ConfigError("generate.domains lists '" + name + "' twice");
    if (name == "generate") throw ConfigError("'generate' is not a valid domain name");
    DomainSetup d;
    d.spec = name == "target" ? DomainSpec::default_target() : DomainSpec::default_source();
    d.spec.name = name;
    d.labeled_train = name != "target";
    d.spec = read_domain_spec(doc, name, d.spec);
    d.spec.name = name;
    d.count = static_cast<int>(doc.get_int(name, "count", d.count));
    d.labeled_train = doc.get_bool(name, "labeled_train", d.labeled_train);
    if (d.count < 0) throw ConfigError(name + ".count must be non-negative");
    d.spec.validate();
    detail::reject_unknown(doc, name);
    g.domains.push_back(d);
  }
  detail::reject_unknown(doc, "generate");
  for (const auto& s : doc.sections()) {
    if (s != "generate" && !seen.count(s)) throw ConfigError("config section [" + s + "] is not a listed domain");
  }
  return g;
}

inline ConfigDoc to_config(const GenerateConfig& g) {
  ConfigDoc doc;
  doc.set_string("generate", "out", g.out);
  std::string list;
  for (const auto& d : g.domains) list += (list.empty() ? "" : ",") + d.spec.name;
  doc.set_string("generate", "domains", list);
  for (const auto& d : g.domains) {
    write_domain_spec(doc, d.spec.name, d.spec);
    doc.set_int(d.spec.name, "count", d.count);
    doc.set_bool(d.spec.name, "labeled_train", d.labeled_train);
  }
  return doc;
}

// Writes <out>/<domain>/{train,val,test}/{images,labels,boundaries} and a
// dataset.toml manifest. Output bytes depend only on the config.
inline fs::path generate_dataset(const GenerateConfig& g) {
  const fs::path root(g.out);
  ConfigDoc manifest = to_config(g);
  manifest.set_string("dataset", "version", kVersion);
  for (std::size_t di = 0; di < g.domains.size(); ++di) {
    const DomainSetup& d = g.domains[di];
    Splits sp = split_by_index(generate_domain(d.spec, d.count, static_cast<int>(di)));
    if (!d.labeled_train) {
      for (Sample& s : sp.train) {
        s.mask.reset();
        s.boundary.reset();
      }
    }
    const std::pair<const char*, const std::vector<Sample>*> parts[] = {
        {"train", &sp.train}, {"val", &sp.val}, {"test", &sp.test}};
    for (const auto& [split, samples] : parts) {
      write_domain(root / d.spec.name, split, *samples);
      std::vector<double> idx;
      for (const Sample& s : *samples) idx.push_back(s.index);
      manifest.set_array(d.spec.name, std::string(split) + "_indices", idx);
    }
  }
  manifest.save(root / "dataset.toml");
  return root / "dataset.toml";
}

// One split of a generated (or hand-made) dataset; empty if it does not exist
// and is not required.
inline std::vector<Sample> load_split(const fs::path& root, const std::string& domain, const std::string& split,
                                      bool require_labels, bool required) {
  const fs::path dir = root / domain / split;
  if (!fs::is_directory(dir / "images")) {
    if (required) throw IoError(dir.string() + ": no images directory");
    return {};
  }
  return load_domain(root / domain, split, require_labels);
}

// ---- training runs ----

struct RunOptions {
  bool plots = false;
  int eval_samples = 8;
  std::ostream* log = nullptr;
};

struct TestScore {
  std::string domain;
  double dice = 0.0;
  std::size_t images = 0;
};

struct RunOutcome {
  TrainResult result;
  fs::path manifest;
  fs::path metrics;
  fs::path checkpoint;
  std::vector<TestScore> test_scores;
};

inline void write_plots(const fs::path& dir, const std::vector<MetricsRow>& rows) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
  plot::Series total{"loss_total", {}, {}}, sup{"loss_sup", {}, {}}, unsup{"loss_unsup", {}, {}}, dice{"val_dice", {}, {}};
  for (const auto& r : rows) {
    const double x = static_cast<double>(r.iteration);
    total.x.push_back(x);
    total.y.push_back(r.loss_total);
    sup.x.push_back(x);
    sup.y.push_back(r.loss_sup);
    unsup.x.push_back(x);
    unsup.y.push_back(r.loss_unsup);
    if (r.val_dice) {
      dice.x.push_back(x);
      dice.y.push_back(*r.val_dice);
    }
  }
  pgm::write_file(dir / "loss.svg", plot::line_chart("training loss", "iteration", {total, sup, unsup}));
  pgm::write_file(dir / "dice.svg", plot::line_chart("validation dice", "iteration", {dice}));
}

// Runs one training job into `out`: manifest first, then metrics.csv as rows
// complete, then model.ckpt (selected weights), final.ckpt (last student),
// teacher.ckpt for EMA teachers, summary.toml with test dice, optional plots.
inline RunOutcome run_train(RunConfig rc, const fs::path& out, const RunOptions& opt = {}) {
  validate_run(rc);
  rc.data_root = fs::absolute(rc.data_root).lexically_normal().string();
  if (!rc.pretrained.empty()) rc.pretrained = fs::absolute(rc.pretrained).lexically_normal().string();
  const TrainConfig& cfg = rc.train;
  const RunConfig resolved = rc;

  OutputLock lock(out);
  RunOutcome o;
  o.manifest = out / "manifest.toml";
  o.metrics = out / "metrics.csv";
  o.checkpoint = out / "model.ckpt";
  const std::string hash = config_hash(resolved);

  ConfigDoc manifest = to_config(resolved);
  manifest.set_string("manifest", "version", kVersion);
  manifest.set_uint("manifest", "seed", cfg.seed);
  manifest.set_string("manifest", "config_hash", hash);
  manifest.set_string("manifest", "started", detail::utc_now());
  manifest.set_string("manifest", "metrics", o.metrics.string());
  manifest.set_string("manifest", "checkpoint", o.checkpoint.string());
  manifest.set_string("manifest", "status", "running");
  manifest.save(o.manifest);

  const fs::path root(rc.data_root);
  DomainData source, target;
  if (!rc.source_domain.empty()) {
    source.train = load_split(root, rc.source_domain, "train", true, true);
    source.val = load_split(root, rc.source_domain, "val", true, false);
    source.test = load_split(root, rc.source_domain, "test", false, false);
  }
  if (!rc.target_domain.empty() && cfg.method.strategy != Strategy::Source) {
    target.train = load_split(root, rc.target_domain, "train", false, true);
    for (Sample& s : target.train) {
      s.mask.reset();
      s.boundary.reset();
    }
    target.val = load_split(root, rc.target_domain, "val", false, false);
    target.test = load_split(root, rc.target_domain, "test", false, false);
  }

  std::ofstream csv(o.metrics, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError(o.metrics.string() + ": cannot open for writing");
  csv << metrics_csv_header();
  TrainHooks hooks;
  hooks.on_row = [&](const MetricsRow& r) {
    csv << metrics_csv_row(r);
    csv.flush();
    if (opt.log && (r.val_dice || r.iteration == cfg.iterations)) {
      *opt.log << "iteration " << r.iteration << "  loss " << r.loss_total;
      if (r.val_dice) *opt.log << "  val_dice " << *r.val_dice;
      *opt.log << "\n";
    }
  };

  try {
    switch (cfg.method.strategy) {
      case Strategy::Source:
        o.result = train_source(cfg, source, hooks);
        break;
      case Strategy::Joint:
        o.result = train_joint(cfg, source, target, hooks);
        break;
      case Strategy::Separate:
        o.result = adapt_separate(cfg, load_checkpoint<float>(rc.pretrained, cfg.model).weights, target, hooks);
        break;
    }
  } catch (const DivergenceError& e) {
    csv.close();
    manifest.set_string("manifest", "status", "diverged");
    manifest.set_int("manifest", "diverged_at", e.iteration());
    manifest.set_string("manifest", "finished", detail::utc_now());
    manifest.save(o.manifest);
    throw;
  }
  csv.close();

  save_checkpoint(o.checkpoint, o.result.selected, {o.result.best_iteration, hash, kVersion});
  save_checkpoint(out / "final.ckpt", o.result.student, {cfg.iterations, hash, kVersion});
  if (cfg.ema_teacher() && cfg.method.strategy != Strategy::Source) {
    save_checkpoint(out / "teacher.ckpt", o.result.teacher, {cfg.iterations, hash, kVersion});
  }

  ConfigDoc summary;
  auto score = [&](const std::string& domain, const std::vector<Sample>& test) {
    if (test.empty() || !std::all_of(test.begin(), test.end(), [](const Sample& s) { return s.mask.has_value(); })) return;
    const double d = evaluate(o.result.selected, test, opt.eval_samples, cfg.seed).mean_dice;
    o.test_scores.push_back({domain, d, test.size()});
    summary.set_double("test_dice", domain, d);
  };
  if (!rc.source_domain.empty()) score(rc.source_domain, source.test);
  if (!rc.target_domain.empty()) score(rc.target_domain, target.test);
  summary.set_int("training", "best_iteration", o.result.best_iteration);
  summary.set_double("training", "best_metric", o.result.best_metric);
  summary.set_int("training", "skipped_unsupervised_steps", o.result.skipped_unsupervised_steps);
  summary.save(out / "summary.toml");
  if (opt.plots) write_plots(out / "plots", o.result.rows);

  manifest.set_string("manifest", "status", "completed");
  manifest.set_string("manifest", "finished", detail::utc_now());
  manifest.save(o.manifest);
  return o;
}

// ---- evaluation and prediction ----

struct EvalOutcome {
  MetricsReport report;
  std::vector<int> instance_counts;
};

// Evaluates a checkpoint on a directory holding images/ and labels/. With
// `instances_dir`, 2-class models also write seeded-watershed instance maps.
inline EvalOutcome run_eval(const fs::path& checkpoint, const fs::path& dataset_dir, int n_samples, std::uint64_t seed,
                            const std::optional<PUNetConfig>& expected = std::nullopt,
                            const std::optional<fs::path>& instances_dir = std::nullopt) {
  if (n_samples < 1) throw ConfigError("--samples must be at least 1");
  const auto ck = load_checkpoint<float>(checkpoint, expected);
  fs::path dir = fs::absolute(dataset_dir).lexically_normal();
  if (!dir.has_filename()) dir = dir.parent_path();
  const auto data = load_domain(dir.parent_path(), dir.filename().string(), true);
  if (data.empty()) throw IoError(dataset_dir.string() + ": no images to evaluate");
  EvalOutcome e;
  e.report = evaluate(ck.weights, data, n_samples, seed);
  if (instances_dir) {
    if (ck.weights.config().classes != 2) {
      throw ConfigError("--instances needs a 2-class (foreground, boundary) model");
    }
    std::error_code ec;
    fs::create_directories(*instances_dir, ec);
    if (ec) throw IoError(instances_dir->string() + ": " + ec.message());
    for (const Sample& s : data) {
      SeededRng rng = SeededRng(seed).derive("eval", static_cast<std::uint64_t>(s.index));
      const Image mean = mean_of(predict_samples(s.image, ck.weights, n_samples, rng));
      const InstanceLabeling lab = instances_from_prediction(mean);
      write_instances(*instances_dir / (file_stem(s.index) + ".pgm"), lab);
      e.instance_counts.push_back(lab.count);
    }
  }
  return e;
}

struct PredictOutcome {
  std::vector<fs::path> files;
  Image mean;
  ConsensusMap<float> consensus;
};

// Writes per-sample predictions, their mean and the consensus map as 8-bit
// PGMs (one file per class when the model has several).
inline PredictOutcome run_predict(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out_dir,
                                  int n_samples, std::uint64_t seed, const TrainConfig& cfg = {}) {
  if (n_samples < 1) throw ConfigError("--samples must be at least 1");
  const auto ck = load_checkpoint<float>(checkpoint);
  const Image x = load_pgm_pair(image_path).image;
  SeededRng rng = SeededRng(seed).derive("predict");
  const auto samples = predict_samples(x, ck.weights, n_samples, rng);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir.string() + ": " + ec.message());
  PredictOutcome p;
  p.mean = mean_of(samples);
  p.consensus = consensus_response(cfg.consensus_complement ? with_complement(samples) : samples, cfg.theta);
  const int k = p.mean.channels();
  auto write = [&](const std::string& stem, const Image& img) {
    for (int c = 0; c < img.channels(); ++c) {
      Image plane({1, img.height(), img.width()});
      std::copy(img.channel(c).begin(), img.channel(c).end(), plane.data().begin());
      const fs::path f = out_dir / (k > 1 && img.channels() > 1 ? stem + "_c" + std::to_string(c) + ".pgm" : stem + ".pgm");
      pgm::write(f, pgm::from_unit(plane));
      p.files.push_back(f);
    }
  };
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%03zu", i);
    write(stem, samples[i]);
  }
  write("mean", p.mean);
  write("consensus", p.consensus.values);
  return p;
}

}  // namespace probadapt
