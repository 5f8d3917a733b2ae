#pragma once

// Run manifests: flat `key = value` text, one entry per line, `#` comments.
// Unknown keys are rejected so that typos never silently fall back to a
// default. Command-line flags and the NETAUG_SEED environment variable
// override manifest values.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "netaug/arch.hpp"
#include "netaug/datasets.hpp"
#include "netaug/error.hpp"
#include "netaug/trainer.hpp"

namespace netaug {

struct ManifestKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ManifestKey>& manifest_keys() {
  static const std::vector<ManifestKey> keys = {
      {"run_name", "run", "prefix of run ids and output files"},
      {"mode", "baseline", "baseline | netaug | dropout | mixup"},
      {"arch", "dense:8,dense:8", "hidden layers, e.g. dense:8,dense:8 or conv:8:3:1:1,bottleneck:16:8"},
      {"r", "3", "augmentation factor (netaug)"},
      {"s", "2", "diversity factor (netaug)"},
      {"alpha", "1", "auxiliary loss weight (netaug)"},
      {"keep_prob", "0.9", "dropout keep probability (dropout)"},
      {"mixup_alpha", "0.1", "Beta(a, a) parameter (mixup)"},
      {"label_smoothing", "0.1", "label smoothing factor for training losses"},
      {"epochs", "100", "training epochs"},
      {"batch_size", "64", "mini-batch size"},
      {"drop_last", "false", "drop the final partial batch of each epoch"},
      {"seeds", "0", "comma-separated run seeds"},
      {"lr", "0.0125", "initial learning rate of the cosine schedule"},
      {"momentum", "0.9", "SGD momentum"},
      {"nesterov", "true", "Nesterov momentum"},
      {"weight_decay", "4e-5", "L2 weight decay"},
      {"allow_base_in_sampling", "false", "allow the sampled augmented config to equal the base config"},
      {"aug_weight_scale", "alpha", "gradient scale of augmented-only weights: alpha | one"},
      {"init_fan", "max", "fan-in used for initialization: max | base"},
      {"dataset", "spirals", "spirals | idx | csv"},
      {"data_seed", "1000", "seed of the synthetic dataset"},
      {"spiral_per_class", "300", "training points per spiral arm"},
      {"spiral_test_per_class", "300", "held-out points per spiral arm"},
      {"spiral_classes", "3", "number of spiral arms"},
      {"spiral_noise", "0.25", "angular noise stddev, radians"},
      {"spiral_sweep", "4", "angle swept by each arm, radians"},
      {"train_images", "", "IDX image file (train split)"},
      {"train_labels", "", "IDX label file (train split)"},
      {"test_images", "", "IDX image file (test split)"},
      {"test_labels", "", "IDX label file (test split)"},
      {"classes", "10", "class count of IDX label files"},
      {"flatten", "false", "flatten image inputs to feature vectors"},
      {"train_csv", "", "CSV file (train split)"},
      {"test_csv", "", "CSV file (test split)"},
      {"label_column", "label", "CSV label column name"},
      {"out_dir", "runs", "output directory"},
  };
  return keys;
}

using ManifestMap = std::map<std::string, std::string>;

inline ManifestMap default_manifest() {
  ManifestMap m;
  for (const auto& k : manifest_keys()) m[k.name] = k.default_value;
  return m;
}

inline bool is_manifest_key(const std::string& key) {
  for (const auto& k : manifest_keys())
    if (key == k.name) return true;
  return false;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Applies `key = value` lines from `text` on top of `into`.
inline void parse_manifest_text(const std::string& text, ManifestMap& into) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::config, "manifest line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (!is_manifest_key(key)) {
      fail(ErrorKind::config, "manifest line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      fail(ErrorKind::config, "manifest line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    into[key] = detail::trim(line.substr(eq + 1));
  }
}

inline ManifestMap load_manifest_file(const std::string& path, ManifestMap base = default_manifest()) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open manifest '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  parse_manifest_text(ss.str(), base);
  return base;
}

struct DataSpec {
  std::string kind = "spirals";
  std::uint64_t data_seed = 1000;
  SpiralOptions spirals;
  std::size_t spiral_test_per_class = 300;
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t classes = 10;
  bool flatten = false;
  std::string train_csv, test_csv, label_column = "label";
};

struct RunManifest {
  std::string run_name = "run";
  TrainRunConfig config;
  std::vector<LayerSpec> layers;
  DataSpec data;
  std::string out_dir = "runs";
  std::vector<std::uint64_t> seeds{0};
};

namespace detail {

inline double parse_double(const ManifestMap& m, const std::string& key) {
  const std::string& v = m.at(key);
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) fail(ErrorKind::config, key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long d = 0;
  try {
    d = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size() || v[0] == '-') {
    fail(ErrorKind::config, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return d;
}

inline std::uint64_t parse_u64(const ManifestMap& m, const std::string& key) { return parse_u64(key, m.at(key)); }

inline bool parse_bool(const ManifestMap& m, const std::string& key) {
  const std::string& v = m.at(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::config, key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> seeds;
  for (const auto& tok : split(v, ',')) seeds.push_back(parse_u64(key, tok));
  return seeds;
}

}  // namespace detail

/// Converts a key/value map into a validated manifest. `env_seed`, when
/// present, replaces the seed list (the NETAUG_SEED override).
inline RunManifest manifest_from_map(const ManifestMap& m, const std::optional<std::string>& env_seed = {}) {
  for (const auto& [k, v] : m)
    if (!is_manifest_key(k)) fail(ErrorKind::config, "unknown key '" + k + "'");
  ManifestMap full = default_manifest();
  for (const auto& [k, v] : m) full[k] = v;

  using namespace detail;
  RunManifest r;
  r.run_name = full.at("run_name");
  if (r.run_name.empty() || r.run_name.find_first_of("/\\ ") != std::string::npos) {
    fail(ErrorKind::config, "run_name must be non-empty and contain no slashes or spaces");
  }
  auto& c = r.config;
  c.mode = train_mode_from(full.at("mode"));
  r.layers = parse_layers(full.at("arch"));
  c.r = parse_double(full, "r");
  c.s = parse_u64(full, "s");
  c.alpha = float(parse_double(full, "alpha"));
  c.keep_prob = float(parse_double(full, "keep_prob"));
  c.mixup_alpha = float(parse_double(full, "mixup_alpha"));
  c.label_smoothing = float(parse_double(full, "label_smoothing"));
  c.epochs = parse_u64(full, "epochs");
  c.batch_size = parse_u64(full, "batch_size");
  c.drop_last = parse_bool(full, "drop_last");
  c.opt.lr0 = float(parse_double(full, "lr"));
  c.opt.momentum = float(parse_double(full, "momentum"));
  c.opt.nesterov = parse_bool(full, "nesterov");
  c.opt.weight_decay = float(parse_double(full, "weight_decay"));
  c.allow_base_in_sampling = parse_bool(full, "allow_base_in_sampling");
  const std::string aws = full.at("aug_weight_scale");
  if (aws != "alpha" && aws != "one") fail(ErrorKind::config, "aug_weight_scale must be alpha or one");
  c.aug_weight_scale = aws == "alpha" ? AugWeightScale::alpha : AugWeightScale::one;
  const std::string fan = full.at("init_fan");
  if (fan != "max" && fan != "base") fail(ErrorKind::config, "init_fan must be max or base");
  c.init_fan = fan == "max" ? InitFan::max : InitFan::base;
  if (!(c.alpha >= 0.0f)) fail(ErrorKind::config, "alpha must be >= 0");
  c.validate();

  auto& d = r.data;
  d.kind = full.at("dataset");
  if (d.kind != "spirals" && d.kind != "idx" && d.kind != "csv") {
    fail(ErrorKind::config, "dataset must be spirals, idx or csv");
  }
  d.data_seed = parse_u64(full, "data_seed");
  d.spirals.per_class = parse_u64(full, "spiral_per_class");
  d.spiral_test_per_class = parse_u64(full, "spiral_test_per_class");
  d.spirals.classes = parse_u64(full, "spiral_classes");
  d.spirals.noise = parse_double(full, "spiral_noise");
  d.spirals.sweep = parse_double(full, "spiral_sweep");
  d.train_images = full.at("train_images");
  d.train_labels = full.at("train_labels");
  d.test_images = full.at("test_images");
  d.test_labels = full.at("test_labels");
  d.classes = parse_u64(full, "classes");
  d.flatten = parse_bool(full, "flatten");
  d.train_csv = full.at("train_csv");
  d.test_csv = full.at("test_csv");
  d.label_column = full.at("label_column");
  if (d.kind == "idx" && (d.train_images.empty() || d.train_labels.empty() || d.test_images.empty() ||
                          d.test_labels.empty())) {
    fail(ErrorKind::config, "idx dataset needs train_images, train_labels, test_images and test_labels");
  }
  if (d.kind == "csv" && (d.train_csv.empty() || d.test_csv.empty())) {
    fail(ErrorKind::config, "csv dataset needs train_csv and test_csv");
  }
  if (d.kind == "idx" && (d.train_images == d.test_images || d.train_labels == d.test_labels)) {
    fail(ErrorKind::config, "train and test IDX files must differ");
  }
  if (d.kind == "csv" && d.train_csv == d.test_csv) fail(ErrorKind::config, "train and test CSV files must differ");
  if (d.kind == "spirals" && d.spiral_test_per_class == 0) fail(ErrorKind::config, "spiral_test_per_class must be > 0");

  r.out_dir = full.at("out_dir");
  if (r.out_dir.empty()) fail(ErrorKind::config, "out_dir must not be empty");
  r.seeds = parse_seed_list("seeds", env_seed ? *env_seed : full.at("seeds"));
  if (r.seeds.empty()) fail(ErrorKind::config, "seed list is empty");
  return r;
}

inline std::optional<std::string> env_seed_override() {
  if (const char* v = std::getenv("NETAUG_SEED"); v && *v) return std::string(v);
  return std::nullopt;
}

/// Train and test splits described by `spec`, tagged with their split.
inline std::pair<Dataset, Dataset> load_datasets(const DataSpec& spec) {
  std::pair<Dataset, Dataset> out;
  if (spec.kind == "spirals") {
    out = gen_spirals_split(spec.spirals, spec.spiral_test_per_class, spec.data_seed);
  } else if (spec.kind == "idx") {
    out.first = load_idx(spec.train_images, spec.train_labels, spec.classes, Split::train);
    out.second = load_idx(spec.test_images, spec.test_labels, spec.classes, Split::test);
  } else {
    out = load_csv_splits(spec.train_csv, spec.test_csv, spec.label_column);
  }
  if (spec.flatten) {
    out.first = out.first.flattened();
    out.second = out.second.flattened();
  }
  out.first.split = Split::train;
  out.second.split = Split::test;
  return out;
}

inline ArchSpec arch_for(const RunManifest& m, const Dataset& train_data) {
  ArchSpec arch{train_data.sample_shape(), train_data.classes, m.layers};
  validate(arch);
  return arch;
}

}  // namespace netaug
