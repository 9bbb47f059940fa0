// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "entprop/corruption.hpp"
#include "entprop/dataset.hpp"
#include "entprop/evaluation.hpp"
#include "entprop/model.hpp"
#include "entprop/trainer.hpp"

namespace entprop {

enum class Precision { Float, Double };
enum class DataSource { Synthetic, Cifar100 };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  SyntheticSpec synthetic;
  std::size_t test_samples_per_class = 100;
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  /// Use only the first `limit` records of each split (0 = all).
  std::size_t limit = 0;
};

struct EvalConfig {
  std::vector<CorruptionSpec> suite = full_suite();
  std::uint64_t corruption_seed = 0;
  int sa_every = 1;  // epochs between SA measurements; 0 = final epoch only
  int ra_every = 0;  // epochs between RA measurements; 0 = final epoch only
  bool pgd = true;
  PgdEvalConfig pgd_config;
  bool frechet = true;
  TransformConfig frechet_transform;
};

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;  // relative paths resolve against the output root
  Precision precision = Precision::Float;
  DataConfig data;
  ModelSpec model;
  TrainerConfig trainer;
  EvalConfig eval;
  /// Keys given explicitly in the file ("attack.epsilon", ...).
  std::vector<std::string> explicit_keys;

  bool is_explicit(std::string_view key) const;
  void validate() const;
  /// Every key with its resolved value; parse(serialize()) reproduces the config.
  std::string serialize() const;

  /// Re-derives attack.epsilon/alpha from the schedule unless set explicitly (EntProp only).
  void resolve_attack_defaults();
};

/// Flat INI: [section] headers, key = value lines, '#' or ';' comments.
/// Unknown sections or keys and a missing trainer.method are Config errors naming the key.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// $ENTPROP_OUTPUT_ROOT if set, else the working directory.
std::filesystem::path output_root();
/// Absolute output directory of an experiment (default "runs/<name>").
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg);

std::string to_string(Precision p);
std::string to_string(DataSource s);

}  // namespace entprop
