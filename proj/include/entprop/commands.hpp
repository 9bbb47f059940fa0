// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "entprop/config.hpp"
#include "entprop/trainer.hpp"

namespace entprop {

/// Progress sink for human-readable lines.
using LogFn = std::function<void(const std::string&)>;

/// One JSON object per epoch, with raw entropy sums so epochs can be re-aggregated exactly.
std::string record_to_json(const EpochRecord& r);
EpochRecord record_from_json(const std::string& line);

/// Train/test splits named by the config.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& cfg);

/// Trains and writes into the resolved output directory:
///   config.effective.ini, records.jsonl, model.ckpt, entropy_per_epoch.csv,
///   selection_bias.csv, metrics.csv, summary.json.
/// Returns the summary JSON text.
std::string run_experiment(const ExperimentConfig& cfg, const LogFn& log = {});

std::string cmd_train(const std::filesystem::path& config_path, const LogFn& log = {});

/// Evaluates a checkpoint on the config's test split; writes eval_summary.json
/// into the config's output directory and returns it. RA and H_score are
/// omitted when the corruption suite is empty.
std::string cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& config_path,
                     const LogFn& log = {});

/// One run per (k, n) under <output>/sweep/k<k>_n<n>, plus <output>/sweep.csv.
/// Empty grids fall back to the config's own value.
std::string cmd_sweep(const std::filesystem::path& config_path, const std::vector<double>& ks,
                      const std::vector<int>& ns, const LogFn& log = {});

/// Comparison table over finished runs, sorted by H_score (descending), written
/// as report.csv and report.txt with figure-ready CSVs into `out_dir`.
/// Returns the text table.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir,
                       const LogFn& log = {});

}  // namespace entprop
