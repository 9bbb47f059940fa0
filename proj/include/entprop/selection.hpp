// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "entprop/tensor.hpp"

namespace entprop {

/// Every metric is oriented so that a larger score means more uncertain.
enum class UncertaintyMetric { Entropy, CrossEntropy, Confidence, LogitMargin };

std::string to_string(UncertaintyMetric m);
UncertaintyMetric parse_uncertainty_metric(const std::string& s);
bool needs_labels(UncertaintyMetric m);

/// H_i = -sum_y p_i(y) ln p_i(y), with 0 ln 0 = 0. Rows must be distributions.
template <typename T>
std::vector<double> entropy(const Tensor<T>& probs);

/// Scores from logits. Entropy: H(softmax). CrossEntropy: -ln p(true).
/// Confidence: -max p. LogitMargin: max_{y != true} p(y) - p(true).
/// `labels` may be empty for Entropy and Confidence.
template <typename T>
std::vector<double> uncertainty_score(const Tensor<T>& logits, std::span<const int> labels, UncertaintyMetric metric);

/// lambda-weighted label pair for mixed samples; label-free metrics ignore the pair.
template <typename T>
std::vector<double> uncertainty_score_mixed(const Tensor<T>& logits, std::span<const int> y_a, std::span<const int> y_b,
                                            double lambda, UncertaintyMetric metric);

/// round(k * n) with round-half-up, clamped to [0, n].
std::size_t selection_size(double k, std::size_t n);

/// Indices of the selection_size(k, N) largest scores, in descending score
/// order, ties broken by lower index.
std::vector<std::size_t> top_k_select(std::span<const double> scores, double k);

/// Per-sample count of how often each dataset sample was selected.
class SelectionCounter {
 public:
  SelectionCounter() = default;
  explicit SelectionCounter(std::size_t dataset_size) : counts_(dataset_size, 0) {}

  void record(std::span<const std::int64_t> source_indices);
  const std::vector<std::uint64_t>& counts() const { return counts_; }
  /// selection count -> number of samples with that count (the bias histogram).
  std::map<std::uint64_t, std::uint64_t> histogram() const;

  /// CSV with header "sample_index,selection_count".
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint64_t> counts_;
};

}  // namespace entprop
