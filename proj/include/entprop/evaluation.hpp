// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entprop/attack.hpp"
#include "entprop/corruption.hpp"
#include "entprop/dataset.hpp"
#include "entprop/model.hpp"
#include "entprop/trainer.hpp"

namespace entprop {

/// Index of the largest logit per row; ties go to the lowest class.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

/// Main-route Eval logits, computed in chunks of `batch_size` rows.
template <typename T>
Tensor<T> predict_dataset(Model<T>& model, const Tensor<float>& images, std::size_t batch_size = 256);

/// Fraction of argmax-correct predictions (Main route, Eval statistics).
template <typename T>
double standard_accuracy(Model<T>& model, const Dataset& test);

/// Equally weighted mean of standard_accuracy over each corrupted copy.
template <typename T>
double robust_accuracy(Model<T>& model, const Dataset& test, std::span<const CorruptionSpec> suite,
                       std::uint64_t seed = 0);

/// Harmonic mean 2 sa ra / (sa + ra); 0 when both are 0.
double h_score(double sa, double ra);

/// epsilon and alpha in 1/255 units. epsilon = 0 evaluates the clean inputs.
struct PgdEvalConfig {
  int steps = 20;
  double epsilon = 1.0;
  double alpha = 0.25;
  std::size_t batch_size = 256;
};

/// Accuracy under an l-inf PGD attack against the Main route with running statistics.
template <typename T>
double pgd_robust_accuracy(Model<T>& model, const Dataset& test, const PgdEvalConfig& cfg = {});

// ---- Frechet distance --------------------------------------------------------

struct GaussianSummary {
  std::vector<double> mean;
  std::vector<double> covariance;  // (D, D) row-major, symmetric
  std::size_t count = 0;

  std::size_t dim() const { return mean.size(); }
};

/// Sample mean and unbiased covariance of (N, D) rows. With N < D + 1 the
/// covariance is rank deficient and `ridge` is added to its diagonal.
template <typename T>
GaussianSummary fit_gaussian(const Tensor<T>& features, double ridge = 1e-6);

/// Squared 2-Wasserstein distance between Gaussian fits:
/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), clamped at 0.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

/// Transformations whose feature-space displacement is compared.
enum class TransformKind { MixUp, Pgd, EntProp };

struct TransformConfig {
  TransformKind kind = TransformKind::EntProp;
  double mixup_alpha = 1.0;
  double k = 0.5;  // EntProp: fraction of each batch kept (highest entropy)
  int n = 1;
  double epsilon = 1.0;
  double alpha = 1.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// Transformed inputs built batch by batch the way training builds them.
/// MixUp: mixed batch. Pgd: PGD from the clean batch. EntProp: MixUp, then the
/// top-k entropy rows, then free PGD seeded with the Main-route input gradient.
/// Gradients and entropies are taken with running statistics, so the model is not changed.
template <typename T>
Tensor<float> transform_inputs(Model<T>& model, const Dataset& data, const TransformConfig& cfg);

/// Frechet distance between Main-route Eval penultimate features of `data`
/// and of transform_inputs(model, data, cfg).
template <typename T>
double feature_frechet(Model<T>& model, const Dataset& data, const TransformConfig& cfg);

// ---- diagnostics ---------------------------------------------------------------

/// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

/// epoch,clean_mean,clean_sd,transformed_mean,transformed_sd
std::string entropy_csv(const std::vector<EpochRecord>& records);
/// epoch,sa,ra,h_score (empty cells where a metric was not computed)
std::string metrics_csv(const std::vector<EpochRecord>& records);

/// Writes entropy_per_epoch.csv, selection_bias.csv and metrics.csv into `dir`.
void export_diagnostics(const RunResult& run, const std::filesystem::path& dir);

}  // namespace entprop
