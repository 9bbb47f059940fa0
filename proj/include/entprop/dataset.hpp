// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "entprop/archive.hpp"
#include "entprop/tensor.hpp"

namespace entprop {

/// Images (N, C_in, H, W), or (N, D) for vector tasks, with values in [0, 1].
struct Dataset {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::int64_t> sample_ids;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  std::size_t sample_size() const { return images.size() / std::max<std::size_t>(1, size()); }

  /// Throws unless labels are in range, ids unique and pixels in [0, 1].
  void validate() const;

  void save(Archive& archive) const;
  static Dataset load(const Archive& archive);
};

/// Parses CIFAR-100 binary records: coarse label byte, fine label byte, then
/// 3072 pixel bytes (3 planes of 32x32, row-major). Uses the fine label.
Dataset load_cifar100_binary(const std::filesystem::path& path);
Dataset parse_cifar100_binary(std::span<const std::uint8_t> bytes);

struct SyntheticSpec {
  std::size_t classes = 3;
  /// {D} for Gaussian clusters in vector mode, {C, H, W} for textured images.
  Shape sample_shape{1, 16, 16};
  std::size_t samples_per_class = 100;
  double spread = 0.15;
  std::uint64_t seed = 0;
};

/// Deterministic class-balanced task. Vector mode: isotropic Gaussian clusters
/// around per-class centers. Image mode: oriented sinusoidal gratings (one
/// orientation/frequency per class) with random phase and contrast jitter plus
/// pixel noise of standard deviation `spread`. Everything is clamped to [0, 1].
/// `split` selects an independent draw from the same distribution (0 = train, 1 = test).
Dataset synth_clusters(const SyntheticSpec& spec, std::uint64_t split = 0);

struct Batch {
  Tensor<float> x;
  std::vector<int> labels;
  std::vector<std::int64_t> sample_ids;

  std::size_t size() const { return labels.size(); }
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows);

/// Row order for one epoch; a bijection keyed by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// Batches covering the epoch in shuffled order, final partial batch included.
std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

}  // namespace entprop
