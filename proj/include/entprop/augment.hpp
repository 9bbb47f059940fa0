// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "entprop/autograd.hpp"
#include "entprop/rng.hpp"

namespace entprop {

template <typename T>
struct MixedBatch {
  Tensor<T> x_m;
  std::vector<int> y_a;
  std::vector<int> y_b;
  double lambda = 1.0;
  std::vector<std::size_t> perm;
  std::vector<std::int64_t> source_indices;
};

/// Half-open pixel box [y0, y1) x [x0, x1).
struct Box {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  std::size_t area() const { return (y1 - y0) * (x1 - x0); }
};

/// x_m[i] = lambda * x[i] + (1 - lambda) * x[perm[i]].
template <typename T>
MixedBatch<T> mixup_with(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids,
                         double lambda, std::vector<std::size_t> perm);

/// One lambda ~ Beta(alpha, alpha) per batch and a uniform permutation.
template <typename T>
MixedBatch<T> mixup(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids, double alpha,
                    Rng& rng);

/// Pastes `box` from the partner image; lambda = 1 - box area / image area.
template <typename T>
MixedBatch<T> cutmix_with(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids, Box box,
                          std::vector<std::size_t> perm);

/// Standard CutMix box: lambda ~ Beta(alpha, alpha), side ratio sqrt(1 - lambda),
/// uniform center, clipped to the image; lambda is then recomputed from the area.
template <typename T>
MixedBatch<T> cutmix(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids, double alpha,
                     Rng& rng);

/// Per-sample lambda * CE(y_a) + (1 - lambda) * CE(y_b).
template <typename T>
Var<T> mixed_loss_per_sample(Var<T> logits, std::span<const int> y_a, std::span<const int> y_b, double lambda);

/// Batch mean of mixed_loss_per_sample.
template <typename T>
Var<T> mixed_loss(Var<T> logits, std::span<const int> y_a, std::span<const int> y_b, double lambda) {
  return mean(mixed_loss_per_sample(logits, y_a, y_b, lambda));
}

}  // namespace entprop
