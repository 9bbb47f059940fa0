// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "entprop/autograd.hpp"

namespace entprop {

enum class Route { Main, Aux };
enum class Mode { Train, Eval };

/// Per-channel batch-normalization parameters and running statistics.
template <typename T>
struct BNState {
  Parameter<T> gamma;
  Parameter<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BNState() = default;
  explicit BNState(std::size_t channels, T momentum = T(0.1), T eps = T(1e-5));

  std::size_t channels() const { return running_mean.size(); }
};

/// Options for a single BN pass. `update_stats` only matters in Train mode.
struct BNOptions {
  Mode mode = Mode::Train;
  bool update_stats = true;
};

/// Normalizes x[N, C, ...] over every axis except 1. Train mode uses the biased
/// batch variance for normalization and folds the unbiased one into running_var:
///   running <- (1 - momentum) * running + momentum * batch
template <typename T>
Var<T> bn_forward(Var<T> x, BNState<T>& state, BNOptions opts);

/// Main/auxiliary BN pair. A pass only ever touches the routed state.
template <typename T>
struct DualNormLayer {
  BNState<T> mbn;
  BNState<T> abn;

  DualNormLayer() = default;
  explicit DualNormLayer(std::size_t channels) : mbn(channels), abn(channels) {}

  BNState<T>& routed(Route r) { return r == Route::Main ? mbn : abn; }
  const BNState<T>& routed(Route r) const { return r == Route::Main ? mbn : abn; }

  /// Deep copy of every MBN field into the ABN; parameter ids are preserved.
  void clone_abn_from_mbn();
};

template <typename T>
Var<T> dual_forward(Var<T> x, DualNormLayer<T>& layer, Route route, BNOptions opts) {
  return bn_forward(x, layer.routed(route), opts);
}

}  // namespace entprop
