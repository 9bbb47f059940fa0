// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "entprop/model.hpp"

namespace entprop {

/// epsilon and alpha are in units of 1/255 of the [0, 1] input range.
struct AttackConfig {
  int n = 1;
  double epsilon = 1.0;
  double alpha = 1.0;
  bool free_first_step = true;

  void validate() const;
};

/// (epsilon, alpha) for an n-step attack: (n + 1, 1), except (1, 1) when n = 1.
std::pair<double, double> epsilon_schedule(int n);

/// How BN behaves in the forwards an attack makes on the routed branch.
enum class AttackBNMode {
  TrainFrozen,  // batch statistics, running statistics left alone
  TrainUpdate,  // batch statistics, running statistics updated
  Eval,         // running statistics
};

/// Plain labels (lambda = 1, y_b empty) or a mixed pair.
struct LabelSpec {
  std::vector<int> y_a;
  std::vector<int> y_b;
  double lambda = 1.0;

  static LabelSpec plain(std::vector<int> y) { return LabelSpec{std::move(y), {}, 1.0}; }
  bool mixed() const { return !y_b.empty() && lambda != 1.0; }
};

struct AttackOptions {
  Route route = Route::Aux;
  AttackBNMode bn_mode = AttackBNMode::TrainFrozen;
};

template <typename T>
struct AttackResult {
  Tensor<T> x_adv;
  /// Model passes made inside the attack (calls are per batch, samples per sample).
  PassCounter passes;
};

/// Gradient of the batch-mean attack loss w.r.t. the input; one forward and one backward.
template <typename T>
Tensor<T> input_gradient(Model<T>& model, const Tensor<T>& x, const LabelSpec& labels, AttackOptions opts);

/// l-inf PGD from x0 without random start:
///   delta <- clip(delta + alpha * sign(grad), -eps, eps),  x = clamp(x0 + delta, 0, 1).
/// With cfg.free_first_step the first gradient is `seed_grad` and costs no pass,
/// so an n-step attack makes n - 1 forward/backward pairs instead of n.
template <typename T>
AttackResult<T> pgd(Model<T>& model, const Tensor<T>& x0, const LabelSpec& labels, const AttackConfig& cfg,
                    const Tensor<T>* seed_grad, AttackOptions opts = {});

/// Additional (forward, backward) batch passes of an attack run.
template <typename T>
std::pair<std::uint64_t, std::uint64_t> count_passes(const AttackResult<T>& run) {
  return {run.passes.forward_calls, run.passes.backward_calls};
}

}  // namespace entprop
