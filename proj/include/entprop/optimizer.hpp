// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "entprop/model.hpp"

namespace entprop {

enum class OptimizerKind { SGD, Adam };
enum class LrSchedule { Constant, Cosine, Step };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SGD;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LrSchedule schedule = LrSchedule::Cosine;
  /// Step schedule: multiply by step_gamma every step_every epochs (if > 0) and at each milestone.
  int step_every = 0;
  double step_gamma = 0.1;
  std::vector<int> milestones;

  void validate() const;
};

/// Learning rate for a zero-based epoch. Cosine: lr/2 * (1 + cos(pi * epoch / epochs)).
double learning_rate(const OptimizerConfig& cfg, int epoch, int epochs);

/// SGD with momentum or Adam, both with L2 weight decay added to the gradient.
/// Parameters absent from the gradient map are skipped entirely (no decay,
/// no momentum), so a branch that did not run in a step is left bit-identical.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  void step(Model<T>& model, const GradientMap<T>& grads, double lr);
  std::size_t steps() const { return steps_; }

 private:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t t = 0;
  };
  OptimizerConfig cfg_;
  std::map<std::size_t, Slot> slots_;
  std::size_t steps_ = 0;
};

}  // namespace entprop
