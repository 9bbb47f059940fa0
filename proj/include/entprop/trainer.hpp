// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "entprop/attack.hpp"
#include "entprop/dataset.hpp"
#include "entprop/model.hpp"
#include "entprop/optimizer.hpp"
#include "entprop/rng.hpp"
#include "entprop/selection.hpp"

namespace entprop {

enum class Method { Vanilla, MixProp, AdvProp, FastAdvProp, EntProp };

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Labels used for the auxiliary loss when the selected inputs are mixed.
enum class AdvLabelMode { Mixed, OriginalA };
/// Labels used by label-dependent uncertainty metrics on mixed inputs.
enum class UncertaintyLabel { Primary, Mixed };

struct TrainerConfig {
  Method method = Method::EntProp;
  double k = 0.2;
  int n = 1;
  double p_adv = 0.2;
  double mixup_alpha = 1.0;
  bool use_mixup = true;
  bool use_free = true;
  /// epsilon and alpha of the training attack; its n and free flag come from
  /// `n`, `use_free` and the method.
  AttackConfig attack;
  UncertaintyMetric uncertainty = UncertaintyMetric::Entropy;
  UncertaintyLabel uncertainty_label = UncertaintyLabel::Primary;
  AdvLabelMode adv_label_mode = AdvLabelMode::Mixed;
  AttackBNMode attack_bn_mode = AttackBNMode::TrainFrozen;
  OptimizerConfig optimizer;
  int epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool checked = false;

  /// Method defaults: AdvProp n=5, eps=4, alpha=1, non-free; FastAdvProp n=1,
  /// eps=1, alpha=1, p_adv=0.2; EntProp eps/alpha from epsilon_schedule(n);
  /// MixProp mixup on the auxiliary branch; Vanilla plain.
  static TrainerConfig defaults_for(Method m);
  void validate() const;
};

/// Running mean/sd accumulator.
struct EntropyStats {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::uint64_t count = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++count;
  }
  void add(const std::vector<double>& vs) {
    for (double v : vs) add(v);
  }
  void merge(const EntropyStats& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    count += o.count;
  }
  double mean() const { return count ? sum / static_cast<double>(count) : std::nan(""); }
  /// Population standard deviation.
  double sd() const {
    if (!count) return std::nan("");
    const double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(count) - m * m));
  }
};

struct StepReport {
  double clean_loss = 0.0;  // mean per-sample loss on the main branch
  double aux_loss = 0.0;    // mean per-sample loss on the auxiliary branch (0 if empty)
  double total_loss = 0.0;  // normalize_total_loss(...)
  std::size_t batch_size = 0;
  std::size_t aux_count = 0;
  EntropyStats clean_entropy;
  EntropyStats transformed_entropy;
  std::vector<std::int64_t> selected_source_indices;
  std::uint64_t forward_count = 0;   // forward sample passes
  std::uint64_t backward_count = 0;  // backward sample passes
  bool attack_invoked = false;
};

/// (batch_size * main_mean + sum(aux)) / (batch_size + aux_count).
double normalize_total_loss(double main_mean, const std::vector<double>& aux_losses, std::size_t batch_size);

/// Per-epoch cost in units of N: Vanilla 1, AdvProp 2+n, FastAdvProp 1+p_adv,
/// MixProp 2, EntProp 1+k*n (1+k when the free attack is disabled).
double theoretical_cost(Method method, double k, int n, double p_adv, bool use_free = true);
double theoretical_cost(const TrainerConfig& cfg);

/// Random streams owned by one trainer.
struct TrainerRngs {
  Rng mixup;
  Rng attack;

  explicit TrainerRngs(std::uint64_t seed) : mixup(substream(seed, "mixup")), attack(substream(seed, "attack")) {}
};

template <typename T>
struct TrainerState {
  Optimizer<T> optimizer;
  TrainerRngs rngs;

  explicit TrainerState(const TrainerConfig& cfg) : optimizer(cfg.optimizer), rngs(cfg.seed) {}
};

/// One optimizer update. Dispatches on cfg.method.
template <typename T>
StepReport train_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr);

template <typename T>
StepReport vanilla_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr);
template <typename T>
StepReport mixprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr);
template <typename T>
StepReport advprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr);
template <typename T>
StepReport fast_advprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state,
                             double lr);
/// Mix (optional) -> main forward with loss and per-sample uncertainty ->
/// input gradient -> top-k selection -> free PGD on the selection -> auxiliary
/// forward -> one update on the normalized total loss.
template <typename T>
StepReport entprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double clean_loss = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  EntropyStats clean_entropy;
  EntropyStats transformed_entropy;
  std::uint64_t selected = 0;
  std::uint64_t forward_samples = 0;
  std::uint64_t backward_samples = 0;
  std::size_t steps = 0;
  std::size_t dataset_size = 0;
  double measured_cost = 0.0;  // forward sample passes / dataset size
  std::optional<double> sa;
  std::optional<double> ra;
  std::optional<double> h_score;
};

template <typename T>
struct TrainingHooks {
  /// May fill sa/ra/h_score; runs after every epoch.
  std::function<void(Model<T>&, EpochRecord&)> on_epoch_end;
  /// Selected sample ids of every step, for external recounts.
  std::function<void(int epoch, std::size_t step, const StepReport&)> on_step;
};

struct RunResult {
  std::vector<EpochRecord> records;
  SelectionCounter selection;
};

/// Epoch loop with the configured schedule. A non-finite loss aborts with ErrorCode::Numeric.
template <typename T>
RunResult run_training(Model<T>& model, const Dataset& data, const TrainerConfig& cfg, const TrainingHooks<T>& hooks = {});

}  // namespace entprop
