// SPDX-License-Identifier: Apache-2.0
#include "entprop/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "entprop/augment.hpp"

namespace entprop {

std::string to_string(Method m) {
  switch (m) {
    case Method::Vanilla: return "vanilla";
    case Method::MixProp: return "mixprop";
    case Method::AdvProp: return "advprop";
    case Method::FastAdvProp: return "fast_advprop";
    case Method::EntProp: return "entprop";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::Vanilla, Method::MixProp, Method::AdvProp, Method::FastAdvProp, Method::EntProp})
    if (to_string(m) == s) return m;
  fail(ErrorCode::Config, "unknown method '" + s + "' (vanilla, mixprop, advprop, fast_advprop, entprop)");
}

TrainerConfig TrainerConfig::defaults_for(Method m) {
  TrainerConfig c;
  c.method = m;
  switch (m) {
    case Method::Vanilla:
      c.k = 0.0;
      c.use_mixup = false;
      c.use_free = false;
      break;
    case Method::MixProp:
      c.k = 0.0;
      c.use_mixup = true;
      c.use_free = false;
      break;
    case Method::AdvProp:
      c.n = 5;
      c.attack = AttackConfig{5, 4.0, 1.0, false};
      c.use_mixup = false;
      c.use_free = false;
      break;
    case Method::FastAdvProp:
      c.n = 1;
      c.p_adv = 0.2;
      c.attack = AttackConfig{1, 1.0, 1.0, true};
      c.use_mixup = false;
      c.use_free = true;
      break;
    case Method::EntProp: {
      c.k = 0.2;
      c.n = 1;
      const auto [eps, alpha] = epsilon_schedule(c.n);
      c.attack = AttackConfig{c.n, eps, alpha, true};
      c.use_mixup = true;
      c.use_free = true;
      break;
    }
  }
  return c;
}

namespace {

bool uses_attack(const TrainerConfig& c) {
  switch (c.method) {
    case Method::AdvProp:
    case Method::FastAdvProp: return true;
    case Method::EntProp: return c.use_free && c.k > 0.0;
    default: return false;
  }
}

AttackConfig resolved_attack(const TrainerConfig& c) {
  AttackConfig a = c.attack;
  a.n = c.n;
  a.free_first_step = c.method != Method::AdvProp;
  return a;
}

}  // namespace

void TrainerConfig::validate() const {
  require(epochs >= 0, ErrorCode::Config, "trainer.epochs must be non-negative");
  require(batch_size >= 2, ErrorCode::Config, "trainer.batch_size must be at least 2");
  require(n >= 1, ErrorCode::Config, "trainer.n must be at least 1");
  require(k >= 0.0 && k <= 1.0, ErrorCode::Config, "trainer.k must lie in [0, 1]");
  require(p_adv >= 0.0 && p_adv <= 1.0, ErrorCode::Config, "trainer.p_adv must lie in [0, 1]");
  const bool mixes = method == Method::MixProp || (use_mixup && (method == Method::EntProp || method == Method::Vanilla));
  require(!mixes || mixup_alpha > 0.0, ErrorCode::Config, "trainer.mixup_alpha must be positive");
  if (uses_attack(*this)) {
    try {
      resolved_attack(*this).validate();
    } catch (const Error& e) {
      fail(ErrorCode::Config, e.what());
    }
  }
  optimizer.validate();
}

double normalize_total_loss(double main_mean, const std::vector<double>& aux_losses, std::size_t batch_size) {
  require(batch_size >= 1, ErrorCode::InvalidArgument, "normalize_total_loss: empty batch");
  require(aux_losses.size() <= batch_size, ErrorCode::InvalidArgument,
          "normalize_total_loss: more auxiliary samples than batch samples");
  const double b = static_cast<double>(batch_size);
  const double aux = std::accumulate(aux_losses.begin(), aux_losses.end(), 0.0);
  return (b * main_mean + aux) / (b + static_cast<double>(aux_losses.size()));
}

double theoretical_cost(Method method, double k, int n, double p_adv, bool use_free) {
  switch (method) {
    case Method::Vanilla: return 1.0;
    case Method::AdvProp: return 2.0 + n;
    case Method::FastAdvProp: return 1.0 + p_adv;
    case Method::MixProp: return 2.0;
    case Method::EntProp: return use_free ? 1.0 + k * n : 1.0 + k;
  }
  return 0.0;
}

double theoretical_cost(const TrainerConfig& cfg) {
  return theoretical_cost(cfg.method, cfg.k, cfg.n, cfg.p_adv, cfg.use_free);
}

namespace {

template <typename T>
struct PassResult {
  GradientMap<T> grads;
  Tensor<T> logits;
  Tensor<T> input_grad;
  std::vector<double> losses;  // per sample
  double mean_loss = 0.0;
};

template <typename T>
Var<T> per_sample_loss(Var<T> logits, const LabelSpec& labels) {
  if (labels.mixed()) return mixed_loss_per_sample(logits, labels.y_a, labels.y_b, labels.lambda);
  return cross_entropy(logits, std::span<const int>(labels.y_a));
}

// Divergence surfaces here, before non-finite logits reach the entropy code.
void require_finite_loss(double v, const char* branch) {
  require(std::isfinite(v), ErrorCode::Numeric, std::string("training diverged: non-finite ") + branch + " loss");
}

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

// Main route: minimizes weight * mean(loss).
template <typename T>
PassResult<T> main_pass(Model<T>& model, const Tensor<T>& x, const LabelSpec& labels, double weight,
                        bool want_input_grad, bool checked) {
  Graph<T> g(checked);
  Var<T> xv = g.input(x, want_input_grad);
  auto out = model.forward(g, xv, {Route::Main, Mode::Train, true});
  Var<T> per = per_sample_loss(out.logits, labels);
  Var<T> loss = mean(per);
  if (weight != 1.0) loss = scale(loss, static_cast<T>(weight));
  PassResult<T> r;
  r.grads = g.backward(loss);
  r.logits = out.logits.value();
  if (want_input_grad) r.input_grad = g.grad(xv);
  r.losses = to_doubles(per.value());
  r.mean_loss = std::accumulate(r.losses.begin(), r.losses.end(), 0.0) / static_cast<double>(r.losses.size());
  require_finite_loss(r.mean_loss, "main");
  return r;
}

// Aux route: minimizes weight * sum(loss).
template <typename T>
PassResult<T> aux_pass(Model<T>& model, const Tensor<T>& x, const LabelSpec& labels, double weight, bool checked) {
  Graph<T> g(checked);
  Var<T> xv = g.input(x, false);
  auto out = model.forward(g, xv, {Route::Aux, Mode::Train, true});
  Var<T> per = per_sample_loss(out.logits, labels);
  PassResult<T> r;
  r.grads = g.backward(scale(sum(per), static_cast<T>(weight)));
  r.logits = out.logits.value();
  r.losses = to_doubles(per.value());
  r.mean_loss = std::accumulate(r.losses.begin(), r.losses.end(), 0.0) / static_cast<double>(r.losses.size());
  require_finite_loss(r.mean_loss, "auxiliary");
  return r;
}

LabelSpec subset(const LabelSpec& labels, std::span<const std::size_t> rows, bool keep_mix) {
  LabelSpec out;
  for (std::size_t i : rows) out.y_a.push_back(labels.y_a[i]);
  if (keep_mix && labels.mixed()) {
    for (std::size_t i : rows) out.y_b.push_back(labels.y_b[i]);
    out.lambda = labels.lambda;
  }
  return out;
}

// A Train-mode BN pass needs two samples, so a lone auxiliary sample is dropped.
std::size_t aux_size(double fraction, std::size_t batch) {
  const std::size_t m = selection_size(fraction, batch);
  return m < 2 ? 0 : m;
}

template <typename T>
void check_batch(const Model<T>& model, const Batch& batch) {
  require(batch.size() >= 2, ErrorCode::InvalidArgument, "train step: batch needs at least 2 samples");
  const Shape& s = batch.x.shape();
  require(Shape(s.begin() + 1, s.end()) == model.spec().input_shape, ErrorCode::Shape,
          "train step: batch shape " + shape_str(s) + " does not match the model input");
}

void finish(StepReport& r, const PassCounter& before, const PassCounter& after, const std::vector<double>& aux) {
  r.forward_count = after.forward_samples - before.forward_samples;
  r.backward_count = after.backward_samples - before.backward_samples;
  r.aux_count = aux.size();
  r.aux_loss = aux.empty() ? 0.0 : std::accumulate(aux.begin(), aux.end(), 0.0) / static_cast<double>(aux.size());
  r.total_loss = normalize_total_loss(r.clean_loss, aux, r.batch_size);
}

template <typename T>
void add_entropy(EntropyStats& stats, const Tensor<T>& logits) {
  stats.add(entropy(softmax_rows(logits)));
}

}  // namespace

template <typename T>
StepReport vanilla_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr) {
  check_batch(model, batch);
  const PassCounter before = model.counter();
  StepReport r;
  r.batch_size = batch.size();
  Tensor<T> x = batch.x.template cast<T>();
  LabelSpec labels = LabelSpec::plain(batch.labels);
  if (cfg.use_mixup) {
    auto mb = mixup(x, batch.labels, batch.sample_ids, cfg.mixup_alpha, state.rngs.mixup);
    x = std::move(mb.x_m);
    labels = LabelSpec{std::move(mb.y_a), std::move(mb.y_b), mb.lambda};
  }
  auto main = main_pass(model, x, labels, 1.0, false, cfg.checked);
  r.clean_loss = main.mean_loss;
  add_entropy(r.clean_entropy, main.logits);
  state.optimizer.step(model, main.grads, lr);
  finish(r, before, model.counter(), {});
  return r;
}

template <typename T>
StepReport mixprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr) {
  check_batch(model, batch);
  const PassCounter before = model.counter();
  StepReport r;
  const std::size_t B = batch.size();
  r.batch_size = B;
  const Tensor<T> x = batch.x.template cast<T>();
  auto mb = mixup(x, batch.labels, batch.sample_ids, cfg.mixup_alpha, state.rngs.mixup);
  const LabelSpec mixed{mb.y_a, mb.y_b, mb.lambda};

  auto main = main_pass(model, x, LabelSpec::plain(batch.labels), 0.5, false, cfg.checked);
  auto aux = aux_pass(model, mb.x_m, mixed, 1.0 / static_cast<double>(2 * B), cfg.checked);
  main.grads += aux.grads;
  r.clean_loss = main.mean_loss;
  add_entropy(r.clean_entropy, main.logits);
  add_entropy(r.transformed_entropy, aux.logits);
  state.optimizer.step(model, main.grads, lr);
  finish(r, before, model.counter(), aux.losses);
  return r;
}

template <typename T>
StepReport advprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr) {
  check_batch(model, batch);
  const PassCounter before = model.counter();
  StepReport r;
  const std::size_t B = batch.size();
  r.batch_size = B;
  const Tensor<T> x = batch.x.template cast<T>();
  const LabelSpec labels = LabelSpec::plain(batch.labels);

  auto main = main_pass(model, x, labels, 0.5, false, cfg.checked);
  const auto adv = pgd(model, x, labels, resolved_attack(cfg), static_cast<const Tensor<T>*>(nullptr),
                       AttackOptions{Route::Aux, cfg.attack_bn_mode});
  r.attack_invoked = true;
  auto aux = aux_pass(model, adv.x_adv, labels, 1.0 / static_cast<double>(2 * B), cfg.checked);
  main.grads += aux.grads;
  r.clean_loss = main.mean_loss;
  add_entropy(r.clean_entropy, main.logits);
  add_entropy(r.transformed_entropy, aux.logits);
  r.selected_source_indices = batch.sample_ids;
  state.optimizer.step(model, main.grads, lr);
  finish(r, before, model.counter(), aux.losses);
  return r;
}

template <typename T>
StepReport fast_advprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state,
                             double lr) {
  check_batch(model, batch);
  const PassCounter before = model.counter();
  StepReport r;
  const std::size_t B = batch.size();
  r.batch_size = B;
  const Tensor<T> x = batch.x.template cast<T>();
  const LabelSpec labels = LabelSpec::plain(batch.labels);

  const std::size_t m = aux_size(cfg.p_adv, B);
  const double denom = static_cast<double>(B + m);
  auto main = main_pass(model, x, labels, m ? static_cast<double>(B) / denom : 1.0, m > 0, cfg.checked);
  r.clean_loss = main.mean_loss;
  add_entropy(r.clean_entropy, main.logits);

  std::vector<double> aux_losses;
  if (m > 0) {
    std::vector<std::size_t> rows(B);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), state.rngs.attack);
    rows.resize(m);
    std::sort(rows.begin(), rows.end());

    const LabelSpec sub = subset(labels, rows, false);
    const Tensor<T> seed = gather_rows(main.input_grad, rows);
    const auto adv = pgd(model, gather_rows(x, rows), sub, resolved_attack(cfg), &seed,
                         AttackOptions{Route::Aux, cfg.attack_bn_mode});
    r.attack_invoked = true;
    auto aux = aux_pass(model, adv.x_adv, sub, 1.0 / denom, cfg.checked);
    main.grads += aux.grads;
    add_entropy(r.transformed_entropy, aux.logits);
    aux_losses = std::move(aux.losses);
    for (std::size_t i : rows) r.selected_source_indices.push_back(batch.sample_ids[i]);
  }
  state.optimizer.step(model, main.grads, lr);
  finish(r, before, model.counter(), aux_losses);
  return r;
}

template <typename T>
StepReport entprop_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr) {
  check_batch(model, batch);
  const PassCounter before = model.counter();
  StepReport r;
  const std::size_t B = batch.size();
  r.batch_size = B;

  Tensor<T> x_m = batch.x.template cast<T>();
  LabelSpec labels = LabelSpec::plain(batch.labels);
  if (cfg.use_mixup) {
    auto mb = mixup(x_m, batch.labels, batch.sample_ids, cfg.mixup_alpha, state.rngs.mixup);
    x_m = std::move(mb.x_m);
    labels = LabelSpec{std::move(mb.y_a), std::move(mb.y_b), mb.lambda};
  }

  const std::size_t m = aux_size(cfg.k, B);
  const bool attack = m > 0 && cfg.use_free;
  const double denom = static_cast<double>(B + m);
  // With m = 0 the weight stays exactly 1 so the update matches a plain step bit for bit.
  auto main = main_pass(model, x_m, labels, m ? static_cast<double>(B) / denom : 1.0, attack, cfg.checked);
  r.clean_loss = main.mean_loss;
  add_entropy(r.clean_entropy, main.logits);

  std::vector<double> aux_losses;
  if (m > 0) {
    const std::vector<double> scores =
        (cfg.uncertainty_label == UncertaintyLabel::Mixed && labels.mixed())
            ? uncertainty_score_mixed(main.logits, labels.y_a, labels.y_b, labels.lambda, cfg.uncertainty)
            : uncertainty_score(main.logits, std::span<const int>(labels.y_a), cfg.uncertainty);
    std::vector<std::size_t> rows = top_k_select(scores, cfg.k);
    rows.resize(m);

    const LabelSpec sub = subset(labels, rows, cfg.adv_label_mode == AdvLabelMode::Mixed);
    Tensor<T> x_a = gather_rows(x_m, rows);
    if (attack) {
      const Tensor<T> seed = gather_rows(main.input_grad, rows);
      x_a = pgd(model, x_a, sub, resolved_attack(cfg), &seed, AttackOptions{Route::Aux, cfg.attack_bn_mode}).x_adv;
      r.attack_invoked = true;
    }
    auto aux = aux_pass(model, x_a, sub, 1.0 / denom, cfg.checked);
    main.grads += aux.grads;
    add_entropy(r.transformed_entropy, aux.logits);
    aux_losses = std::move(aux.losses);
    for (std::size_t i : rows) r.selected_source_indices.push_back(batch.sample_ids[i]);
  }
  state.optimizer.step(model, main.grads, lr);
  finish(r, before, model.counter(), aux_losses);
  return r;
}

template <typename T>
StepReport train_step(Model<T>& model, const Batch& batch, const TrainerConfig& cfg, TrainerState<T>& state, double lr) {
  switch (cfg.method) {
    case Method::Vanilla: return vanilla_step(model, batch, cfg, state, lr);
    case Method::MixProp: return mixprop_step(model, batch, cfg, state, lr);
    case Method::AdvProp: return advprop_step(model, batch, cfg, state, lr);
    case Method::FastAdvProp: return fast_advprop_step(model, batch, cfg, state, lr);
    case Method::EntProp: return entprop_step(model, batch, cfg, state, lr);
  }
  fail(ErrorCode::Internal, "train_step: unhandled method");
}

template <typename T>
RunResult run_training(Model<T>& model, const Dataset& data, const TrainerConfig& cfg, const TrainingHooks<T>& hooks) {
  cfg.validate();
  data.validate();
  require(data.size() > 0, ErrorCode::InvalidArgument, "run_training: empty dataset");
  require(data.sample_shape() == model.spec().input_shape, ErrorCode::Shape,
          "run_training: dataset sample shape " + shape_str(data.sample_shape()) + " does not match the model");
  require(data.class_count == model.spec().class_count, ErrorCode::Shape,
          "run_training: dataset class count differs from the model");

  TrainerState<T> state(cfg);
  RunResult result;
  result.selection = SelectionCounter(data.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = learning_rate(cfg.optimizer, epoch, cfg.epochs);
    rec.dataset_size = data.size();
    const PassCounter before = model.counter();
    double main_sum = 0.0, aux_sum = 0.0, total_sum = 0.0;
    std::size_t main_n = 0, aux_n = 0;

    const auto stream = batches(data, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t s = 0; s < stream.size(); ++s) {
      if (stream[s].size() < 2) continue;  // batch statistics need two samples
      StepReport rep = train_step(model, stream[s], cfg, state, rec.lr);
      if (!std::isfinite(rep.total_loss))
        fail(ErrorCode::Numeric, "training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(s) + " (lr " + std::to_string(rec.lr) + ")");
      main_sum += rep.clean_loss * static_cast<double>(rep.batch_size);
      aux_sum += rep.aux_loss * static_cast<double>(rep.aux_count);
      total_sum += rep.total_loss * static_cast<double>(rep.batch_size);
      main_n += rep.batch_size;
      aux_n += rep.aux_count;
      rec.clean_entropy.merge(rep.clean_entropy);
      rec.transformed_entropy.merge(rep.transformed_entropy);
      rec.selected += rep.selected_source_indices.size();
      result.selection.record(rep.selected_source_indices);
      ++rec.steps;
      if (hooks.on_step) hooks.on_step(epoch, s, rep);
    }

    const PassCounter& after = model.counter();
    rec.forward_samples = after.forward_samples - before.forward_samples;
    rec.backward_samples = after.backward_samples - before.backward_samples;
    rec.measured_cost = static_cast<double>(rec.forward_samples) / static_cast<double>(data.size());
    rec.clean_loss = main_n ? main_sum / static_cast<double>(main_n) : 0.0;
    rec.aux_loss = aux_n ? aux_sum / static_cast<double>(aux_n) : 0.0;
    rec.total_loss = main_n ? total_sum / static_cast<double>(main_n) : 0.0;
    if (hooks.on_epoch_end) hooks.on_epoch_end(model, rec);
    result.records.push_back(std::move(rec));
  }
  return result;
}

#define ENTPROP_INSTANTIATE_TRAINER(T)                                                                              \
  template StepReport train_step(Model<T>&, const Batch&, const TrainerConfig&, TrainerState<T>&, double);        \
  template StepReport vanilla_step(Model<T>&, const Batch&, const TrainerConfig&, TrainerState<T>&, double);      \
  template StepReport mixprop_step(Model<T>&, const Batch&, const TrainerConfig&, TrainerState<T>&, double);      \
  template StepReport advprop_step(Model<T>&, const Batch&, const TrainerConfig&, TrainerState<T>&, double);      \
  template StepReport fast_advprop_step(Model<T>&, const Batch&, const TrainerConfig&, TrainerState<T>&, double); \
  template StepReport entprop_step(Model<T>&, const Batch&, const TrainerConfig&, TrainerState<T>&, double);      \
  template RunResult run_training(Model<T>&, const Dataset&, const TrainerConfig&, const TrainingHooks<T>&);

ENTPROP_INSTANTIATE_TRAINER(float)
ENTPROP_INSTANTIATE_TRAINER(double)

}  // namespace entprop
