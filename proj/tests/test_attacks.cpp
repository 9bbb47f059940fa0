// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "entprop/attack.hpp"
#include "entprop/dataset.hpp"
#include "entprop/trainer.hpp"
#include "test_util.hpp"

using namespace entprop;
using testutil::random_tensor;

namespace {

const Tensor<float>* const kNoSeed = nullptr;

ModelSpec mlp_spec() {
  ModelSpec s;
  s.kind = ModelKind::MLP;
  s.input_shape = {6};
  s.widths = {12};
  s.pool_after = {};
  s.class_count = 3;
  return s;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = std::uniform_int_distribution<int>(0, classes - 1)(rng);
  return y;
}

template <typename T>
double batch_loss(Model<T>& m, const Tensor<T>& x, const std::vector<int>& y, Route route, Mode mode) {
  Graph<T> g;
  auto out = m.forward(g, g.input(x), {route, mode, false});
  return mean(cross_entropy(out.logits, std::span<const int>(y))).value().item();
}

}  // namespace

TEST_CASE("epsilon schedule") {
  CHECK(epsilon_schedule(5) == std::pair<double, double>{6, 1});
  CHECK(epsilon_schedule(1) == std::pair<double, double>{1, 1});
  CHECK(epsilon_schedule(2) == std::pair<double, double>{3, 1});
  CHECK_THROWS_AS(epsilon_schedule(0), Error);
}

TEST_CASE("config validation") {
  AttackConfig c;
  c.alpha = 2;
  c.epsilon = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = AttackConfig{};
  c.n = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("zero seed gradient leaves the input unchanged") {
  Model<float> m(mlp_spec());
  Rng rng(1);
  const auto x0 = random_tensor<float>({4, 6}, rng, 0, 1);
  const Tensor<float> zero(x0.shape());
  AttackConfig cfg;
  const auto r = pgd(m, x0, LabelSpec::plain({0, 1, 2, 0}), cfg, &zero);
  CHECK(r.x_adv == x0);
  CHECK(count_passes(r) == std::pair<std::uint64_t, std::uint64_t>{0, 0});
}

TEST_CASE("l-inf bound and range hold over random configurations") {
  Model<float> m(mlp_spec());
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    AttackConfig cfg;
    cfg.n = std::uniform_int_distribution<int>(1, 3)(rng);
    cfg.epsilon = 0.1 + uniform01(rng) * 12;
    cfg.alpha = cfg.epsilon * (0.05 + 0.95 * uniform01(rng));
    cfg.free_first_step = trial % 2 == 0;
    // Pixels on and near the range boundary.
    auto x0 = random_tensor<float>({3, 6}, rng, 0, 1);
    for (auto& v : x0.values()) {
      const double u = uniform01(rng);
      if (u < 0.15) v = 0.0f;
      if (u > 0.85) v = 1.0f;
    }
    const auto seed = random_tensor<float>(x0.shape(), rng, -1, 1);
    const auto y = random_labels(rng, 3, 3);
    const AttackOptions opts{trial % 3 == 0 ? Route::Main : Route::Aux,
                             static_cast<AttackBNMode>(trial % 3)};
    const auto r = pgd(m, x0, LabelSpec::plain(y), cfg, &seed, opts);
    double worst = 0;
    bool in_range = true;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      worst = std::max(worst, std::abs(double(r.x_adv[i]) - double(x0[i])));
      in_range = in_range && r.x_adv[i] >= 0.0f && r.x_adv[i] <= 1.0f;
    }
    CHECK(worst <= cfg.epsilon / 255.0);
    CHECK(in_range);
  }
}

TEST_CASE("pass accounting") {
  Model<float> m(mlp_spec());
  Rng rng(3);
  const auto x0 = random_tensor<float>({4, 6}, rng, 0, 1);
  const auto labels = LabelSpec::plain({0, 1, 2, 1});
  const auto seed = input_gradient(m, x0, labels, {});

  AttackConfig cfg;
  const auto before = m.counter().forward_samples;
  CHECK(count_passes(pgd(m, x0, labels, cfg, &seed)) == std::pair<std::uint64_t, std::uint64_t>{0, 0});
  CHECK(m.counter().forward_samples == before);

  cfg.n = 5;
  cfg.epsilon = 6;
  const auto free5 = pgd(m, x0, labels, cfg, &seed);
  CHECK(count_passes(free5) == std::pair<std::uint64_t, std::uint64_t>{4, 4});
  CHECK(free5.passes.forward_samples == 16);

  cfg.free_first_step = false;
  CHECK(count_passes(pgd(m, x0, labels, cfg, kNoSeed)) == std::pair<std::uint64_t, std::uint64_t>{5, 5});
}

TEST_CASE("frozen attack forwards leave running statistics alone") {
  Model<float> m(mlp_spec());
  Rng rng(4);
  const auto x0 = random_tensor<float>({4, 6}, rng, 0, 1);
  const auto labels = LabelSpec::plain({0, 1, 2, 1});
  AttackConfig cfg;
  cfg.n = 3;
  cfg.epsilon = 4;
  cfg.free_first_step = false;
  const auto before = m.norm_layers()[0]->abn.running_mean;
  pgd(m, x0, labels, cfg, kNoSeed, {Route::Aux, AttackBNMode::TrainFrozen});
  CHECK(m.norm_layers()[0]->abn.running_mean == before);
  pgd(m, x0, labels, cfg, kNoSeed, {Route::Aux, AttackBNMode::TrainUpdate});
  CHECK(m.norm_layers()[0]->abn.running_mean != before);
  CHECK(m.norm_layers()[0]->mbn.running_mean == std::vector<float>(12, 0.0f));
}

TEST_CASE("pgd is deterministic") {
  Model<float> m(mlp_spec());
  Rng rng(5);
  const auto x0 = random_tensor<float>({4, 6}, rng, 0, 1);
  const LabelSpec labels{{0, 1, 2, 1}, {1, 1, 0, 2}, 0.4};
  const auto seed = input_gradient(m, x0, labels, {});
  AttackConfig cfg;
  cfg.n = 4;
  cfg.epsilon = 5;
  CHECK(pgd(m, x0, labels, cfg, &seed).x_adv == pgd(m, x0, labels, cfg, &seed).x_adv);
}

TEST_CASE("input errors") {
  Model<float> m(mlp_spec());
  const Tensor<float> x0({2, 6}, 0.5f);
  const auto labels = LabelSpec::plain({0, 1});
  AttackConfig cfg;
  CHECK_THROWS_AS(pgd(m, x0, labels, cfg, kNoSeed), Error);
  const Tensor<float> bad({2, 6}, 1.5f);
  const Tensor<float> g({2, 6});
  CHECK_THROWS_AS(pgd(m, bad, labels, cfg, &g), Error);
  const Tensor<float> wrong({2, 5});
  CHECK_THROWS_AS(pgd(m, x0, labels, cfg, &wrong), Error);
}

TEST_CASE("a free one-step attack raises the loss of a trained model") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.sample_shape = {6};
  spec.samples_per_class = 80;
  spec.seed = 2;
  const Dataset data = synth_clusters(spec);
  Model<float> m(mlp_spec());
  TrainerConfig tc = TrainerConfig::defaults_for(Method::Vanilla);
  tc.epochs = 5;
  tc.optimizer.lr = 0.05;
  run_training(m, data, tc);

  AttackConfig cfg;
  cfg.epsilon = 4;
  cfg.alpha = 4;
  const AttackOptions opts{Route::Main, AttackBNMode::Eval};
  int ascents = 0;
  const int total = 100;
  for (int b = 0; b < total; ++b) {
    const auto batch = batches(data, 16, 7, b)[0];
    const auto labels = LabelSpec::plain(batch.labels);
    const auto seed = input_gradient(m, batch.x, labels, opts);
    const auto r = pgd(m, batch.x, labels, cfg, &seed, opts);
    ascents += batch_loss(m, r.x_adv, batch.labels, Route::Main, Mode::Eval) >=
               batch_loss(m, batch.x, batch.labels, Route::Main, Mode::Eval);
  }
  CHECK(ascents >= 90);
}
