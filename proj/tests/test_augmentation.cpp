// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entprop/augment.hpp"
#include "entprop/model.hpp"
#include "entprop/selection.hpp"
#include "entprop/trainer.hpp"
#include "test_util.hpp"

using namespace entprop;
using testutil::random_tensor;

namespace {

const std::vector<std::int64_t> kIds{10, 11, 12, 13};
const std::vector<int> kLabels{0, 1, 2, 1};

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < 500; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + aa * d;
    c = 1.0 + aa / c;
    d = 1.0 / (std::abs(d) < tiny ? tiny : d);
    c = std::abs(c) < tiny ? tiny : c;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + aa * d;
    c = 1.0 + aa / c;
    d = 1.0 / (std::abs(d) < tiny ? tiny : d);
    c = std::abs(c) < tiny ? tiny : c;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h;
}

double beta_cdf(double x, double a, double b) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front =
      std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double beta_inverse_cdf(double u, double a, double b) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    (beta_cdf(mid, a, b) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> mixup_lambdas(double alpha, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor<float> x({2, 1}, {0.0f, 1.0f});
  const std::vector<int> labels{0, 1};
  const std::vector<std::int64_t> ids{0, 1};
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(mixup(x, labels, ids, alpha, rng).lambda);
  return out;
}

double ce(const Tensor<double>& logits, std::size_t row, int y) {
  const std::size_t C = logits.dim(1);
  double mx = -1e300;
  for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, logits[row * C + c]);
  double s = 0;
  for (std::size_t c = 0; c < C; ++c) s += std::exp(logits[row * C + c] - mx);
  return -(logits[row * C + y] - mx - std::log(s));
}

}  // namespace

TEST_CASE("lambda = 1 keeps the batch and the loss reduces to cross-entropy") {
  Rng rng(1);
  const auto x = random_tensor<double>({4, 3}, rng);
  const auto m = mixup_with(x, kLabels, kIds, 1.0, {1, 2, 3, 0});
  CHECK(m.x_m == x);
  CHECK(m.y_b == std::vector<int>{1, 2, 1, 0});
  CHECK(m.source_indices == kIds);

  Graph<double> g;
  auto logits = g.input(random_tensor<double>({4, 3}, rng));
  CHECK(mixed_loss(logits, m.y_a, m.y_b, 1.0).value().item() ==
        mean(cross_entropy(logits, std::span<const int>(kLabels))).value().item());
}

TEST_CASE("mixup rejects single-sample batches and invalid permutations") {
  Rng rng(2);
  const Tensor<float> one({1, 3});
  CHECK_THROWS_AS(mixup(one, std::vector<int>{0}, std::vector<std::int64_t>{0}, 1.0, rng), Error);
  const Tensor<float> x({4, 3});
  CHECK_THROWS_AS(mixup_with(x, kLabels, kIds, 0.5, {0, 0, 1, 2}), Error);
}

TEST_CASE("Beta(1,1) lambdas average one half") {
  const auto l = mixup_lambdas(1.0, 100000, 3);
  const double mean = std::accumulate(l.begin(), l.end(), 0.0) / double(l.size());
  CHECK(std::abs(mean - 0.5) < 0.005);
}

TEST_CASE("Beta(0.2,0.2) lambdas pass a KS test against the exact law") {
  const std::size_t n = 100000;
  auto l = mixup_lambdas(0.2, n, 4);
  std::sort(l.begin(), l.end());
  // One-sample statistic against the exact CDF.
  double d1 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = beta_cdf(l[i], 0.2, 0.2);
    d1 = std::max({d1, F - double(i) / n, double(i + 1) / n - F});
  }
  CHECK(d1 < 1.628 / std::sqrt(double(n)));

  // Two-sample statistic against inverse-CDF draws.
  Rng rng(5);
  std::vector<double> ref(n);
  for (auto& v : ref) v = beta_inverse_cdf(uniform01(rng), 0.2, 0.2);
  std::sort(ref.begin(), ref.end());
  double d2 = 0;
  std::size_t i = 0, j = 0;
  while (i < n && j < n) {
    const double v = std::min(l[i], ref[j]);
    while (i < n && l[i] <= v) ++i;
    while (j < n && ref[j] <= v) ++j;
    d2 = std::max(d2, std::abs(double(i) - double(j)) / n);
  }
  CHECK(d2 < 1.628 * std::sqrt(2.0 / n));
}

TEST_CASE("mixup outputs stay inside the convex hull") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto x = random_tensor<float>({4, 2, 3}, rng, 0, 1);
    const auto m = mixup(x, kLabels, kIds, 0.4, rng);
    const std::size_t row = 6;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < row; ++j) {
        const float a = x[i * row + j], b = x[m.perm[i] * row + j], v = m.x_m[i * row + j];
        CHECK((std::min(a, b) <= v && v <= std::max(a, b)));
      }
  }
}

TEST_CASE("cutmix boxes") {
  Rng rng(7);
  const auto x = random_tensor<double>({4, 2, 4, 4}, rng, 0, 1);
  const std::vector<std::size_t> perm{3, 0, 1, 2};

  const auto empty = cutmix_with(x, kLabels, kIds, Box{1, 1, 2, 2}, perm);
  CHECK(empty.x_m == x);
  CHECK(empty.lambda == 1.0);

  const auto full = cutmix_with(x, kLabels, kIds, Box{0, 4, 0, 4}, perm);
  CHECK(full.lambda == 0.0);
  const std::size_t row = 32;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < row; ++j) CHECK(full.x_m[i * row + j] == x[perm[i] * row + j]);

  CHECK_THROWS_AS(cutmix_with(Tensor<double>({4, 16}), kLabels, kIds, Box{}, perm), Error);
}

TEST_CASE("random cutmix matches a brute-force pixel composite") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_tensor<double>({4, 1, 4, 4}, rng, 0, 1);
    const auto m = cutmix(x, kLabels, kIds, 1.0, rng);
    // Recover the box as the set of pixels that differ in any sample whose partner differs.
    std::size_t pasted = 0;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        bool from_partner = true;
        bool from_self = true;
        for (std::size_t i = 0; i < 4; ++i) {
          const double v = m.x_m[i * 16 + r * 4 + c];
          from_partner = from_partner && v == x[m.perm[i] * 16 + r * 4 + c];
          from_self = from_self && v == x[i * 16 + r * 4 + c];
        }
        CHECK((from_partner || from_self));
        if (from_partner && !from_self) ++pasted;
      }
    // Identity permutations make pasted pixels indistinguishable; skip the area check then.
    bool identity = true;
    for (std::size_t i = 0; i < 4; ++i) identity = identity && m.perm[i] == i;
    if (!identity) CHECK(m.lambda == doctest::Approx(1.0 - pasted / 16.0));
  }

  // Fixed box composited independently.
  const auto x = random_tensor<double>({2, 1, 4, 4}, rng, 0, 1);
  const std::vector<int> y{0, 1};
  const std::vector<std::int64_t> ids{0, 1};
  const auto m = cutmix_with(x, y, ids, Box{1, 3, 0, 3}, {1, 0});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool in = r >= 1 && r < 3 && c < 3;
        const std::size_t src = in ? 1 - i : i;
        CHECK(m.x_m[i * 16 + r * 4 + c] == x[src * 16 + r * 4 + c]);
      }
  CHECK(m.lambda == doctest::Approx(1.0 - 6.0 / 16.0));
}

TEST_CASE("mixed loss examples") {
  Rng rng(9);
  const auto logits = random_tensor<double>({4, 3}, rng, -3, 3);
  const std::vector<int> y_b{2, 2, 0, 1};
  Graph<double> g;
  auto l = g.input(logits);
  const double same = mixed_loss(l, kLabels, kLabels, 0.5).value().item();
  CHECK(same == doctest::Approx(mean(cross_entropy(l, std::span<const int>(kLabels))).value().item()).epsilon(1e-14));

  double expect = 0;
  for (std::size_t i = 0; i < 4; ++i) expect += 0.3 * ce(logits, i, kLabels[i]) + 0.7 * ce(logits, i, y_b[i]);
  expect /= 4;
  CHECK(std::abs(mixed_loss(l, kLabels, y_b, 0.3).value().item() - expect) < 1e-12);

  CHECK_THROWS_AS(mixed_loss(l, kLabels, std::vector<int>{0, 0, 3, 0}, 0.3), Error);
}

TEST_CASE("mixed loss gradient matches finite differences") {
  Rng rng(10);
  const std::vector<int> y_b{2, 2, 0, 1};
  const testutil::Builder<double> build = [&](Graph<double>&, const std::vector<Var<double>>& v) {
    return mixed_loss(v[0], kLabels, y_b, 0.37);
  };
  CHECK(testutil::grad_check<double>(build, {random_tensor<double>({4, 3}, rng, -2, 2)}, 1e-6, 1e-6) < 1e-4);
}

TEST_CASE("a trained model is less certain on mixed batches") {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.sample_shape = {8};
  spec.samples_per_class = 60;
  spec.seed = 1;
  const Dataset data = synth_clusters(spec);
  ModelSpec ms;
  ms.kind = ModelKind::MLP;
  ms.input_shape = {8};
  ms.widths = {16};
  ms.pool_after = {};
  Model<float> m(ms);
  TrainerConfig cfg = TrainerConfig::defaults_for(Method::Vanilla);
  cfg.epochs = 8;
  cfg.optimizer.lr = 0.05;
  run_training(m, data, cfg);

  Rng rng(11);
  double clean = 0, mixed = 0;
  const int batches_n = 60;
  for (int b = 0; b < batches_n; ++b) {
    const auto bt = batches(data, 16, 99, b)[0];
    const auto mb = mixup(bt.x, bt.labels, bt.sample_ids, 1.0, rng);
    const auto hc = entropy(softmax_rows(predict(m, bt.x, Route::Main, Mode::Eval)));
    const auto hm = entropy(softmax_rows(predict(m, mb.x_m, Route::Main, Mode::Eval)));
    clean += std::accumulate(hc.begin(), hc.end(), 0.0) / double(hc.size());
    mixed += std::accumulate(hm.begin(), hm.end(), 0.0) / double(hm.size());
  }
  CHECK(mixed / batches_n - clean / batches_n > 0.0);
}
