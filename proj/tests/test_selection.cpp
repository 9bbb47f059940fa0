// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "entprop/selection.hpp"
#include "test_util.hpp"

using namespace entprop;
using testutil::random_tensor;

namespace {

// Independent scalar reimplementation of every metric.
double brute_score(const std::vector<double>& logits, int y, UncertaintyMetric metric) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p;
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  for (double l : logits) p.push_back(std::exp(l - mx) / z);
  switch (metric) {
    case UncertaintyMetric::Entropy: {
      double h = 0;
      for (double q : p)
        if (q > 0) h -= q * std::log(q);
      return h;
    }
    case UncertaintyMetric::CrossEntropy: return -(logits[y] - mx - std::log(z));
    case UncertaintyMetric::Confidence: return -*std::max_element(p.begin(), p.end());
    case UncertaintyMetric::LogitMargin: {
      double best = -1;
      for (std::size_t c = 0; c < p.size(); ++c)
        if (static_cast<int>(c) != y) best = std::max(best, p[c]);
      return best - p[y];
    }
  }
  return 0;
}

const UncertaintyMetric kMetrics[] = {UncertaintyMetric::Entropy, UncertaintyMetric::CrossEntropy,
                                      UncertaintyMetric::Confidence, UncertaintyMetric::LogitMargin};

}  // namespace

TEST_CASE("entropy examples") {
  CHECK(entropy(Tensor<double>({1, 4}, 0.25))[0] == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(entropy(Tensor<double>({1, 3}, {0.0, 1.0, 0.0}))[0] == 0.0);
  CHECK(std::abs(entropy(Tensor<double>({1, 3}, {0.7, 0.2, 0.1}))[0] - 0.8018) < 1e-4);
  CHECK(std::abs(entropy(Tensor<double>({1, 100}, 0.01))[0] - std::log(100.0)) < 1e-9);
  CHECK_THROWS_AS(entropy(Tensor<double>({1, 2}, {0.7, 0.7})), Error);
  CHECK_THROWS_AS(entropy(Tensor<double>({1, 2}, {1.2, -0.2})), Error);
}

TEST_CASE("entropy lies in [0, ln C]") {
  Rng rng(1);
  const auto p = softmax_rows(random_tensor<double>({500, 5}, rng, -6, 6));
  for (double h : entropy(p)) {
    CHECK(h >= 0.0);
    CHECK(h < std::log(5.0));
  }
}

TEST_CASE("metric examples") {
  const std::vector<int> y{1};
  // Saturated logits give a one-hot softmax.
  const Tensor<double> onehot({1, 3}, {-1000.0, 0.0, -1000.0});
  CHECK(uncertainty_score(onehot, y, UncertaintyMetric::CrossEntropy)[0] == doctest::Approx(0.0));
  CHECK(uncertainty_score(onehot, y, UncertaintyMetric::LogitMargin)[0] == doctest::Approx(-1.0));
  CHECK(uncertainty_score(onehot, y, UncertaintyMetric::Confidence)[0] == doctest::Approx(-1.0));
  CHECK(uncertainty_score(onehot, y, UncertaintyMetric::Entropy)[0] == doctest::Approx(0.0));

  const Tensor<double> uniform({1, 2}, {0.3, 0.3});
  CHECK(uncertainty_score(uniform, y, UncertaintyMetric::CrossEntropy)[0] == doctest::Approx(std::log(2.0)));
  CHECK(uncertainty_score(uniform, y, UncertaintyMetric::LogitMargin)[0] == doctest::Approx(0.0));
  CHECK(uncertainty_score(uniform, y, UncertaintyMetric::Confidence)[0] == doctest::Approx(-0.5));

  CHECK(needs_labels(UncertaintyMetric::CrossEntropy));
  CHECK_FALSE(needs_labels(UncertaintyMetric::Entropy));
  CHECK_THROWS_AS(uncertainty_score(uniform, {}, UncertaintyMetric::LogitMargin), Error);
  CHECK_NOTHROW(uncertainty_score(uniform, {}, UncertaintyMetric::Confidence));
  for (auto m : kMetrics) CHECK(parse_uncertainty_metric(to_string(m)) == m);
}

TEST_CASE("every metric matches the brute-force oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 16, C = 2 + trial % 7;
    const auto logits = random_tensor<double>({N, C}, rng, -8, 8);
    std::vector<int> y(N);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, int(C) - 1)(rng);
    for (auto metric : kMetrics) {
      const auto s = uncertainty_score(logits, y, metric);
      for (std::size_t i = 0; i < N; ++i) {
        const std::vector<double> row(logits.data() + i * C, logits.data() + (i + 1) * C);
        CHECK(std::abs(s[i] - brute_score(row, y[i], metric)) < 1e-10);
      }
    }
  }
}

TEST_CASE("mixed-label scores weight the pair by lambda") {
  Rng rng(3);
  const auto logits = random_tensor<double>({6, 4}, rng, -3, 3);
  const std::vector<int> ya{0, 1, 2, 3, 0, 1}, yb{3, 3, 1, 0, 2, 1};
  for (auto metric : kMetrics) {
    const auto mixed = uncertainty_score_mixed(logits, ya, yb, 0.3, metric);
    const auto a = uncertainty_score(logits, ya, metric);
    const auto b = uncertainty_score(logits, yb, metric);
    for (std::size_t i = 0; i < 6; ++i) {
      const double expect = needs_labels(metric) ? 0.3 * a[i] + 0.7 * b[i] : a[i];
      CHECK(mixed[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("top-k examples") {
  const std::vector<double> s{0.1, 0.9, 0.9, 0.2};
  CHECK(top_k_select(s, 0.0).empty());
  CHECK(top_k_select(s, 1.0) == std::vector<std::size_t>{1, 2, 3, 0});
  CHECK(top_k_select(s, 0.5) == std::vector<std::size_t>{1, 2});
  CHECK_THROWS_AS(top_k_select(s, 1.5), Error);
  CHECK_THROWS_AS(top_k_select(s, -0.1), Error);
  CHECK(selection_size(0.2, 128) == 26);
  CHECK(selection_size(0.5, 5) == 3);  // half rounds up
  CHECK(selection_size(1.0, 7) == 7);
}

TEST_CASE("top-k is invariant under strictly monotone transforms") {
  Rng rng(4);
  const std::vector<std::function<double(double)>> transforms{
      [](double v) { return std::exp(v); }, [](double v) { return 3 * v - 7; },
      [](double v) { return std::atan(v); }, [](double v) { return v * v * v + v; }};
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 40;
    std::vector<double> s(n);
    // Coarse values so ties occur.
    for (auto& v : s) v = std::round(uniform01(rng) * 8) / 4 - 1;
    const double k = uniform01(rng);
    const auto& f = transforms[trial % transforms.size()];
    std::vector<double> t(n);
    std::transform(s.begin(), s.end(), t.begin(), f);
    CHECK(top_k_select(s, k) == top_k_select(t, k));
  }
}

TEST_CASE("selection counter matches a recount and exports a histogram") {
  Rng rng(5);
  SelectionCounter counter(20);
  std::vector<std::vector<std::int64_t>> log;
  for (int step = 0; step < 50; ++step) {
    std::vector<std::int64_t> ids(20);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(step % 7);
    counter.record(ids);
    log.push_back(ids);
  }
  std::vector<std::uint64_t> recount(20, 0);
  for (const auto& ids : log)
    for (auto id : ids) ++recount[id];
  CHECK(counter.counts() == recount);

  std::map<std::uint64_t, std::uint64_t> hist;
  for (auto c : recount) ++hist[c];
  CHECK(counter.histogram() == hist);

  const std::string csv = counter.to_csv();
  CHECK(csv.rfind("sample_index,selection_count\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);

  SelectionCounter empty(5);
  empty.record(std::vector<std::int64_t>{});
  CHECK(empty.counts() == std::vector<std::uint64_t>(5, 0));
  CHECK_THROWS_AS(empty.record(std::vector<std::int64_t>{5}), Error);
}
