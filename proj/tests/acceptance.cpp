// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "entprop/attack.hpp"
#include "entprop/evaluation.hpp"
#include "entprop/selection.hpp"
#include "entprop/trainer.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

using namespace entprop;
using testutil::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const char* title, bool ok, const std::string& detail) {
  std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, title, detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// Default desk task: 3 classes of 16x16 gratings.
Dataset task(std::uint64_t seed, std::uint64_t split) {
  SyntheticSpec s;
  s.seed = seed;
  return synth_clusters(s, split);
}

ModelSpec cnn(std::uint64_t seed) {
  ModelSpec s;
  s.seed = seed;
  return s;
}

TrainerConfig trainer(Method m, int epochs, std::uint64_t seed) {
  TrainerConfig c = TrainerConfig::defaults_for(m);
  c.epochs = epochs;
  c.seed = seed;
  c.optimizer.lr = 0.05;
  return c;
}

template <typename T>
struct BNSnapshot {
  std::vector<std::vector<T>> mean, var;
  std::vector<Tensor<T>> gamma, beta;
  bool operator==(const BNSnapshot&) const = default;
};

template <typename T>
BNSnapshot<T> snapshot(const Model<T>& m, Route r) {
  BNSnapshot<T> s;
  for (const auto* layer : m.norm_layers()) {
    const auto& st = layer->routed(r);
    s.mean.push_back(st.running_mean);
    s.var.push_back(st.running_var);
    s.gamma.push_back(st.gamma.value);
    s.beta.push_back(st.beta.value);
  }
  return s;
}

double sample_mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

double sample_var(const std::vector<double>& v) {
  const double m = sample_mean(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / double(v.size() - 1);
}

double pooled_se(const std::vector<double>& a, const std::vector<double>& b) {
  return std::sqrt(sample_var(a) / double(a.size()) + sample_var(b) / double(b.size()));
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  Rng rng(11);
  for (const auto& [name, c] : gradcases::primitive_cases<double>(rng)) {
    const double e = testutil::grad_check<double>(c.first, c.second, 1e-6, 1e-6);
    if (e > worst) worst = e, worst_name = name;
  }
  int composites = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng r(seed);
    for (const auto& [build, inputs] : gradcases::composite_cases<double>(r)) {
      const double e = testutil::grad_check<double>(build, inputs, 1e-6, 1e-6);
      ++composites;
      if (e > worst) worst = e, worst_name = "composite";
    }
  }
  const double t = seconds_since(t0);
  report(1, "gradient correctness", worst < 1e-4 && t < 120,
         fmt("max rel err %.2e over primitives and %.0f composites (%.1fs)", worst, composites, t) + " worst " +
             worst_name);
}

void formula_reproduction() {
  struct Row {
    const char* name;
    double sa, ra, h;
  };
  const Row rows[] = {{"vanilla", 79.30, 51.01, 62.08},
                      {"mixprop", 81.84, 55.55, 66.18},
                      {"advprop", 78.05, 58.94, 67.17},
                      {"entprop(0.2,1)", 79.99, 56.07, 65.93},
                      {"entprop(0.6,5)", 80.62, 60.50, 69.12}};
  double worst = 0;
  for (const Row& r : rows) worst = std::max(worst, std::abs(h_score(r.sa, r.ra) - r.h));
  const double ent = std::abs(entropy(Tensor<double>({1, 100}, 0.01))[0] - std::log(100.0));
  report(2, "formula reproduction", worst <= 0.01 && ent <= 1e-9,
         fmt("max |h - table| %.4f over 5 rows, |H(uniform 100) - ln 100| %.1e", worst, ent));
}

void cost_accounting() {
  const auto t0 = Clock::now();
  const Dataset data = task(0, 0);
  const std::size_t N = data.size();
  struct Case {
    Method method;
    double k;
    int n;
    double expect;
  };
  const Case cases[] = {{Method::Vanilla, 0, 1, 1.0},       {Method::MixProp, 0, 1, 2.0},
                        {Method::AdvProp, 0, 5, 7.0},       {Method::FastAdvProp, 0, 1, 1.2},
                        {Method::EntProp, 0.2, 1, 1.2},     {Method::EntProp, 0.6, 1, 1.6},
                        {Method::EntProp, 0.2, 5, 2.0},     {Method::EntProp, 0.6, 5, 4.0}};
  bool ok = true;
  std::string detail;
  for (const Case& c : cases) {
    TrainerConfig cfg = trainer(c.method, 1, 0);
    if (c.method == Method::EntProp) {
      cfg.k = c.k;
      cfg.n = c.n;
      std::tie(cfg.attack.epsilon, cfg.attack.alpha) = epsilon_schedule(c.n);
    }
    if (c.method == Method::AdvProp) cfg.n = c.n;
    if (c.method == Method::FastAdvProp) cfg.p_adv = 0.2;
    Model<float> m(cnn(0));
    const auto rec = run_training(m, data, cfg).records.at(0);
    // Each batch's auxiliary count is within one sample of its target, each
    // such sample costs `per_aux` passes, and one partial batch may be skipped.
    const double per_aux = c.method == Method::EntProp ? c.n : 1.0;
    const double slack =
        (double(rec.steps) * per_aux + c.expect * double(cfg.batch_size)) / double(N);
    const bool exact = c.method == Method::Vanilla || c.method == Method::MixProp || c.method == Method::AdvProp;
    const bool pass = std::abs(theoretical_cost(cfg) - c.expect) < 1e-12 &&
                      (exact ? rec.measured_cost == c.expect : std::abs(rec.measured_cost - c.expect) <= slack) &&
                      rec.forward_samples == rec.backward_samples;
    ok = ok && pass;
    detail += fmt(" %.3g", rec.measured_cost) + "/" + fmt("%.1f", c.expect);
  }
  const double t = seconds_since(t0);
  report(3, "cost accounting", ok && t < 300, "measured/formula" + detail + fmt(" (%.1fs)", t));
}

void disentanglement_audit() {
  const Dataset data = task(0, 0), test = task(0, 1);
  Model<float> m(cnn(0));
  BNSnapshot<float> other_before;
  std::size_t aux = 0, main = 0, violations = 0;
  m.set_forward_observer([&](const Model<float>& model, const ForwardOptions& o, bool after) {
    const Route other = o.route == Route::Main ? Route::Aux : Route::Main;
    if (!after) {
      other_before = snapshot(model, other);
      (o.route == Route::Aux ? aux : main) += 1;
    } else if (!(snapshot(model, other) == other_before)) {
      ++violations;
    }
  });
  TrainerConfig cfg = trainer(Method::EntProp, 3, 0);
  cfg.k = 0.5;
  run_training(m, data, cfg);
  m.set_forward_observer(nullptr);

  const Tensor<float> before = predict_dataset(m, test.images);
  Rng rng(5);
  for (auto* layer : m.norm_layers()) {
    auto& abn = layer->abn;
    for (auto& v : abn.gamma.value.values()) v = float(uniform01(rng) * 4 - 2);
    for (auto& v : abn.beta.value.values()) v = float(uniform01(rng) * 4 - 2);
    for (auto& v : abn.running_mean) v = float(uniform01(rng) * 10 - 5);
    for (auto& v : abn.running_var) v = float(uniform01(rng) * 10 + 0.01);
  }
  const bool invariant = predict_dataset(m, test.images) == before;
  report(4, "disentanglement audit", violations == 0 && aux > 0 && main > 0 && invariant,
         fmt("%.0f main and %.0f aux forwards, %.0f cross-route changes, main eval logits ", double(main),
             double(aux), double(violations)) +
             (invariant ? "bit-identical" : "changed") + " after ABN randomization");
}

void equivalence_anchor() {
  const Dataset data = task(0, 0);
  TrainerConfig ent = trainer(Method::EntProp, 2, 4);
  ent.k = 0.0;
  ent.use_mixup = true;
  TrainerConfig van = trainer(Method::Vanilla, 2, 4);
  van.use_mixup = true;
  Model<float> a(cnn(4)), b(cnn(4));
  run_training(a, data, ent);
  run_training(b, data, van);
  Archive sa, sb;
  a.save(sa);
  b.save(sb);
  const bool same = a.identical(b) && sa.serialize() == sb.serialize();
  const auto s5 = epsilon_schedule(5), s1 = epsilon_schedule(1);
  const bool sched = s5 == std::pair<double, double>{6, 1} && s1 == std::pair<double, double>{1, 1};
  report(5, "equivalence anchor", same && sched,
         std::string("checkpoints ") + (same ? "bit-identical" : "differ") +
             fmt(", schedule(5) = (%g, %g), schedule(1) = (%g, %g)", s5.first, s5.second, s1.first, s1.second));
}

void attack_contract() {
  Model<float> m(cnn(1));
  Rng rng(2);
  double worst_ratio = 0;
  bool in_range = true;
  for (int trial = 0; trial < 1000; ++trial) {
    AttackConfig cfg;
    cfg.n = std::uniform_int_distribution<int>(1, 3)(rng);
    cfg.epsilon = 0.1 + uniform01(rng) * 12;
    cfg.alpha = cfg.epsilon * (0.05 + 0.95 * uniform01(rng));
    cfg.free_first_step = trial % 2 == 0;
    auto x0 = random_tensor<float>({2, 1, 16, 16}, rng, 0, 1);
    for (auto& v : x0.values()) {
      const double u = uniform01(rng);
      if (u < 0.1) v = 0.0f;
      if (u > 0.9) v = 1.0f;
    }
    const std::vector<int> y{std::uniform_int_distribution<int>(0, 2)(rng), std::uniform_int_distribution<int>(0, 2)(rng)};
    const auto labels = LabelSpec::plain(y);
    const AttackOptions opts{trial % 2 ? Route::Aux : Route::Main, static_cast<AttackBNMode>(trial % 3)};
    const auto seed = input_gradient(m, x0, labels, opts);
    const auto r = pgd(m, x0, labels, cfg, &seed, opts);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      worst_ratio = std::max(worst_ratio, std::abs(double(r.x_adv[i]) - double(x0[i])) / (cfg.epsilon / 255.0));
      in_range = in_range && r.x_adv[i] >= 0.0f && r.x_adv[i] <= 1.0f;
    }
  }
  AttackConfig free1;
  const auto x0 = random_tensor<float>({4, 1, 16, 16}, rng, 0, 1);
  const auto labels = LabelSpec::plain({0, 1, 2, 0});
  const auto seed = input_gradient(m, x0, labels, {});
  const auto before = m.counter();
  const auto r = pgd(m, x0, labels, free1, &seed);
  const bool zero = count_passes(r) == std::pair<std::uint64_t, std::uint64_t>{0, 0} &&
                    m.counter().forward_samples == before.forward_samples &&
                    m.counter().backward_samples == before.backward_samples;
  report(6, "attack contract", worst_ratio <= 1.0 && in_range && zero,
         fmt("max |x_adv - x0| / (eps/255) = %.6f over 1000 cases", worst_ratio) +
             (in_range ? ", outputs in [0, 1]" : ", outputs left [0, 1]") +
             (zero ? ", free n=1 ran no extra passes" : ", free n=1 ran extra passes"));
}

struct RunStats {
  std::vector<double> ra, h, gap, frechet_ent, frechet_mix;
  int epochs_ok = 0, epochs_total = 0;
};

void end_to_end() {
  constexpr int kSeeds = 5, kEpochs = 30;
  const auto t0 = Clock::now();
  const auto suite = full_suite();
  RunStats van, ent, abl;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Dataset train = task(100 + seed, 0), test = task(100 + seed, 1);
    for (RunStats* stats : {&van, &ent, &abl}) {
      const bool is_van = stats == &van;
      TrainerConfig cfg = trainer(is_van ? Method::Vanilla : Method::EntProp, kEpochs, seed);
      if (!is_van) {
        cfg.k = 0.5;
        cfg.n = 1;
      }
      if (stats == &abl) {
        cfg.use_mixup = false;
        cfg.use_free = false;
      }
      Model<float> m(cnn(seed));
      const auto run = run_training(m, train, cfg);
      const double sa = standard_accuracy(m, test), ra = robust_accuracy(m, test, suite);
      stats->ra.push_back(ra);
      stats->h.push_back(h_score(sa, ra));
      if (!is_van) {
        double gap = 0;
        for (std::size_t e = 1; e < run.records.size(); ++e) {
          const double d = run.records[e].transformed_entropy.mean() - run.records[e].clean_entropy.mean();
          gap += d;
          stats->epochs_ok += d >= 0;
          ++stats->epochs_total;
        }
        stats->gap.push_back(gap / double(run.records.size() - 1));
      }
      if (stats == &ent) {
        TransformConfig tc;
        tc.seed = seed;
        tc.kind = TransformKind::EntProp;
        stats->frechet_ent.push_back(feature_frechet(m, test, tc));
        tc.kind = TransformKind::MixUp;
        stats->frechet_mix.push_back(feature_frechet(m, test, tc));
      }
      std::printf("       seed %d %-8s sa %.3f ra %.3f h %.3f", seed,
                  is_van ? "vanilla" : stats == &ent ? "entprop" : "ablation", sa, ra, h_score(sa, ra));
      if (!is_van) std::printf(" entropy gap %+.4f", stats->gap.back());
      std::printf("\n");
      std::fflush(stdout);
    }
  }
  const double t = seconds_since(t0);

  const double ra_diff = sample_mean(ent.ra) - sample_mean(van.ra), ra_se = pooled_se(ent.ra, van.ra);
  const double h_diff = sample_mean(ent.h) - sample_mean(van.h), h_se = pooled_se(ent.h, van.h);
  report(7, "directional end-to-end", ra_diff > ra_se && h_diff > h_se && t < 900,
         fmt("RA %.4f vs %.4f (diff %.4f, SE %.4f), ", sample_mean(ent.ra), sample_mean(van.ra), ra_diff, ra_se) +
             fmt("H %.4f vs %.4f (diff %.4f, SE %.4f)", sample_mean(ent.h), sample_mean(van.h), h_diff, h_se) +
             fmt(" (%.0fs)", t));

  const double frac = double(ent.epochs_ok) / double(ent.epochs_total);
  const double ent_gap = sample_mean(ent.gap), abl_gap = sample_mean(abl.gap);
  report(8, "entropy-overlap diagnostic", frac >= 0.8 && abl_gap < ent_gap,
         fmt("transformed >= clean in %.1f%% of epochs after the first, mean gap %.4f vs ablation %.4f", 100 * frac,
             ent_gap, abl_gap));

  GaussianSummary p{{1.5}, {4.0}, 10}, q{{-0.5}, {0.25}, 10};
  const double closed = std::abs(frechet_distance(p, q) - (4.0 + 2.25));
  Rng rng(6);
  const auto feats = random_tensor<double>({50, 4}, rng);
  const auto g = fit_gaussian(feats);
  const double self = std::abs(frechet_distance(g, g));
  const double fe = sample_mean(ent.frechet_ent), fm = sample_mean(ent.frechet_mix);
  report(9, "Frechet distance", self <= 1e-8 && closed <= 1e-10 && fe > fm,
         fmt("d(a,a) %.1e, 1-D error %.1e, clean vs EntProp-transformed %.4f > clean vs MixUp %.4f", self, closed, fe,
             fm));
}

void selection_properties() {
  Rng rng(4);
  const std::vector<std::function<double(double)>> transforms{
      [](double v) { return std::exp(v); }, [](double v) { return 3 * v - 7; },
      [](double v) { return std::atan(v); }, [](double v) { return v * v * v + v; }};
  int invariant = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 40;
    std::vector<double> s(n), t(n);
    for (auto& v : s) v = std::round(uniform01(rng) * 8) / 4 - 1;
    const double k = uniform01(rng);
    std::transform(s.begin(), s.end(), t.begin(), transforms[trial % transforms.size()]);
    invariant += top_k_select(s, k) == top_k_select(t, k);
  }

  const Dataset data = task(0, 0);
  Model<float> m(cnn(0));
  TrainerConfig cfg = trainer(Method::EntProp, 2, 0);
  cfg.k = 0.3;
  std::vector<std::uint64_t> recount(data.size(), 0);
  TrainingHooks<float> hooks;
  hooks.on_step = [&](int, std::size_t, const StepReport& r) {
    for (auto id : r.selected_source_indices) ++recount[static_cast<std::size_t>(id)];
  };
  const auto run = run_training(m, data, cfg, hooks);
  std::map<std::uint64_t, std::uint64_t> hist;
  for (auto c : recount) ++hist[c];
  const bool hist_ok = run.selection.histogram() == hist && run.selection.counts() == recount;

  double worst = 0;
  const UncertaintyMetric metrics[] = {UncertaintyMetric::Entropy, UncertaintyMetric::CrossEntropy,
                                       UncertaintyMetric::Confidence, UncertaintyMetric::LogitMargin};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t N = 16, C = 2 + trial % 7;
    const auto logits = random_tensor<double>({N, C}, rng, -8, 8);
    std::vector<int> y(N);
    for (auto& v : y) v = std::uniform_int_distribution<int>(0, int(C) - 1)(rng);
    for (auto metric : metrics) {
      const auto s = uncertainty_score(logits, y, metric);
      for (std::size_t i = 0; i < N; ++i) {
        const double* row = logits.data() + i * C;
        const double mx = *std::max_element(row, row + C);
        double z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        std::vector<double> p(C);
        for (std::size_t c = 0; c < C; ++c) p[c] = std::exp(row[c] - mx) / z;
        double expect = 0;
        switch (metric) {
          case UncertaintyMetric::Entropy:
            for (double v : p)
              if (v > 0) expect -= v * std::log(v);
            break;
          case UncertaintyMetric::CrossEntropy: expect = -(row[y[i]] - mx - std::log(z)); break;
          case UncertaintyMetric::Confidence: expect = -*std::max_element(p.begin(), p.end()); break;
          case UncertaintyMetric::LogitMargin: {
            double best = -1;
            for (std::size_t c = 0; c < C; ++c)
              if (int(c) != y[i]) best = std::max(best, p[c]);
            expect = best - p[y[i]];
            break;
          }
        }
        worst = std::max(worst, std::abs(s[i] - expect));
      }
    }
  }
  report(10, "selection properties", invariant == 1000 && hist_ok && worst < 1e-10,
         fmt("top-k invariant in %.0f/1000 cases, metric max error %.1e", invariant, worst) + ", histogram " +
             (hist_ok ? "equals" : "differs from") + " the step-log recount");
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const std::vector<std::function<void()>> criteria{gradient_correctness, formula_reproduction, cost_accounting,
                                                    disentanglement_audit, equivalence_anchor,  attack_contract,
                                                    end_to_end,            selection_properties};
  for (const auto& c : criteria) {
    try {
      c();
    } catch (const std::exception& e) {
      std::printf("[FAIL] criterion aborted: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("%s: %d failing, %.0fs total\n", failures ? "FAILED" : "ALL PASSED", failures, seconds_since(t0));
  return failures ? 1 : 0;
}
