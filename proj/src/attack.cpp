// SPDX-License-Identifier: Apache-2.0
#include "entprop/attack.hpp"

#include <algorithm>
#include <cmath>

#include "entprop/augment.hpp"

namespace entprop {

void AttackConfig::validate() const {
  require(n >= 1, ErrorCode::InvalidArgument, "attack: n must be at least 1");
  require(epsilon > 0.0, ErrorCode::InvalidArgument, "attack: epsilon must be positive");
  require(alpha > 0.0, ErrorCode::InvalidArgument, "attack: alpha must be positive");
  require(alpha <= epsilon, ErrorCode::InvalidArgument, "attack: alpha must not exceed epsilon");
}

std::pair<double, double> epsilon_schedule(int n) {
  require(n >= 1, ErrorCode::InvalidArgument, "epsilon_schedule: n must be at least 1");
  if (n == 1) return {1.0, 1.0};
  return {static_cast<double>(n + 1), 1.0};
}

template <typename T>
Tensor<T> input_gradient(Model<T>& model, const Tensor<T>& x, const LabelSpec& labels, AttackOptions opts) {
  Graph<T> g;
  Var<T> xv = g.input(x, true);
  ForwardOptions fo{opts.route, opts.bn_mode == AttackBNMode::Eval ? Mode::Eval : Mode::Train,
                    opts.bn_mode == AttackBNMode::TrainUpdate};
  auto out = model.forward(g, xv, fo);
  Var<T> loss = labels.mixed() ? mixed_loss(out.logits, labels.y_a, labels.y_b, labels.lambda)
                               : mean(cross_entropy(out.logits, std::span<const int>(labels.y_a)));
  g.backward(loss);
  return g.grad(xv);
}

template <typename T>
AttackResult<T> pgd(Model<T>& model, const Tensor<T>& x0, const LabelSpec& labels, const AttackConfig& cfg,
                    const Tensor<T>* seed_grad, AttackOptions opts) {
  cfg.validate();
  for (T v : x0.values())
    require(v >= T{0} && v <= T{1}, ErrorCode::InvalidArgument, "pgd: input outside the valid range [0, 1]");
  if (cfg.free_first_step) {
    require(seed_grad != nullptr, ErrorCode::InvalidArgument, "pgd: free first step needs a seed gradient");
    require(seed_grad->shape() == x0.shape(), ErrorCode::Shape, "pgd: seed gradient shape differs from input");
  }
  const double eps = cfg.epsilon / 255.0;
  const double step = cfg.alpha / 255.0;
  const PassCounter before = model.counter();

  std::vector<double> delta(x0.size(), 0.0);
  Tensor<T> x = x0;
  for (int i = 1; i <= cfg.n; ++i) {
    const Tensor<T> grad = (i == 1 && cfg.free_first_step) ? *seed_grad : input_gradient(model, x, labels, opts);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double s = grad[j] > T{0} ? 1.0 : (grad[j] < T{0} ? -1.0 : 0.0);
      const double d = std::clamp(delta[j] + step * s, -eps, eps);
      const double base = static_cast<double>(x0[j]);
      T v = static_cast<T>(std::clamp(base + d, 0.0, 1.0));
      // Rounding to T must not leave the eps-ball.
      while (std::abs(static_cast<double>(v) - base) > eps) v = std::nextafter(v, x0[j]);
      x[j] = v;
      delta[j] = static_cast<double>(v) - base;
    }
  }

  AttackResult<T> r;
  r.x_adv = std::move(x);
  const PassCounter& after = model.counter();
  r.passes.forward_samples = after.forward_samples - before.forward_samples;
  r.passes.backward_samples = after.backward_samples - before.backward_samples;
  r.passes.forward_calls = after.forward_calls - before.forward_calls;
  r.passes.backward_calls = after.backward_calls - before.backward_calls;
  return r;
}

template Tensor<float> input_gradient(Model<float>&, const Tensor<float>&, const LabelSpec&, AttackOptions);
template Tensor<double> input_gradient(Model<double>&, const Tensor<double>&, const LabelSpec&, AttackOptions);
template AttackResult<float> pgd(Model<float>&, const Tensor<float>&, const LabelSpec&, const AttackConfig&,
                                 const Tensor<float>*, AttackOptions);
template AttackResult<double> pgd(Model<double>&, const Tensor<double>&, const LabelSpec&, const AttackConfig&,
                                  const Tensor<double>*, AttackOptions);

}  // namespace entprop
