// SPDX-License-Identifier: Apache-2.0
#include "entprop/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace entprop {

void OptimizerConfig::validate() const {
  require(lr > 0.0, ErrorCode::Config, "optimizer.lr must be positive");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::Config, "optimizer.momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, ErrorCode::Config, "optimizer.weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::Config,
          "optimizer.beta1/beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, ErrorCode::Config, "optimizer.adam_eps must be positive");
  require(step_every >= 0, ErrorCode::Config, "optimizer.step_every must be non-negative");
  require(step_gamma > 0.0, ErrorCode::Config, "optimizer.step_gamma must be positive");
}

double learning_rate(const OptimizerConfig& cfg, int epoch, int epochs) {
  switch (cfg.schedule) {
    case LrSchedule::Constant: return cfg.lr;
    case LrSchedule::Cosine:
      if (epochs <= 0) return cfg.lr;
      return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
    case LrSchedule::Step: {
      int drops = cfg.step_every > 0 ? epoch / cfg.step_every : 0;
      for (int m : cfg.milestones)
        if (epoch >= m) ++drops;
      return cfg.lr * std::pow(cfg.step_gamma, drops);
    }
  }
  return cfg.lr;
}

template <typename T>
void Optimizer<T>::step(Model<T>& model, const GradientMap<T>& grads, double lr) {
  ++steps_;
  for (const auto& [id, g] : grads) {
    Parameter<T>& p = model.parameter(id);
    require(g.shape() == p.value.shape(), ErrorCode::Shape, "optimizer: gradient shape differs for " + p.name);
    Slot& s = slots_[id];
    const std::size_t n = p.value.size();
    if (s.m.empty()) s.m.assign(n, 0.0);
    ++s.t;
    auto w = p.value.values();
    if (cfg_.kind == OptimizerKind::SGD) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(g[i]) + cfg_.weight_decay * static_cast<double>(w[i]);
        s.m[i] = s.t == 1 ? d : cfg_.momentum * s.m[i] + d;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * s.m[i]);
      }
    } else {
      if (s.v.empty()) s.v.assign(n, 0.0);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
      for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(g[i]) + cfg_.weight_decay * static_cast<double>(w[i]);
        s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * d;
        s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * d * d;
        const double upd = (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + cfg_.adam_eps);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * upd);
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace entprop
