// SPDX-License-Identifier: Apache-2.0
#include "entprop/batch_norm.hpp"

#include <cmath>

namespace entprop {

template <typename T>
BNState<T>::BNState(std::size_t channels, T momentum_, T eps_)
    : running_mean(channels, T{0}), running_var(channels, T{1}), momentum(momentum_), eps(eps_) {
  require(channels > 0, ErrorCode::InvalidArgument, "batch norm: zero channels");
  gamma.value = Tensor<T>(Shape{channels}, T{1});
  beta.value = Tensor<T>(Shape{channels}, T{0});
}

template <typename T>
Var<T> bn_forward(Var<T> x, BNState<T>& state, BNOptions opts) {
  Graph<T>& g = *x.graph;
  // Parameter nodes first: appending to the tape may move earlier node values.
  Var<T> gamma = g.param(state.gamma);
  Var<T> beta = g.param(state.beta);
  const Shape s = x.shape();
  require(s.size() >= 2, ErrorCode::Shape, "bn_forward: expected (N, C, ...), got " + shape_str(s));
  const std::size_t N = s[0], C = s[1];
  require(C == state.channels(), ErrorCode::Shape,
          "bn_forward: input has " + std::to_string(C) + " channels, state has " + std::to_string(state.channels()));
  require(opts.mode == Mode::Eval || N >= 2, ErrorCode::InvalidArgument, "bn_forward: Train mode needs a batch of at least 2");
  const std::size_t inner = x.value().size() / (N * C);
  const std::size_t M = N * inner;
  const Tensor<T>& xv = x.value();

  std::vector<T> mu(C), invstd(C);
  if (opts.mode == Mode::Train) {
    std::vector<T> var(C);
    for (std::size_t c = 0; c < C; ++c) {
      // Two-pass mean/variance in double for stable statistics at float precision.
      double acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv.data() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) acc += p[i];
      }
      const double m = acc / static_cast<double>(M);
      double sq = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = xv.data() + (n * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      mu[c] = static_cast<T>(m);
      var[c] = static_cast<T>(sq / static_cast<double>(M));
      invstd[c] = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(M) + static_cast<double>(state.eps)));
      if (opts.update_stats) {
        const T unbiased = M > 1 ? static_cast<T>(sq / static_cast<double>(M - 1)) : T{0};
        state.running_mean[c] = (T{1} - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
        state.running_var[c] = (T{1} - state.momentum) * state.running_var[c] + state.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = state.running_mean[c];
      invstd[c] = T{1} / std::sqrt(state.running_var[c] + state.eps);
    }
  }

  const auto& gv = state.gamma.value;
  const auto& bv = state.beta.value;
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (xv[off + i] - mu[c]) * invstd[c];
        xhat[off + i] = h;
        out[off + i] = gv[c] * h + bv[c];
      }
    }

  const bool train = opts.mode == Mode::Train;
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return g.record(
      std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Graph<T>& graph, const Tensor<T>& gout) {
        const Tensor<T>& gam = graph.value(Var<T>{&graph, ig});
        std::vector<T> sum_dy(C, T{0}), sum_dy_xhat(C, T{0});
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_dy[c] += gout[off + i];
              sum_dy_xhat[c] += gout[off + i] * xhat[off + i];
            }
          }
        if (graph.needs_grad(ig)) {
          Tensor<T>& dg = graph.grad_buffer(ig);
          for (std::size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (graph.needs_grad(ib)) {
          Tensor<T>& db = graph.grad_buffer(ib);
          for (std::size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
        }
        if (!graph.needs_grad(ix)) return;
        Tensor<T>& dx = graph.grad_buffer(ix);
        const T invM = T{1} / static_cast<T>(M);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * inner;
            const T k = gam[c] * invstd[c];
            for (std::size_t i = 0; i < inner; ++i) {
              if (train)
                dx[off + i] += k * (gout[off + i] - invM * sum_dy[c] - xhat[off + i] * invM * sum_dy_xhat[c]);
              else
                dx[off + i] += k * gout[off + i];
            }
          }
      },
      "batch_norm");
}

template <typename T>
void DualNormLayer<T>::clone_abn_from_mbn() {
  const std::size_t gid = abn.gamma.id, bid = abn.beta.id;
  const std::string gname = abn.gamma.name, bname = abn.beta.name;
  abn = mbn;
  abn.gamma.id = gid;
  abn.beta.id = bid;
  abn.gamma.name = gname;
  abn.beta.name = bname;
}

template struct BNState<float>;
template struct BNState<double>;
template struct DualNormLayer<float>;
template struct DualNormLayer<double>;
template Var<float> bn_forward(Var<float>, BNState<float>&, BNOptions);
template Var<double> bn_forward(Var<double>, BNState<double>&, BNOptions);

}  // namespace entprop
