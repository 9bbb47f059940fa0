// SPDX-License-Identifier: Apache-2.0
#include "entprop/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace entprop {

namespace {

void check_perm(const std::vector<std::size_t>& perm, std::size_t n) {
  require(perm.size() == n, ErrorCode::InvalidArgument, "mix: permutation length differs from batch size");
  std::vector<bool> seen(n, false);
  for (std::size_t p : perm) {
    require(p < n && !seen[p], ErrorCode::InvalidArgument, "mix: permutation is not a bijection");
    seen[p] = true;
  }
}

template <typename T>
MixedBatch<T> base(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids,
                   std::vector<std::size_t> perm) {
  require(x.rank() >= 2, ErrorCode::Shape, "mix: expected batched input");
  const std::size_t n = x.dim(0);
  require(n >= 2, ErrorCode::InvalidArgument, "mix: batch size must be at least 2");
  require(labels.size() == n && ids.size() == n, ErrorCode::Shape, "mix: labels/ids do not match batch size");
  check_perm(perm, n);
  MixedBatch<T> m;
  m.y_a.assign(labels.begin(), labels.end());
  for (std::size_t i = 0; i < n; ++i) m.y_b.push_back(labels[perm[i]]);
  m.source_indices.assign(ids.begin(), ids.end());
  m.perm = std::move(perm);
  return m;
}

std::vector<std::size_t> random_perm(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

template <typename T>
MixedBatch<T> mixup_with(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids,
                         double lambda, std::vector<std::size_t> perm) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::InvalidArgument, "mixup: lambda outside [0, 1]");
  MixedBatch<T> m = base(x, labels, ids, std::move(perm));
  m.lambda = lambda;
  const std::size_t n = x.dim(0), row = x.size() / n;
  m.x_m = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = x.data() + i * row;
    const T* b = x.data() + m.perm[i] * row;
    T* o = m.x_m.data() + i * row;
    // Mixed in double and clamped so rounding never leaves the segment [a, b].
    for (std::size_t j = 0; j < row; ++j) {
      const T v = static_cast<T>(lambda * static_cast<double>(a[j]) + (1.0 - lambda) * static_cast<double>(b[j]));
      o[j] = std::clamp(v, std::min(a[j], b[j]), std::max(a[j], b[j]));
    }
  }
  return m;
}

template <typename T>
MixedBatch<T> mixup(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids, double alpha,
                    Rng& rng) {
  require(alpha > 0.0, ErrorCode::InvalidArgument, "mixup: alpha must be positive");
  require(x.rank() >= 1 && x.dim(0) >= 2, ErrorCode::InvalidArgument, "mixup: batch size must be at least 2");
  const double lambda = sample_beta(rng, alpha, alpha);
  return mixup_with(x, labels, ids, lambda, random_perm(x.dim(0), rng));
}

template <typename T>
MixedBatch<T> cutmix_with(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids, Box box,
                          std::vector<std::size_t> perm) {
  require(x.rank() == 4, ErrorCode::Shape, "cutmix: needs (N, C, H, W) spatial input, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(box.y0 <= box.y1 && box.y1 <= H && box.x0 <= box.x1 && box.x1 <= W, ErrorCode::InvalidArgument,
          "cutmix: box outside image");
  MixedBatch<T> m = base(x, labels, ids, std::move(perm));
  m.x_m = x;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t r = box.y0; r < box.y1; ++r)
        for (std::size_t q = box.x0; q < box.x1; ++q)
          m.x_m[((i * C + c) * H + r) * W + q] = x[((m.perm[i] * C + c) * H + r) * W + q];
  m.lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(H * W);
  return m;
}

template <typename T>
MixedBatch<T> cutmix(const Tensor<T>& x, std::span<const int> labels, std::span<const std::int64_t> ids, double alpha,
                     Rng& rng) {
  require(alpha > 0.0, ErrorCode::InvalidArgument, "cutmix: alpha must be positive");
  require(x.rank() == 4, ErrorCode::Shape, "cutmix: needs (N, C, H, W) spatial input, got " + shape_str(x.shape()));
  require(x.dim(0) >= 2, ErrorCode::InvalidArgument, "cutmix: batch size must be at least 2");
  const std::size_t H = x.dim(2), W = x.dim(3);
  const double lambda = sample_beta(rng, alpha, alpha);
  const double ratio = std::sqrt(1.0 - lambda);
  const auto ch = static_cast<long>(static_cast<double>(H) * ratio);
  const auto cw = static_cast<long>(static_cast<double>(W) * ratio);
  const auto cy = static_cast<long>(std::uniform_int_distribution<std::size_t>(0, H - 1)(rng));
  const auto cx = static_cast<long>(std::uniform_int_distribution<std::size_t>(0, W - 1)(rng));
  Box box;
  box.y0 = static_cast<std::size_t>(std::clamp(cy - ch / 2, 0L, static_cast<long>(H)));
  box.y1 = static_cast<std::size_t>(std::clamp(cy + ch / 2, 0L, static_cast<long>(H)));
  box.x0 = static_cast<std::size_t>(std::clamp(cx - cw / 2, 0L, static_cast<long>(W)));
  box.x1 = static_cast<std::size_t>(std::clamp(cx + cw / 2, 0L, static_cast<long>(W)));
  return cutmix_with(x, labels, ids, box, random_perm(x.dim(0), rng));
}

template <typename T>
Var<T> mixed_loss_per_sample(Var<T> logits, std::span<const int> y_a, std::span<const int> y_b, double lambda) {
  require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::InvalidArgument, "mixed_loss: lambda outside [0, 1]");
  Var<T> logp = log_softmax(logits);
  Var<T> la = nll(logp, y_a);
  if (lambda == 1.0) return la;
  return add(scale(la, static_cast<T>(lambda)), scale(nll(logp, y_b), static_cast<T>(1.0 - lambda)));
}

#define ENTPROP_INSTANTIATE_AUG(T)                                                                                     \
  template MixedBatch<T> mixup_with(const Tensor<T>&, std::span<const int>, std::span<const std::int64_t>, double,     \
                                    std::vector<std::size_t>);                                                         \
  template MixedBatch<T> mixup(const Tensor<T>&, std::span<const int>, std::span<const std::int64_t>, double, Rng&);   \
  template MixedBatch<T> cutmix_with(const Tensor<T>&, std::span<const int>, std::span<const std::int64_t>, Box,       \
                                     std::vector<std::size_t>);                                                        \
  template MixedBatch<T> cutmix(const Tensor<T>&, std::span<const int>, std::span<const std::int64_t>, double, Rng&);  \
  template Var<T> mixed_loss_per_sample(Var<T>, std::span<const int>, std::span<const int>, double);

ENTPROP_INSTANTIATE_AUG(float)
ENTPROP_INSTANTIATE_AUG(double)

}  // namespace entprop
