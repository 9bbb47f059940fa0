// SPDX-License-Identifier: Apache-2.0
#include "entprop/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace entprop {

// ---- GradientMap ----------------------------------------------------------

template <typename T>
void GradientMap<T>::add(std::size_t id, const Tensor<T>& g, T weight) {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    Tensor<T> scaled = g;
    if (weight != T{1})
      for (T& v : scaled.values()) v *= weight;
    grads_.emplace(id, std::move(scaled));
    return;
  }
  require(it->second.shape() == g.shape(), ErrorCode::Shape, "gradient map: shape mismatch for parameter");
  auto dst = it->second.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
}

template <typename T>
const Tensor<T>& GradientMap<T>::at(std::size_t id) const {
  auto it = grads_.find(id);
  require(it != grads_.end(), ErrorCode::InvalidArgument, "gradient map: no gradient for parameter " + std::to_string(id));
  return it->second;
}

template <typename T>
GradientMap<T>& GradientMap<T>::operator+=(const GradientMap& other) {
  for (const auto& [id, g] : other) add(id, g);
  return *this;
}

// ---- Graph ----------------------------------------------------------------

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(std::size_t id) const {
  require(id < nodes_.size(), ErrorCode::InvalidArgument, "graph: unknown node");
  return nodes_[id];
}

template <typename T>
void Graph<T>::check_finite(const Tensor<T>& t, const char* op, const char* what) const {
  if (checked_ && !t.all_finite()) fail(ErrorCode::Numeric, std::string("non-finite ") + what + " in op '" + op + "'");
}

template <typename T>
Var<T> Graph<T>::input(Tensor<T> value, bool requires_grad) {
  require(!released_, ErrorCode::InvalidArgument, "graph: already released");
  check_finite(value, "input", "value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::param(const Parameter<T>& p) {
  Var<T> v = input(p.value, true);
  nodes_[v.id].param_id = p.id;
  nodes_[v.id].op = "param";
  return v;
}

template <typename T>
Var<T> Graph<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward, const char* op) {
  require(!released_, ErrorCode::InvalidArgument, "graph: already released");
  check_finite(value, op, "value");
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var<T>& in : inputs) {
    require(in.graph == this, ErrorCode::InvalidArgument, std::string("graph: op '") + op + "' mixes graphs");
    require(in.id < nodes_.size(), ErrorCode::InvalidArgument, "graph: input does not precede node");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var<T> v) const {
  require(v.graph == this, ErrorCode::InvalidArgument, "graph: var belongs to another graph");
  require(!released_, ErrorCode::InvalidArgument, "graph: activations released");
  return node(v.id).value;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var<T> v) const {
  const Node& n = node(v.id);
  require(n.grad.has_value(), ErrorCode::InvalidArgument, "graph: no gradient for node (backward not run or not reachable)");
  return *n.grad;
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.grad) n.grad.emplace(n.value.shape());
  return *n.grad;
}

template <typename T>
void Graph<T>::on_backward(Var<T> v, std::function<void()> hook) {
  require(v.graph == this, ErrorCode::InvalidArgument, "graph: var belongs to another graph");
  nodes_.at(v.id).hooks.push_back(std::move(hook));
}

template <typename T>
GradientMap<T> Graph<T>::backward(Var<T> loss) {
  require(!released_, ErrorCode::InvalidArgument, "graph: backward after release");
  require(loss.graph == this, ErrorCode::InvalidArgument, "graph: loss belongs to another graph");
  require(loss.id < nodes_.size(), ErrorCode::InvalidArgument, "graph: backward before forward");
  require(nodes_[loss.id].value.size() == 1, ErrorCode::Shape,
          "graph: backward requires a scalar loss, got " + shape_str(nodes_[loss.id].value.shape()));
  for (Node& n : nodes_) n.grad.reset();

  GradientMap<T> out;
  if (!nodes_[loss.id].requires_grad) return out;
  grad_buffer(loss.id).fill(T{1});
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.grad || !n.requires_grad) continue;
    check_finite(*n.grad, n.op, "gradient");
    for (auto& hook : n.hooks) hook();
    if (n.param_id) out.add(*n.param_id, *n.grad);
    if (n.backward) n.backward(*this, *n.grad);
  }
  return out;
}

template <typename T>
void Graph<T>::release() {
  nodes_.clear();
  nodes_.shrink_to_fit();
  released_ = true;
}

template class GradientMap<float>;
template class GradientMap<double>;
template class Graph<float>;
template class Graph<double>;

// ---- primitives -----------------------------------------------------------

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Graph<T>& graph_of(Var<T> v) {
  require(v.graph != nullptr, ErrorCode::InvalidArgument, "op: unbound var");
  return *v.graph;
}

template <typename T>
void same_shape(Var<T> a, Var<T> b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::Shape,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename T>
void require_rank(Var<T> x, std::size_t rank, const char* op) {
  require(x.shape().size() == rank, ErrorCode::Shape,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

// im2col for a single sample: cols[(c*KH + i)*KW + j, y*W + x].
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t KH, std::size_t KW, std::size_t pad,
            T* cols) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < KH; ++i)
      for (std::size_t j = 0; j < KW; ++j) {
        T* row = cols + ((c * KH + i) * KW + j) * HW;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y + i) - static_cast<long>(pad);
          for (std::size_t xx = 0; xx < W; ++xx) {
            const long sx = static_cast<long>(xx + j) - static_cast<long>(pad);
            row[y * W + xx] = (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W))
                                  ? T{0}
                                  : x[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t KH, std::size_t KW, std::size_t pad,
            T* dx) {
  const std::size_t HW = H * W;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < KH; ++i)
      for (std::size_t j = 0; j < KW; ++j) {
        const T* row = cols + ((c * KH + i) * KW + j) * HW;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y + i) - static_cast<long>(pad);
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          for (std::size_t xx = 0; xx < W; ++xx) {
            const long sx = static_cast<long>(xx + j) - static_cast<long>(pad);
            if (sx < 0 || sx >= static_cast<long>(W)) continue;
            dx[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] += row[y * W + xx];
          }
        }
      }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
  require(b.shape()[0] == K, ErrorCode::Shape,
          "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out(Shape{M, N});
  MapMat<T>(out.data(), M, N).noalias() = CMapMat<T>(a.value().data(), M, K) * CMapMat<T>(b.value().data(), K, N);
  const std::size_t ia = a.id, ib = b.id;
  return graph_of(a).record(
      std::move(out), {a, b},
      [ia, ib, M, K, N](Graph<T>& g, const Tensor<T>& gout) {
        CMapMat<T> G(gout.data(), M, N);
        if (g.needs_grad(ia)) {
          const Tensor<T>& bv = g.value(Var<T>{&g, ib});
          MapMat<T>(g.grad_buffer(ia).data(), M, K).noalias() += G * CMapMat<T>(bv.data(), K, N).transpose();
        }
        if (g.needs_grad(ib)) {
          const Tensor<T>& av = g.value(Var<T>{&g, ia});
          MapMat<T>(g.grad_buffer(ib).data(), K, N).noalias() += CMapMat<T>(av.data(), M, K).transpose() * G;
        }
      },
      "matmul");
}

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
  require(x.shape().size() >= 2, ErrorCode::Shape, "add_channel_bias: input rank < 2");
  require_rank(bias, 1, "add_channel_bias");
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  require(bias.shape()[0] == C, ErrorCode::Shape, "add_channel_bias: bias length differs from channel count");
  const std::size_t inner = x.value().size() / (N * C);
  Tensor<T> out = x.value();
  const auto& bv = bias.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      T* p = out.data() + (n * C + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bv[c];
    }
  const std::size_t ix = x.id, ib = bias.id;
  return graph_of(x).record(
      std::move(out), {x, bias},
      [ix, ib, N, C, inner](Graph<T>& g, const Tensor<T>& gout) {
        if (g.needs_grad(ix)) {
          auto dx = g.grad_buffer(ix).values();
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gout[i];
        }
        if (g.needs_grad(ib)) {
          Tensor<T>& db = g.grad_buffer(ib);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
              const T* p = gout.data() + (n * C + c) * inner;
              T s{0};
              for (std::size_t i = 0; i < inner; ++i) s += p[i];
              db[c] += s;
            }
        }
      },
      "add_channel_bias");
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t O = ws[0], KH = ws[2], KW = ws[3];
  require(ws[1] == C, ErrorCode::Shape, "conv2d: weight channels " + shape_str(ws) + " vs input " + shape_str(xs));
  require(KH == 2 * padding + 1 && KW == 2 * padding + 1, ErrorCode::Shape,
          "conv2d: only odd square kernels with same-padding are supported");
  const std::size_t CKK = C * KH * KW, HW = H * W;
  Tensor<T> out(Shape{N, O, H, W});
  std::vector<T> cols(CKK * HW);
  CMapMat<T> Wm(w.value().data(), O, CKK);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(x.value().data() + n * C * HW, C, H, W, KH, KW, padding, cols.data());
    MapMat<T>(out.data() + n * O * HW, O, HW).noalias() = Wm * CMapMat<T>(cols.data(), CKK, HW);
  }
  const std::size_t ix = x.id, iw = w.id;
  return graph_of(x).record(
      std::move(out), {x, w},
      [=](Graph<T>& g, const Tensor<T>& gout) {
        const bool gx = g.needs_grad(ix), gw = g.needs_grad(iw);
        const Tensor<T>& xv = g.value(Var<T>{&g, ix});
        const Tensor<T>& wv = g.value(Var<T>{&g, iw});
        std::vector<T> col(CKK * HW);
        CMapMat<T> Wmat(wv.data(), O, CKK);
        for (std::size_t n = 0; n < N; ++n) {
          CMapMat<T> G(gout.data() + n * O * HW, O, HW);
          if (gw) {
            im2col(xv.data() + n * C * HW, C, H, W, KH, KW, padding, col.data());
            MapMat<T>(g.grad_buffer(iw).data(), O, CKK).noalias() += G * CMapMat<T>(col.data(), CKK, HW).transpose();
          }
          if (gx) {
            MapMat<T>(col.data(), CKK, HW).noalias() = Wmat.transpose() * G;
            col2im(col.data(), C, H, W, KH, KW, padding, g.grad_buffer(ix).data() + n * C * HW);
          }
        }
      },
      "conv2d");
}

template <typename T>
Var<T> avg_pool2d(Var<T> x, std::size_t k) {
  require_rank(x, 4, "avg_pool2d");
  const auto& s = x.shape();
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  require(k >= 1 && H % k == 0 && W % k == 0, ErrorCode::Shape,
          "avg_pool2d: window " + std::to_string(k) + " does not tile " + shape_str(s));
  const std::size_t OH = H / k, OW = W / k;
  const T inv = T{1} / static_cast<T>(k * k);
  Tensor<T> out(Shape{N, C, OH, OW});
  const auto& xv = x.value();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        T acc{0};
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) acc += xv[(nc * H + oy * k + i) * W + ox * k + j];
        out[(nc * OH + oy) * OW + ox] = acc * inv;
      }
  const std::size_t ix = x.id;
  return graph_of(x).record(
      std::move(out), {x},
      [=](Graph<T>& g, const Tensor<T>& gout) {
        Tensor<T>& dx = g.grad_buffer(ix);
        for (std::size_t nc = 0; nc < N * C; ++nc)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const T v = gout[(nc * OH + oy) * OW + ox] * inv;
              for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < k; ++j) dx[(nc * H + oy * k + i) * W + ox * k + j] += v;
            }
      },
      "avg_pool2d");
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = v > T{0} ? v : T{0};
  const std::size_t ix = x.id;
  return graph_of(x).record(
      std::move(out), {x},
      [ix](Graph<T>& g, const Tensor<T>& gout) {
        const auto& xv = g.value(Var<T>{&g, ix});
        auto dx = g.grad_buffer(ix).values();
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (xv[i] > T{0}) dx[i] += gout[i];
      },
      "relu");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return graph_of(a).record(
      std::move(out), {a, b},
      [ia, ib](Graph<T>& g, const Tensor<T>& gout) {
        for (std::size_t id : {ia, ib}) {
          if (!g.needs_grad(id)) continue;
          auto d = g.grad_buffer(id).values();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i];
        }
      },
      "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return graph_of(a).record(
      std::move(out), {a, b},
      [ia, ib](Graph<T>& g, const Tensor<T>& gout) {
        if (g.needs_grad(ia)) {
          auto d = g.grad_buffer(ia).values();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i];
        }
        if (g.needs_grad(ib)) {
          auto d = g.grad_buffer(ib).values();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] -= gout[i];
        }
      },
      "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return graph_of(a).record(
      std::move(out), {a, b},
      [ia, ib](Graph<T>& g, const Tensor<T>& gout) {
        const auto& av = g.value(Var<T>{&g, ia});
        const auto& bv2 = g.value(Var<T>{&g, ib});
        if (g.needs_grad(ia)) {
          auto d = g.grad_buffer(ia).values();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i] * bv2[i];
        }
        if (g.needs_grad(ib)) {
          auto d = g.grad_buffer(ib).values();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i] * av[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> scale(Var<T> x, T s) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v *= s;
  const std::size_t ix = x.id;
  return graph_of(x).record(
      std::move(out), {x},
      [ix, s](Graph<T>& g, const Tensor<T>& gout) {
        auto d = g.grad_buffer(ix).values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * gout[i];
      },
      "scale");
}

template <typename T>
Var<T> clip(Var<T> x, T lo, T hi) {
  require(lo <= hi, ErrorCode::InvalidArgument, "clip: lower bound exceeds upper bound");
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = std::clamp(v, lo, hi);
  const std::size_t ix = x.id;
  return graph_of(x).record(
      std::move(out), {x},
      [ix, lo, hi](Graph<T>& g, const Tensor<T>& gout) {
        const auto& xv = g.value(Var<T>{&g, ix});
        auto d = g.grad_buffer(ix).values();
        for (std::size_t i = 0; i < d.size(); ++i)
          if (xv[i] >= lo && xv[i] <= hi) d[i] += gout[i];
      },
      "clip");
}

template <typename T>
Tensor<T> sign_of(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (T& v : out.values()) v = v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
  return out;
}

template <typename T>
Var<T> sign(Var<T> x) {
  return graph_of(x).record(
      sign_of(x.value()), {x},
      [](Graph<T>&, const Tensor<T>&) { fail(ErrorCode::InvalidArgument, "sign: gradient requested for a forward-only op"); },
      "sign");
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require(logits.rank() == 2, ErrorCode::Shape, "softmax: expected (N, C), got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  Tensor<T> out = logits;
  for (std::size_t n = 0; n < N; ++n) {
    T* row = out.data() + n * C;
    const T mx = *std::max_element(row, row + C);
    T z{0};
    for (std::size_t c = 0; c < C; ++c) z += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < C; ++c) row[c] /= z;
  }
  return out;
}

template <typename T>
Var<T> softmax(Var<T> x) {
  require_rank(x, 2, "softmax");
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  Tensor<T> out = softmax_rows(x.value());
  const std::size_t ix = x.id;
  Graph<T>& graph = graph_of(x);
  const std::size_t out_id = graph.size();
  return graph.record(
      std::move(out), {x},
      [ix, out_id, N, C](Graph<T>& g, const Tensor<T>& gout) {
        const auto& p = g.value(Var<T>{&g, out_id});
        auto d = g.grad_buffer(ix).values();
        for (std::size_t n = 0; n < N; ++n) {
          T dot{0};
          for (std::size_t c = 0; c < C; ++c) dot += gout[n * C + c] * p[n * C + c];
          for (std::size_t c = 0; c < C; ++c) d[n * C + c] += p[n * C + c] * (gout[n * C + c] - dot);
        }
      },
      "softmax");
}

template <typename T>
Var<T> log_softmax(Var<T> x) {
  require_rank(x, 2, "log_softmax");
  const std::size_t N = x.shape()[0], C = x.shape()[1];
  Tensor<T> out = x.value();
  for (std::size_t n = 0; n < N; ++n) {
    T* row = out.data() + n * C;
    const T mx = *std::max_element(row, row + C);
    T z{0};
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) row[c] -= lse;
  }
  const std::size_t ix = x.id;
  Graph<T>& graph = graph_of(x);
  const std::size_t out_id = graph.size();
  return graph.record(
      std::move(out), {x},
      [ix, out_id, N, C](Graph<T>& g, const Tensor<T>& gout) {
        const auto& lp = g.value(Var<T>{&g, out_id});
        auto d = g.grad_buffer(ix).values();
        for (std::size_t n = 0; n < N; ++n) {
          T s{0};
          for (std::size_t c = 0; c < C; ++c) s += gout[n * C + c];
          for (std::size_t c = 0; c < C; ++c) d[n * C + c] += gout[n * C + c] - std::exp(lp[n * C + c]) * s;
        }
      },
      "log_softmax");
}

template <typename T>
Var<T> nll(Var<T> logp, std::span<const int> labels) {
  require_rank(logp, 2, "nll");
  const std::size_t N = logp.shape()[0], C = logp.shape()[1];
  require(labels.size() == N, ErrorCode::Shape, "nll: label count differs from batch size");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int y : lab)
    require(y >= 0 && static_cast<std::size_t>(y) < C, ErrorCode::InvalidArgument,
            "nll: label " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")");
  Tensor<T> out(Shape{N});
  for (std::size_t n = 0; n < N; ++n) out[n] = -logp.value()[n * C + static_cast<std::size_t>(lab[n])];
  const std::size_t ix = logp.id;
  return graph_of(logp).record(
      std::move(out), {logp},
      [ix, C, lab = std::move(lab)](Graph<T>& g, const Tensor<T>& gout) {
        Tensor<T>& d = g.grad_buffer(ix);
        for (std::size_t n = 0; n < lab.size(); ++n) d[n * C + static_cast<std::size_t>(lab[n])] -= gout[n];
      },
      "nll");
}

template <typename T>
Var<T> sum(Var<T> x) {
  T s{0};
  for (T v : x.value().values()) s += v;
  const std::size_t ix = x.id;
  return graph_of(x).record(
      Tensor<T>::scalar(s), {x},
      [ix](Graph<T>& g, const Tensor<T>& gout) {
        for (T& v : g.grad_buffer(ix).values()) v += gout[0];
      },
      "sum");
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  T s{0};
  for (T v : x.value().values()) s += v;
  const T inv = T{1} / static_cast<T>(n);
  const std::size_t ix = x.id;
  return graph_of(x).record(
      Tensor<T>::scalar(s * inv), {x},
      [ix, inv](Graph<T>& g, const Tensor<T>& gout) {
        for (T& v : g.grad_buffer(ix).values()) v += gout[0] * inv;
      },
      "mean");
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return graph_of(x).record(
      std::move(out), {x},
      [ix](Graph<T>& g, const Tensor<T>& gout) {
        auto d = g.grad_buffer(ix).values();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += gout[i];
      },
      "reshape");
}

template <typename T>
Var<T> flatten(Var<T> x) {
  require(!x.shape().empty(), ErrorCode::Shape, "flatten: scalar input");
  const std::size_t N = x.shape()[0];
  return reshape(x, Shape{N, x.value().size() / N});
}

#define ENTPROP_INSTANTIATE_OPS(T)                                         \
  template Var<T> matmul(Var<T>, Var<T>);                                  \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                        \
  template Var<T> conv2d(Var<T>, Var<T>, std::size_t);                     \
  template Var<T> avg_pool2d(Var<T>, std::size_t);                         \
  template Var<T> relu(Var<T>);                                            \
  template Var<T> add(Var<T>, Var<T>);                                     \
  template Var<T> sub(Var<T>, Var<T>);                                     \
  template Var<T> mul(Var<T>, Var<T>);                                     \
  template Var<T> scale(Var<T>, T);                                        \
  template Var<T> clip(Var<T>, T, T);                                      \
  template Var<T> sign(Var<T>);                                            \
  template Var<T> softmax(Var<T>);                                         \
  template Var<T> log_softmax(Var<T>);                                     \
  template Var<T> nll(Var<T>, std::span<const int>);                       \
  template Var<T> sum(Var<T>);                                             \
  template Var<T> mean(Var<T>);                                            \
  template Var<T> reshape(Var<T>, Shape);                                  \
  template Var<T> flatten(Var<T>);                                         \
  template Tensor<T> softmax_rows(const Tensor<T>&);                       \
  template Tensor<T> sign_of(const Tensor<T>&);

ENTPROP_INSTANTIATE_OPS(float)
ENTPROP_INSTANTIATE_OPS(double)

}  // namespace entprop
