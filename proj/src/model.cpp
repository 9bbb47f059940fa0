// SPDX-License-Identifier: Apache-2.0
#include "entprop/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "entprop/rng.hpp"

namespace entprop {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
  return out;
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
bool bits_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

template <typename T>
bool bn_identical(const BNState<T>& a, const BNState<T>& b) {
  return bits_equal(a.gamma.value.storage(), b.gamma.value.storage()) &&
         bits_equal(a.beta.value.storage(), b.beta.value.storage()) && bits_equal(a.running_mean, b.running_mean) &&
         bits_equal(a.running_var, b.running_var) && a.momentum == b.momentum && a.eps == b.eps;
}

}  // namespace

// ---- ModelSpec ------------------------------------------------------------

void ModelSpec::validate() const {
  require(class_count >= 2, ErrorCode::InvalidArgument, "model spec: class_count must be at least 2");
  require(!widths.empty(), ErrorCode::InvalidArgument, "model spec: at least one width required");
  for (std::size_t w : widths) require(w > 0, ErrorCode::InvalidArgument, "model spec: widths must be positive");
  require(!input_shape.empty(), ErrorCode::InvalidArgument, "model spec: empty input shape");
  for (std::size_t d : input_shape) require(d > 0, ErrorCode::InvalidArgument, "model spec: input dims must be positive");
  if (kind == ModelKind::SmallCNN) {
    require(input_shape.size() == 3, ErrorCode::InvalidArgument, "model spec: SmallCNN input must be (C, H, W)");
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t p : pool_after) {
      require(p < widths.size(), ErrorCode::InvalidArgument, "model spec: pool_after index beyond last block");
      require(h % 2 == 0 && w % 2 == 0, ErrorCode::InvalidArgument, "model spec: pooling needs even spatial size");
      h /= 2;
      w /= 2;
    }
    require(h == w, ErrorCode::InvalidArgument, "model spec: global average pool needs a square feature map");
  }
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t total = 0;
  std::size_t in = kind == ModelKind::SmallCNN ? input_shape[0] : shape_numel(input_shape);
  const std::size_t k = kind == ModelKind::SmallCNN ? 9 : 1;
  for (std::size_t w : widths) {
    total += in * w * k;  // weight
    total += 4 * w;       // MBN and ABN gamma/beta
    in = w;
  }
  return total + in * class_count + class_count;
}

std::string ModelSpec::serialize() const {
  std::ostringstream o;
  o << "kind=" << (kind == ModelKind::MLP ? "mlp" : "small_cnn") << "\n"
    << "input_shape=" << join(input_shape) << "\n"
    << "class_count=" << class_count << "\n"
    << "widths=" << join(widths) << "\n"
    << "pool_after=" << join(pool_after) << "\n"
    << "seed=" << seed << "\n";
  return o.str();
}

ModelSpec ModelSpec::parse(std::string_view text) {
  ModelSpec s;
  s.pool_after.clear();
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "kind") {
      require(val == "mlp" || val == "small_cnn", ErrorCode::Io, "model spec: unknown kind '" + val + "'");
      s.kind = val == "mlp" ? ModelKind::MLP : ModelKind::SmallCNN;
    } else if (key == "input_shape") {
      s.input_shape = split_sizes(val);
    } else if (key == "class_count") {
      s.class_count = std::stoull(val);
    } else if (key == "widths") {
      s.widths = split_sizes(val);
    } else if (key == "pool_after") {
      s.pool_after = split_sizes(val);
    } else if (key == "seed") {
      s.seed = std::stoull(val);
    }
  }
  s.validate();
  return s;
}

// ---- Model ----------------------------------------------------------------

template <typename T>
Model<T>::Model(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  Rng rng = substream(spec_.seed, "init");
  const bool cnn = spec_.kind == ModelKind::SmallCNN;
  std::size_t in = cnn ? spec_.input_shape[0] : shape_numel(spec_.input_shape);
  for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
    const std::size_t w = spec_.widths[i];
    Block b;
    const std::string prefix = "blocks." + std::to_string(i);
    b.weight.name = prefix + ".weight";
    b.weight.value = cnn ? kaiming_uniform<T>(Shape{w, in, 3, 3}, in * 9, rng) : kaiming_uniform<T>(Shape{in, w}, in, rng);
    b.norm = DualNormLayer<T>(w);
    b.norm.mbn.gamma.name = prefix + ".mbn.gamma";
    b.norm.mbn.beta.name = prefix + ".mbn.beta";
    b.norm.abn.gamma.name = prefix + ".abn.gamma";
    b.norm.abn.beta.name = prefix + ".abn.beta";
    b.pool = cnn && std::find(spec_.pool_after.begin(), spec_.pool_after.end(), i) != spec_.pool_after.end();
    blocks_.push_back(std::move(b));
    in = w;
  }
  head_weight_.name = "head.weight";
  head_weight_.value = kaiming_uniform<T>(Shape{in, spec_.class_count}, in, rng);
  head_bias_.name = "head.bias";
  head_bias_.value = Tensor<T>(Shape{spec_.class_count}, T{0});
  assign_ids();
  for (auto* n : norm_layers()) n->clone_abn_from_mbn();
}

template <typename T>
void Model<T>::assign_ids() {
  std::size_t id = 0;
  for (Parameter<T>* p : parameters()) p->id = id++;
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (Block& b : blocks_) {
    out.push_back(&b.weight);
    out.push_back(&b.norm.mbn.gamma);
    out.push_back(&b.norm.mbn.beta);
    out.push_back(&b.norm.abn.gamma);
    out.push_back(&b.norm.abn.beta);
  }
  out.push_back(&head_weight_);
  out.push_back(&head_bias_);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Model<T>::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return std::vector<const Parameter<T>*>(ps.begin(), ps.end());
}

template <typename T>
Parameter<T>& Model<T>::parameter(std::size_t id) {
  auto ps = parameters();
  require(id < ps.size(), ErrorCode::InvalidArgument, "model: unknown parameter id " + std::to_string(id));
  return *ps[id];
}

template <typename T>
std::vector<DualNormLayer<T>*> Model<T>::norm_layers() {
  std::vector<DualNormLayer<T>*> out;
  for (Block& b : blocks_) out.push_back(&b.norm);
  return out;
}

template <typename T>
std::vector<const DualNormLayer<T>*> Model<T>::norm_layers() const {
  std::vector<const DualNormLayer<T>*> out;
  for (const Block& b : blocks_) out.push_back(&b.norm);
  return out;
}

template <typename T>
ForwardOutput<T> Model<T>::forward(Graph<T>& graph, Var<T> x, ForwardOptions opts) {
  require(x.graph == &graph, ErrorCode::InvalidArgument, "model: input belongs to another graph");
  const Shape& xs = x.shape();
  require(xs.size() == spec_.input_shape.size() + 1 &&
              std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), xs.begin() + 1),
          ErrorCode::Shape, "model: input shape " + shape_str(xs) + " does not match (N, " +
                                shape_str(spec_.input_shape).substr(1));
  const std::size_t N = xs[0];
  if (observer_) observer_(*this, opts, false);
  const BNOptions bn{opts.mode, opts.update_stats};
  const bool cnn = spec_.kind == ModelKind::SmallCNN;

  Var<T> h = cnn ? x : flatten(x);
  for (Block& b : blocks_) {
    Var<T> w = graph.param(b.weight);
    h = cnn ? conv2d(h, w, 1) : matmul(h, w);
    h = relu(dual_forward(h, b.norm, opts.route, bn));
    if (b.pool) h = avg_pool2d(h, 2);
  }
  if (cnn) h = flatten(avg_pool2d(h, h.shape()[2]));
  Var<T> logits = add_channel_bias(matmul(h, graph.param(head_weight_)), graph.param(head_bias_));

  counter_.forward_samples += N;
  counter_.forward_calls += 1;
  PassCounter* c = &counter_;
  graph.on_backward(logits, [c, N] {
    c->backward_samples += N;
    c->backward_calls += 1;
  });
  if (observer_) observer_(*this, opts, true);
  return {h, logits};
}

template <typename T>
void Model<T>::save(Archive& a) const {
  a.put_text("model.spec", spec_.serialize());
  a.put_text("model.precision", std::is_same_v<T, float> ? "single" : "double");
  for (const Parameter<T>* p : parameters()) a.put_tensor(p->name, p->value);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i);
    for (const auto& [tag, st] : {std::pair<const char*, const BNState<T>*>{"mbn", &blocks_[i].norm.mbn},
                                  std::pair<const char*, const BNState<T>*>{"abn", &blocks_[i].norm.abn}}) {
      const Shape s{st->channels()};
      a.put_tensor(prefix + "." + tag + ".running_mean", Tensor<T>(s, st->running_mean));
      a.put_tensor(prefix + "." + tag + ".running_var", Tensor<T>(s, st->running_var));
    }
  }
}

template <typename T>
void Model<T>::save(const std::filesystem::path& path) const {
  Archive a;
  save(a);
  a.put_text("checkpoint.kind", "model");
  a.save(path);
}

template <typename T>
Model<T> Model<T>::load(const Archive& a) {
  require(a.contains("model.spec"), ErrorCode::Version, "checkpoint: not a model checkpoint (no model.spec)");
  Model m(ModelSpec::parse(a.get_text("model.spec")));
  for (Parameter<T>* p : m.parameters()) {
    Tensor<T> t = a.get_tensor<T>(p->name);
    require(t.shape() == p->value.shape(), ErrorCode::Version, "checkpoint: shape mismatch for " + p->name);
    p->value = std::move(t);
  }
  for (std::size_t i = 0; i < m.blocks_.size(); ++i) {
    const std::string prefix = "blocks." + std::to_string(i);
    for (auto [tag, st] : {std::pair<const char*, BNState<T>*>{"mbn", &m.blocks_[i].norm.mbn},
                           std::pair<const char*, BNState<T>*>{"abn", &m.blocks_[i].norm.abn}}) {
      st->running_mean = a.get_tensor<T>(prefix + "." + tag + ".running_mean").storage();
      st->running_var = a.get_tensor<T>(prefix + "." + tag + ".running_var").storage();
      require(st->running_mean.size() == st->channels() && st->running_var.size() == st->gamma.value.size(),
              ErrorCode::Version, "checkpoint: BN statistics size mismatch in " + prefix);
    }
  }
  return m;
}

template <typename T>
Model<T> Model<T>::load(const std::filesystem::path& path) {
  return load(Archive::load(path));
}

template <typename T>
bool Model<T>::identical(const Model& other) const {
  if (spec_.serialize() != other.spec_.serialize()) return false;
  auto a = parameters();
  auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->value.shape() != b[i]->value.shape() || !bits_equal(a[i]->value.storage(), b[i]->value.storage()))
      return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (!bn_identical(blocks_[i].norm.mbn, other.blocks_[i].norm.mbn) ||
        !bn_identical(blocks_[i].norm.abn, other.blocks_[i].norm.abn))
      return false;
  return true;
}

template <typename T>
Tensor<T> predict(Model<T>& model, const Tensor<T>& x, Route route, Mode mode) {
  Graph<T> g;
  auto out = model.forward(g, g.input(x), ForwardOptions{route, mode, true});
  return out.logits.value();
}

template <typename T>
Tensor<T> penultimate_features(Model<T>& model, const Tensor<T>& x, Route route, Mode mode) {
  Graph<T> g;
  auto out = model.forward(g, g.input(x), ForwardOptions{route, mode, true});
  return out.features.value();
}

template <typename T>
void clone_all_abn_from_mbn(Model<T>& model) {
  for (auto* n : model.norm_layers()) n->clone_abn_from_mbn();
}

template class Model<float>;
template class Model<double>;
template Tensor<float> predict(Model<float>&, const Tensor<float>&, Route, Mode);
template Tensor<double> predict(Model<double>&, const Tensor<double>&, Route, Mode);
template Tensor<float> penultimate_features(Model<float>&, const Tensor<float>&, Route, Mode);
template Tensor<double> penultimate_features(Model<double>&, const Tensor<double>&, Route, Mode);
template void clone_all_abn_from_mbn(Model<float>&);
template void clone_all_abn_from_mbn(Model<double>&);

}  // namespace entprop
