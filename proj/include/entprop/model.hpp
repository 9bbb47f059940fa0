// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "entprop/archive.hpp"
#include "entprop/autograd.hpp"
#include "entprop/batch_norm.hpp"

namespace entprop {

enum class ModelKind { MLP, SmallCNN };

/// Architecture description.
///
/// MLP: flatten -> [linear(no bias) -> dual BN -> relu] per width -> linear head.
/// SmallCNN: [conv3x3 pad 1 (no bias) -> dual BN -> relu (-> 2x2 avg pool if the
/// block index is in pool_after)] per width -> global average pool -> linear head.
struct ModelSpec {
  ModelKind kind = ModelKind::SmallCNN;
  Shape input_shape{1, 16, 16};
  std::size_t class_count = 3;
  std::vector<std::size_t> widths{8, 16, 16, 32};
  std::vector<std::size_t> pool_after{0, 2};
  std::uint64_t seed = 0;

  void validate() const;
  /// Closed-form count of trainable scalars: weights, head bias, and both BN
  /// affine pairs per normalization site.
  std::size_t parameter_count() const;
  std::size_t feature_dim() const { return widths.back(); }

  std::string serialize() const;
  static ModelSpec parse(std::string_view text);
};

/// Forward/backward sample counts. One unit is one sample through the network.
struct PassCounter {
  std::uint64_t forward_samples = 0;
  std::uint64_t backward_samples = 0;
  std::uint64_t forward_calls = 0;
  std::uint64_t backward_calls = 0;
};

struct ForwardOptions {
  Route route = Route::Main;
  Mode mode = Mode::Eval;
  bool update_stats = true;
};

template <typename T>
struct ForwardOutput {
  Var<T> features;
  Var<T> logits;
};

template <typename T>
class Model {
 public:
  struct Block {
    Parameter<T> weight;  // conv: (out, in, 3, 3); linear: (in, out)
    DualNormLayer<T> norm;
    bool pool = false;
  };

  Model() = default;
  explicit Model(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }

  /// Records the pass on `graph`. Counts N forward samples now and N backward
  /// samples each time a backward pass reaches the logits.
  ForwardOutput<T> forward(Graph<T>& graph, Var<T> x, ForwardOptions opts);

  /// Registry in id order; every trainable tensor exactly once.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  Parameter<T>& parameter(std::size_t id);

  std::vector<DualNormLayer<T>*> norm_layers();
  std::vector<const DualNormLayer<T>*> norm_layers() const;

  /// Called at the start (after = false) and end (after = true) of every forward.
  using ForwardObserver = std::function<void(const Model&, const ForwardOptions&, bool after)>;
  void set_forward_observer(ForwardObserver observer) { observer_ = std::move(observer); }

  PassCounter& counter() { return counter_; }
  const PassCounter& counter() const { return counter_; }

  void save(Archive& archive) const;
  void save(const std::filesystem::path& path) const;
  static Model load(const Archive& archive);
  static Model load(const std::filesystem::path& path);

  /// Bit-level equality of spec, parameters and every BN statistic.
  bool identical(const Model& other) const;

 private:
  void assign_ids();

  ModelSpec spec_;
  std::vector<Block> blocks_;
  Parameter<T> head_weight_;  // (feature_dim, classes)
  Parameter<T> head_bias_;    // (classes)
  PassCounter counter_;
  ForwardObserver observer_;
};

/// Eval or Train pass without gradients. Train mode updates the routed state's running stats.
template <typename T>
Tensor<T> predict(Model<T>& model, const Tensor<T>& x, Route route, Mode mode);

/// Activations feeding the classifier head, (N, feature_dim).
template <typename T>
Tensor<T> penultimate_features(Model<T>& model, const Tensor<T>& x, Route route, Mode mode);

/// Copies every MBN into its ABN (used after importing weights without ABNs).
template <typename T>
void clone_all_abn_from_mbn(Model<T>& model);

}  // namespace entprop
