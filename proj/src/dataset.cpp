// SPDX-License-Identifier: Apache-2.0
#include "entprop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

#include "entprop/io.hpp"
#include "entprop/rng.hpp"

namespace entprop {

void Dataset::validate() const {
  require(class_count >= 2, ErrorCode::InvalidArgument, "dataset: need at least two classes");
  require(!labels.empty() && images.rank() >= 2 && images.dim(0) == labels.size(), ErrorCode::Shape,
          "dataset: image count does not match label count");
  require(sample_ids.size() == labels.size(), ErrorCode::Shape, "dataset: sample id count does not match label count");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < class_count, ErrorCode::InvalidArgument,
            "dataset: label " + std::to_string(y) + " out of range");
  std::unordered_set<std::int64_t> seen(sample_ids.begin(), sample_ids.end());
  require(seen.size() == sample_ids.size(), ErrorCode::InvalidArgument, "dataset: duplicate sample ids");
  for (float v : images.values())
    require(v >= 0.0f && v <= 1.0f, ErrorCode::InvalidArgument, "dataset: pixel outside [0, 1]");
}

void Dataset::save(Archive& a) const {
  a.put_tensor("dataset.images", images);
  a.put_i64("dataset.labels", std::vector<std::int64_t>(labels.begin(), labels.end()));
  a.put_i64("dataset.sample_ids", sample_ids);
  a.put_i64("dataset.class_count", {static_cast<std::int64_t>(class_count)});
}

Dataset Dataset::load(const Archive& a) {
  Dataset d;
  d.images = a.get_tensor<float>("dataset.images");
  const auto labels = a.get_i64("dataset.labels");
  d.labels.assign(labels.begin(), labels.end());
  d.sample_ids = a.get_i64("dataset.sample_ids");
  const auto cc = a.get_i64("dataset.class_count");
  require(cc.size() == 1 && cc[0] >= 2, ErrorCode::Io, "dataset archive: bad class_count");
  d.class_count = static_cast<std::size_t>(cc[0]);
  d.validate();
  return d;
}

Dataset parse_cifar100_binary(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kPixels = 3 * 32 * 32;
  constexpr std::size_t kRecord = 2 + kPixels;
  require(!bytes.empty() && bytes.size() % kRecord == 0, ErrorCode::InvalidArgument,
          "cifar100: file length " + std::to_string(bytes.size()) + " is not a multiple of " + std::to_string(kRecord) +
              " (truncated?)");
  const std::size_t n = bytes.size() / kRecord;
  Dataset d;
  d.class_count = 100;
  std::vector<float> pixels(n * kPixels);
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* rec = bytes.data() + r * kRecord;
    require(rec[1] < 100, ErrorCode::InvalidArgument,
            "cifar100: record " + std::to_string(r) + " has fine label " + std::to_string(rec[1]));
    d.labels.push_back(rec[1]);
    d.sample_ids.push_back(static_cast<std::int64_t>(r));
    for (std::size_t i = 0; i < kPixels; ++i) pixels[r * kPixels + i] = static_cast<float>(rec[2 + i]) / 255.0f;
  }
  d.images = Tensor<float>(Shape{n, 3, 32, 32}, std::move(pixels));
  return d;
}

Dataset load_cifar100_binary(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return parse_cifar100_binary(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Dataset synth_clusters(const SyntheticSpec& spec, std::uint64_t split) {
  require(spec.classes >= 2, ErrorCode::InvalidArgument, "synth: need at least two classes");
  require(spec.samples_per_class >= 1, ErrorCode::InvalidArgument, "synth: samples_per_class must be positive");
  require(spec.spread > 0.0, ErrorCode::InvalidArgument, "synth: spread must be positive");
  require(spec.sample_shape.size() == 1 || spec.sample_shape.size() == 3, ErrorCode::InvalidArgument,
          "synth: sample shape must be {D} or {C, H, W}");
  const std::size_t per = shape_numel(spec.sample_shape);
  const std::size_t n = spec.classes * spec.samples_per_class;
  // Class prototypes come from the seed alone so train and test splits share them.
  Rng proto = substream(spec.seed, "synth.prototypes");
  Rng rng = substream(spec.seed, "synth.samples", split);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<float> pixels(n * per);
  Dataset d;
  d.class_count = spec.classes;

  if (spec.sample_shape.size() == 1) {
    std::vector<double> centers(spec.classes * per);
    for (double& c : centers) c = 0.2 + 0.6 * unif(proto);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = i % spec.classes;
      for (std::size_t j = 0; j < per; ++j)
        pixels[i * per + j] = static_cast<float>(std::clamp(centers[y * per + j] + spec.spread * normal(rng), 0.0, 1.0));
      d.labels.push_back(static_cast<int>(y));
    }
  } else {
    const std::size_t C = spec.sample_shape[0], H = spec.sample_shape[1], W = spec.sample_shape[2];
    struct Grating {
      double angle, freq;
    };
    std::vector<Grating> g(spec.classes);
    const double offset = unif(proto) * std::numbers::pi;
    for (std::size_t y = 0; y < spec.classes; ++y)
      g[y] = {offset + std::numbers::pi * static_cast<double>(y) / static_cast<double>(spec.classes),
              2.0 * std::numbers::pi / (4.0 + 2.0 * static_cast<double>(y % 2))};
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t y = i % spec.classes;
      const double phase = 2.0 * std::numbers::pi * unif(rng);
      const double amp = 0.25 + 0.15 * unif(rng);
      const double base = 0.35 + 0.3 * unif(rng);
      const double ca = std::cos(g[y].angle), sa = std::sin(g[y].angle);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t q = 0; q < W; ++q) {
            const double t = g[y].freq * (ca * static_cast<double>(q) + sa * static_cast<double>(r)) + phase;
            const double v = base + amp * std::sin(t) + spec.spread * normal(rng);
            pixels[i * per + (c * H + r) * W + q] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
      d.labels.push_back(static_cast<int>(y));
    }
  }
  Shape shape{n};
  shape.insert(shape.end(), spec.sample_shape.begin(), spec.sample_shape.end());
  d.images = Tensor<float>(std::move(shape), std::move(pixels));
  d.sample_ids.resize(n);
  std::iota(d.sample_ids.begin(), d.sample_ids.end(), std::int64_t{0});
  return d;
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows) {
  Batch b;
  b.x = gather_rows(data.images, rows);
  for (std::size_t r : rows) {
    b.labels.push_back(data.labels[r]);
    b.sample_ids.push_back(data.sample_ids[r]);
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = substream(seed, "shuffle", epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  require(batch_size >= 1, ErrorCode::InvalidArgument, "batches: batch_size must be positive");
  const auto order = epoch_order(data.size(), seed, epoch);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(data, std::span(order).subspan(start, end - start)));
  }
  return out;
}

}  // namespace entprop
