// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "entprop/dataset.hpp"
#include "entprop/evaluation.hpp"
#include "entprop/trainer.hpp"

using namespace entprop;

namespace {

constexpr std::size_t kRecord = 2 + 3072;

std::vector<std::uint8_t> cifar_bytes() {
  std::vector<std::uint8_t> b(2 * kRecord);
  b[0] = 3;
  b[1] = 7;
  b[kRecord] = 1;
  b[kRecord + 1] = 99;
  for (std::size_t i = 0; i < 3072; ++i) {
    b[2 + i] = static_cast<std::uint8_t>(i % 256);
    b[kRecord + 2 + i] = static_cast<std::uint8_t>(255 - i % 256);
  }
  return b;
}

}  // namespace

TEST_CASE("CIFAR-100 binary records") {
  const auto bytes = cifar_bytes();
  const auto d = parse_cifar100_binary(bytes);
  CHECK(d.size() == 2);
  CHECK(d.labels == std::vector<int>{7, 99});
  CHECK(d.class_count == 100);
  CHECK(d.images.shape() == Shape{2, 3, 32, 32});
  // Plane-major: channel 1, row 0, column 0 is byte 1024 of the pixel block.
  CHECK(d.images[1024] == static_cast<float>(1024 % 256) / 255.0f);
  CHECK(d.images[3072 + 5] == 250.0f / 255.0f);

  // Pixel bytes survive the float conversion exactly.
  for (std::size_t i = 0; i < 3072; ++i) CHECK(static_cast<int>(std::lround(d.images[i] * 255.0f)) == bytes[2 + i]);

  const auto path = std::filesystem::temp_directory_path() / "entprop_test_cifar.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK(load_cifar100_binary(path).images == d.images);
  std::filesystem::remove(path);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_cifar100_binary(truncated), Error);
  auto bad_label = bytes;
  bad_label[1] = 100;
  CHECK_THROWS_AS(parse_cifar100_binary(bad_label), Error);
  try {
    load_cifar100_binary("/nonexistent/entprop/data.bin");
    FAIL("expected NotFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotFound);
  }
}

TEST_CASE("synthetic tasks are deterministic and balanced") {
  for (Shape shape : {Shape{8}, Shape{3, 8, 8}}) {
    SyntheticSpec s;
    s.classes = 4;
    s.sample_shape = shape;
    s.samples_per_class = 25;
    s.seed = 11;
    const auto a = synth_clusters(s), b = synth_clusters(s);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK_NOTHROW(a.validate());
    CHECK(a.size() == 100);
    CHECK(a.sample_shape() == shape);
    for (int c = 0; c < 4; ++c) CHECK(std::count(a.labels.begin(), a.labels.end(), c) == 25);
    CHECK_FALSE(synth_clusters(s, 1).images == a.images);
    s.seed = 12;
    CHECK_FALSE(synth_clusters(s).images == a.images);
  }
  SyntheticSpec bad;
  bad.spread = 0;
  CHECK_THROWS_AS(synth_clusters(bad), Error);
  bad = SyntheticSpec{};
  bad.classes = 1;
  CHECK_THROWS_AS(synth_clusters(bad), Error);
}

TEST_CASE("batches cover the epoch") {
  SyntheticSpec s;
  s.sample_shape = {5};
  s.samples_per_class = 11;
  const auto d = synth_clusters(s);

  const auto whole = batches(d, 100, 1, 0);
  CHECK(whole.size() == 1);
  CHECK(whole[0].size() == d.size());

  const auto bs = batches(d, 4, 1, 0);
  CHECK(bs.size() == 9);  // 33 rows: eight of 4, one of 1
  CHECK(bs.back().size() == 1);
  std::multiset<std::int64_t> ids;
  for (const auto& b : bs) ids.insert(b.sample_ids.begin(), b.sample_ids.end());
  CHECK(ids == std::multiset<std::int64_t>(d.sample_ids.begin(), d.sample_ids.end()));

  const auto again = batches(d, 4, 1, 0);
  for (std::size_t i = 0; i < bs.size(); ++i) CHECK(bs[i].x == again[i].x);
  CHECK(epoch_order(33, 1, 0) != epoch_order(33, 1, 1));
  auto order = epoch_order(33, 5, 2);
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == i);

  const std::vector<std::size_t> rows{3, 0};
  const auto b = make_batch(d, rows);
  CHECK(b.labels == std::vector<int>{d.labels[3], d.labels[0]});
  CHECK(b.x[0] == d.images[3 * 5]);
  CHECK_THROWS_AS(batches(d, 0, 1, 0), Error);
}

TEST_CASE("a nearly noiseless task is learnable") {
  SyntheticSpec s;
  s.sample_shape = {1, 8, 8};
  s.samples_per_class = 60;
  s.spread = 0.01;
  s.seed = 3;
  ModelSpec ms;
  ms.kind = ModelKind::MLP;
  ms.input_shape = s.sample_shape;
  ms.widths = {32};
  ms.pool_after = {};
  ms.class_count = 3;
  Model<float> m(ms);
  TrainerConfig cfg = TrainerConfig::defaults_for(Method::Vanilla);
  cfg.epochs = 10;
  cfg.optimizer.lr = 0.05;
  run_training(m, synth_clusters(s), cfg);
  CHECK(standard_accuracy(m, synth_clusters(s, 1)) > 0.95);
}

TEST_CASE("dataset archive round trip") {
  SyntheticSpec s;
  s.sample_shape = {2, 4, 4};
  s.samples_per_class = 3;
  const auto d = synth_clusters(s);
  Archive a;
  d.save(a);
  const auto back = Dataset::load(Archive::deserialize(a.serialize()));
  CHECK(back.images == d.images);
  CHECK(back.labels == d.labels);
  CHECK(back.sample_ids == d.sample_ids);
  CHECK(back.class_count == d.class_count);

  Dataset dup = d;
  dup.sample_ids[1] = dup.sample_ids[0];
  CHECK_THROWS_AS(dup.validate(), Error);
  Dataset out_of_range = d;
  out_of_range.labels[0] = 3;
  CHECK_THROWS_AS(out_of_range.validate(), Error);
}
