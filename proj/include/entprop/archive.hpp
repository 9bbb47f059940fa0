// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "entprop/tensor.hpp"

namespace entprop {

/// Versioned container of named arrays. Layout (all integers little-endian):
///
///   magic        8 bytes  "ENTPROP\0"
///   version      u32      (kArchiveVersion)
///   entry_count  u32
///   entries, in name order:
///     name_len   u16, name bytes (UTF-8, no terminator)
///     dtype      u8       1 = f32, 2 = f64, 3 = i64, 4 = text
///     rank       u8
///     dims       u64 x rank
///     byte_len   u64, payload (row-major, IEEE-754 / two's complement)
class Archive {
 public:
  static constexpr std::uint32_t kArchiveVersion = 1;

  enum class DType : std::uint8_t { F32 = 1, F64 = 2, I64 = 3, Text = 4 };

  struct Entry {
    DType dtype = DType::F64;
    Shape shape;
    std::vector<std::uint8_t> bytes;
  };

  template <typename T>
  void put_tensor(const std::string& name, const Tensor<T>& t);
  void put_i64(const std::string& name, const std::vector<std::int64_t>& values);
  void put_text(const std::string& name, const std::string& text);

  /// Converts from whichever float type was stored.
  template <typename T>
  Tensor<T> get_tensor(const std::string& name) const;
  std::vector<std::int64_t> get_i64(const std::string& name) const;
  std::string get_text(const std::string& name) const;

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Entry& entry(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  static Archive deserialize(const std::vector<std::uint8_t>& bytes);

  /// Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace entprop
