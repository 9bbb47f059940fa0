// SPDX-License-Identifier: Apache-2.0
#include "entprop/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "entprop/io.hpp"

namespace entprop {

static_assert(std::endian::native == std::endian::little, "archive layout assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'E', 'N', 'T', 'P', 'R', 'O', 'P', '\0'};

template <typename U>
void put_raw(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename U>
  U take() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::vector<std::uint8_t> take_bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(bytes_.begin() + static_cast<long>(pos_), bytes_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorCode::Io, "archive: truncated data");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(Archive::DType d) {
  switch (d) {
    case Archive::DType::F32: return 4;
    case Archive::DType::F64: return 8;
    case Archive::DType::I64: return 8;
    case Archive::DType::Text: return 1;
  }
  fail(ErrorCode::Io, "archive: unknown dtype");
}

}  // namespace

template <typename T>
void Archive::put_tensor(const std::string& name, const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  Entry e;
  e.dtype = std::is_same_v<T, float> ? DType::F32 : DType::F64;
  e.shape = t.shape();
  e.bytes.resize(t.size() * sizeof(T));
  std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
  entries_[name] = std::move(e);
}

void Archive::put_i64(const std::string& name, const std::vector<std::int64_t>& values) {
  Entry e;
  e.dtype = DType::I64;
  e.shape = Shape{values.size()};
  e.bytes.resize(values.size() * 8);
  if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
  entries_[name] = std::move(e);
}

void Archive::put_text(const std::string& name, const std::string& text) {
  Entry e;
  e.dtype = DType::Text;
  e.shape = Shape{text.size()};
  e.bytes.assign(text.begin(), text.end());
  entries_[name] = std::move(e);
}

const Archive::Entry& Archive::entry(const std::string& name) const {
  auto it = entries_.find(name);
  require(it != entries_.end(), ErrorCode::Io, "archive: missing entry '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T> Archive::get_tensor(const std::string& name) const {
  const Entry& e = entry(name);
  const std::size_t n = shape_numel(e.shape);
  std::vector<T> out(n);
  if (e.dtype == DType::F32) {
    std::vector<float> tmp(n);
    std::memcpy(tmp.data(), e.bytes.data(), n * 4);
    std::copy(tmp.begin(), tmp.end(), out.begin());
  } else if (e.dtype == DType::F64) {
    std::vector<double> tmp(n);
    std::memcpy(tmp.data(), e.bytes.data(), n * 8);
    std::copy(tmp.begin(), tmp.end(), out.begin());
  } else {
    fail(ErrorCode::Io, "archive: entry '" + name + "' is not a float tensor");
  }
  return Tensor<T>(e.shape, std::move(out));
}

std::vector<std::int64_t> Archive::get_i64(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.dtype == DType::I64, ErrorCode::Io, "archive: entry '" + name + "' is not i64");
  std::vector<std::int64_t> out(e.bytes.size() / 8);
  if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
  return out;
}

std::string Archive::get_text(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.dtype == DType::Text, ErrorCode::Io, "archive: entry '" + name + "' is not text");
  return std::string(e.bytes.begin(), e.bytes.end());
}

std::vector<std::uint8_t> Archive::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_raw<std::uint32_t>(out, kArchiveVersion);
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    require(name.size() < 65536, ErrorCode::InvalidArgument, "archive: entry name too long");
    put_raw<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_raw<std::uint8_t>(out, static_cast<std::uint8_t>(e.dtype));
    put_raw<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) put_raw<std::uint64_t>(out, d);
    put_raw<std::uint64_t>(out, e.bytes.size());
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }
  return out;
}

Archive Archive::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const auto magic = r.take_bytes(8);
  require(std::equal(magic.begin(), magic.end(), kMagic), ErrorCode::Io, "archive: bad magic (not an entprop archive)");
  const auto version = r.take<std::uint32_t>();
  require(version == kArchiveVersion, ErrorCode::Version,
          "archive: unsupported version " + std::to_string(version) + " (expected " + std::to_string(kArchiveVersion) + ")");
  const auto count = r.take<std::uint32_t>();
  Archive a;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.take<std::uint16_t>();
    const auto nb = r.take_bytes(len);
    std::string name(nb.begin(), nb.end());
    Entry e;
    const auto dt = r.take<std::uint8_t>();
    require(dt >= 1 && dt <= 4, ErrorCode::Io, "archive: unknown dtype in entry '" + name + "'");
    e.dtype = static_cast<DType>(dt);
    const auto rank = r.take<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(static_cast<std::size_t>(r.take<std::uint64_t>()));
    const auto blen = r.take<std::uint64_t>();
    require(blen == shape_numel(e.shape) * dtype_size(e.dtype), ErrorCode::Io,
            "archive: payload size does not match shape for '" + name + "'");
    e.bytes = r.take_bytes(static_cast<std::size_t>(blen));
    a.entries_[name] = std::move(e);
  }
  require(r.done(), ErrorCode::Io, "archive: trailing bytes");
  return a;
}

void Archive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Archive Archive::load(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return deserialize(std::vector<std::uint8_t>(s.begin(), s.end()));
}

template void Archive::put_tensor(const std::string&, const Tensor<float>&);
template void Archive::put_tensor(const std::string&, const Tensor<double>&);
template Tensor<float> Archive::get_tensor(const std::string&) const;
template Tensor<double> Archive::get_tensor(const std::string&) const;

}  // namespace entprop
