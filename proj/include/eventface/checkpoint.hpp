#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "eventface/tensor.hpp"

// EFCK binary checkpoints:
//   "EFCK" | version u16 | entry count u32 |
//   per entry: name length u16, UTF-8 name, rank u8, dims u32[rank], f64[numel]
// All integers and floats little-endian. Entries are written in name order.
namespace eventface {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  static constexpr char kMagic[4] = {'E', 'F', 'C', 'K'};
  static constexpr std::uint16_t kVersion = 1;

  std::map<std::string, Tensor> entries;

  void put(const std::string& name, const Tensor& t) { entries[name] = t.detach(); }
  bool contains(const std::string& name) const { return entries.count(name) != 0; }
  const Tensor& get(const std::string& name) const {
    auto it = entries.find(name);
    if (it == entries.end()) throw CheckpointError("checkpoint: missing entry '" + name + "'");
    return it->second;
  }
  bool has_prefix(const std::string& prefix) const {
    auto it = entries.lower_bound(prefix);
    return it != entries.end() && it->first.compare(0, prefix.size(), prefix) == 0;
  }

  std::vector<std::uint8_t> serialize() const;
  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + path.string());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }
};

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    bits = std::bit_cast<std::uint64_t>(static_cast<double>(value));
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    if constexpr (std::is_floating_point_v<T>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated data at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put_le<std::uint16_t>(out, kVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xFFFF) throw CheckpointError("checkpoint: entry name too long");
    if (t.rank() > 0xFF) throw CheckpointError("checkpoint: rank too large for '" + name + "'");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : t.values()) detail::put_le<double>(out, v);
  }
  return out;
}

inline Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic (expected EFCK)");
  detail::Reader in(bytes);
  in.string(4);
  const auto version = in.get<std::uint16_t>();
  if (version != kVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = in.get<std::uint16_t>();
    std::string name = in.string(name_len);
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint32_t>();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = in.get<double>();
    if (!ck.entries.emplace(name, Tensor::from(std::move(shape), std::move(data))).second)
      throw CheckpointError("checkpoint: duplicate entry '" + name + "'");
  }
  if (!in.done()) throw CheckpointError("checkpoint: trailing bytes after last entry");
  return ck;
}

}  // namespace eventface
