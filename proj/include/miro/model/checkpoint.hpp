#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>

#include "miro/core/errors.hpp"
#include "miro/diff/param_store.hpp"

// Checkpoint layout (all integers u64 little-endian):
//   "MIROCKPT" | version | element bytes | tensor count
//   per tensor: name length | name bytes | rank | extents... | raw elements
// Elements are IEEE floats in little-endian byte order.

namespace miro::model {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'I', 'R', 'O', 'C', 'K', 'P', 'T'};
inline constexpr std::uint64_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in, const std::string& path) {
  std::array<char, sizeof(U)> bytes;
  if (!in.read(bytes.data(), bytes.size())) {
    throw ParseError("truncated checkpoint '" + path + "'", 0);
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ParamStore<T>& store, const std::string& path) {
  static_assert(std::is_floating_point_v<T>);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_le<std::uint64_t>(out, kCheckpointVersion);
  detail::write_le<std::uint64_t>(out, sizeof(T));
  detail::write_le<std::uint64_t>(out, store.size());
  for (const auto& e : store.entries()) {
    detail::write_le<std::uint64_t>(out, e.name.size());
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<std::uint64_t>(out, e.value.rank());
    for (std::size_t d : e.value.shape()) detail::write_le<std::uint64_t>(out, d);
    for (T v : e.value.values()) detail::write_le<T>(out, v);
  }
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

template <typename T>
ParamStore<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw ParseError("'" + path + "' is not a checkpoint", 0);
  const auto version = detail::read_le<std::uint64_t>(in, path);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  }
  const auto elem = detail::read_le<std::uint64_t>(in, path);
  if (elem != sizeof(T)) {
    throw ConfigError("checkpoint stores " + std::to_string(elem) + "-byte elements, expected " +
                      std::to_string(sizeof(T)));
  }
  const auto count = detail::read_le<std::uint64_t>(in, path);
  ParamStore<T> store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_le<std::uint64_t>(in, path);
    if (name_len > 4096) throw ParseError("corrupt checkpoint name length", 0);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) {
      throw ParseError("truncated checkpoint '" + path + "'", 0);
    }
    const auto rank = detail::read_le<std::uint64_t>(in, path);
    if (rank > 8) throw ParseError("corrupt checkpoint rank", 0);
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_le<std::uint64_t>(in, path);
    Tensor<T> value(shape);
    for (auto& v : value.values()) v = detail::read_le<T>(in, path);
    store.add(name, std::move(value));
  }
  return store;
}

}  // namespace miro::model
