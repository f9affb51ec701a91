#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "m2gnn/error.hpp"
#include "m2gnn/model.hpp"

namespace m2gnn {

// Binary layout, little-endian throughout:
//   "M2GN" | u16 version | u16 bytes-per-real (8 or 4) | u32 d | u32 users | u32 items | u32 tags
//   then user_emb, item_emb, tag_emb, S, S1, S2, V row-major.
inline constexpr char kCheckpointMagic[4] = {'M', '2', 'G', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class Precision : std::uint16_t { F64 = 8, F32 = 4 };

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits;
  std::memcpy(&bits, &v, sizeof bits);
  for (std::size_t i = 0; i < sizeof bits; ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<unsigned char>& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  if (pos + sizeof(U) > in.size()) throw LoadError("checkpoint truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof bits; ++i) bits |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof bits;
  T v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ModelParams& p, Precision precision = Precision::F64) {
  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(precision));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.dim()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.user.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.item.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tag.rows()));
  for (const Tensor* t : p.families()) {
    for (double x : t->data()) {
      if (precision == Precision::F64) detail::put_le<double>(out, x);
      else detail::put_le<float>(out, static_cast<float>(x));
    }
  }
  return out;
}

inline ModelParams decode_checkpoint(const std::vector<unsigned char>& in) {
  if (in.size() < 4 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0) throw LoadError("not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint16_t>(in, pos);
  if (version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const auto bytes = detail::get_le<std::uint16_t>(in, pos);
  if (bytes != 8 && bytes != 4) throw LoadError("unsupported checkpoint precision");
  const std::size_t d = detail::get_le<std::uint32_t>(in, pos);
  const std::size_t users = detail::get_le<std::uint32_t>(in, pos);
  const std::size_t items = detail::get_le<std::uint32_t>(in, pos);
  const std::size_t tags = detail::get_le<std::uint32_t>(in, pos);
  if (d == 0) throw LoadError("checkpoint has zero dimension");
  ModelParams p;
  p.user = Tensor(users, d);
  p.item = Tensor(items, d);
  p.tag = Tensor(tags, d);
  p.S = Tensor(d, d);
  p.S1 = Tensor(d, d);
  p.S2 = Tensor(d, 1);
  p.V = Tensor(tags, d);
  std::size_t total = 0;
  for (const Tensor* t : p.families()) total += t->size();
  if (in.size() - pos != total * bytes) {
    throw LoadError(in.size() - pos < total * bytes ? "checkpoint truncated" : "checkpoint has trailing bytes");
  }
  for (Tensor* t : p.families()) {
    for (auto& x : t->data()) x = bytes == 8 ? detail::get_le<double>(in, pos) : detail::get_le<float>(in, pos);
  }
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::string& path, Precision precision = Precision::F64) {
  const auto bytes = encode_checkpoint(p, precision);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw LoadError("failed writing checkpoint " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path + ": " + e.what());
  }
}

}  // namespace m2gnn
