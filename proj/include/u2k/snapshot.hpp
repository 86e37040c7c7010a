// Weight snapshot files. Layout: magic "U2KW", version u16, entry count u32;
// per entry: name length u16 + UTF-8 name, ndim u8, dims u32 each, then raw
// 32-bit little-endian floats. Round-trips are bit-exact in f32 mode.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "u2k/common.hpp"
#include "u2k/graph.hpp"
#include "u2k/tensor.hpp"

namespace u2k {

inline constexpr std::uint16_t kSnapshotVersion = 1;

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

template <typename V>
inline void write_le(std::FILE* f, V v) {
  unsigned char buf[sizeof(V)];
  for (std::size_t i = 0; i < sizeof(V); ++i) buf[i] = (unsigned char)((std::uint64_t(v) >> (8 * i)) & 0xff);
  if (std::fwrite(buf, 1, sizeof(V), f) != sizeof(V)) fail_io("snapshot: short write");
}

template <typename V>
inline V read_le(std::FILE* f) {
  unsigned char buf[sizeof(V)];
  if (std::fread(buf, 1, sizeof(V), f) != sizeof(V)) fail_io("snapshot: truncated file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(V); ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return V(v);
}

inline void write_f32(std::FILE* f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le<std::uint32_t>(f, bits);
}

inline float read_f32(std::FILE* f) {
  std::uint32_t bits = read_le<std::uint32_t>(f);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

template <typename T>
inline void save_snapshot(const std::string& path, const std::vector<const Param<T>*>& params) {
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) fail_io("snapshot: cannot open for write: " + path);
  if (std::fwrite("U2KW", 1, 4, f.get()) != 4) fail_io("snapshot: short write");
  detail::write_le<std::uint16_t>(f.get(), kSnapshotVersion);
  detail::write_le<std::uint32_t>(f.get(), std::uint32_t(params.size()));
  for (const Param<T>* p : params) {
    require(p->name.size() < 0x10000, ErrorKind::Io, "snapshot: name too long");
    detail::write_le<std::uint16_t>(f.get(), std::uint16_t(p->name.size()));
    if (std::fwrite(p->name.data(), 1, p->name.size(), f.get()) != p->name.size())
      fail_io("snapshot: short write");
    const auto& dims = p->value.dims();
    detail::write_le<std::uint8_t>(f.get(), std::uint8_t(dims.size()));
    for (int d : dims) detail::write_le<std::uint32_t>(f.get(), std::uint32_t(d));
    for (std::size_t i = 0; i < p->value.size(); ++i) detail::write_f32(f.get(), float(p->value[i]));
  }
}

inline std::map<std::string, Tensor<float>> load_snapshot(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail_io("snapshot: cannot open: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4) fail_io("snapshot: truncated file");
  if (std::memcmp(magic, "U2KW", 4) != 0) fail_io("snapshot: bad magic in " + path);
  std::uint16_t version = detail::read_le<std::uint16_t>(f.get());
  if (version != kSnapshotVersion) fail_io(strfmt("snapshot: unsupported version %u", unsigned(version)));
  std::uint32_t count = detail::read_le<std::uint32_t>(f.get());
  std::map<std::string, Tensor<float>> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::uint16_t nlen = detail::read_le<std::uint16_t>(f.get());
    std::string name(nlen, '\0');
    if (nlen && std::fread(name.data(), 1, nlen, f.get()) != nlen) fail_io("snapshot: truncated file");
    std::uint8_t ndim = detail::read_le<std::uint8_t>(f.get());
    if (ndim < 1 || ndim > 3) fail_io("snapshot: dims overflow in entry '" + name + "'");
    std::vector<int> dims;
    std::size_t n = 1;
    for (int i = 0; i < ndim; ++i) {
      std::uint32_t d = detail::read_le<std::uint32_t>(f.get());
      if (d == 0 || d > (1u << 24)) fail_io("snapshot: dims overflow in entry '" + name + "'");
      dims.push_back(int(d));
      n *= d;
    }
    Tensor<float> t(dims);
    for (std::size_t i = 0; i < n; ++i) t[i] = detail::read_f32(f.get());
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

// Restore parameters in place; every parameter must be present with matching dims.
template <typename T>
inline void apply_snapshot(const std::map<std::string, Tensor<float>>& snap,
                           const std::vector<Param<T>*>& params) {
  for (Param<T>* p : params) {
    auto it = snap.find(p->name);
    if (it == snap.end()) fail_io("snapshot: missing parameter '" + p->name + "'");
    require(it->second.dims() == p->value.dims(), ErrorKind::Io,
            "snapshot: shape mismatch for parameter '" + p->name + "'");
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = T(it->second[i]);
  }
}

template <typename T>
inline std::uint64_t params_checksum(const std::vector<const Param<T>*>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Param<T>* p : params) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      float v = float(p->value[i]);
      h = fnv1a(&v, sizeof(v), h);
    }
  }
  return h;
}

}  // namespace u2k
