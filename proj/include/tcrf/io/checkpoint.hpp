#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tcrf/hermitian_field.hpp"

namespace tcrf {

enum class TaskId : std::uint32_t { flow = 1, normalized_flow = 2, t0 = 3, gauduchon = 4 };

/// Binary checkpoint.
///
/// Layout (all integers and floats little-endian):
///   "TCRF"          4 bytes magic
///   version         u32 (= 1)
///   n, N            u32, u32
///   t               f64
///   task id         u32 (TaskId)
///   payload         f64 arrays of N^{2n} values each, in grid order
///                   (x1 slowest, last axis fastest):
///                     φ;
///                     g_{jj̄} for j = 1..n;
///                     Re g_{jk̄}, then Im g_{jk̄}, for j < k in row order
///   crc             u32, CRC-32 of the payload bytes
struct Checkpoint {
  static constexpr std::uint32_t version = 1;
  static constexpr std::size_t header_bytes = 4 + 4 + 4 + 4 + 8 + 4;

  int n = 0;
  int N = 0;
  double t = 0.0;
  TaskId task = TaskId::flow;
  RealArray phi;
  HermitianField metric;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<unsigned char>(v >> s));
}
inline void put_f64(std::vector<unsigned char>& b, double x) {
  const auto v = std::bit_cast<std::uint64_t>(x);
  for (int s = 0; s < 64; s += 8) b.push_back(static_cast<unsigned char>(v >> s));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int s = 0, i = 0; s < 32; s += 8, ++i) v |= std::uint32_t(p[i]) << s;
  return v;
}
inline double get_f64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int s = 0, i = 0; s < 64; s += 8, ++i) v |= std::uint64_t(p[i]) << s;
  return std::bit_cast<double>(v);
}
inline std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  const std::size_t M = c.phi.size();
  const int n = c.metric.n();
  if (n != c.n || c.metric.size() != M) throw CheckpointError("checkpoint arrays do not match the header");
  std::vector<unsigned char> b;
  b.reserve(Checkpoint::header_bytes + 8 * M * (1 + n * n) + 4);
  for (char ch : {'T', 'C', 'R', 'F'}) b.push_back(static_cast<unsigned char>(ch));
  detail::put_u32(b, Checkpoint::version);
  detail::put_u32(b, static_cast<std::uint32_t>(c.n));
  detail::put_u32(b, static_cast<std::uint32_t>(c.N));
  detail::put_f64(b, c.t);
  detail::put_u32(b, static_cast<std::uint32_t>(c.task));
  const std::size_t payload = b.size();
  for (double v : c.phi) detail::put_f64(b, v);
  for (int j = 0; j < n; ++j)
    for (double v : c.metric.diag(j)) detail::put_f64(b, v);
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) {
      for (const cplx& v : c.metric.off(j, k)) detail::put_f64(b, v.real());
      for (const cplx& v : c.metric.off(j, k)) detail::put_f64(b, v.imag());
    }
  detail::put_u32(b, detail::crc32_of(b.data() + payload, b.size() - payload));
  return b;
}

/// Parses and verifies a checkpoint; the model supplies the grid the arrays
/// live on and must match the header.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& b, const ModelPtr& model) {
  if (b.size() < Checkpoint::header_bytes + 4 || std::memcmp(b.data(), "TCRF", 4) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const unsigned char* p = b.data();
  if (detail::get_u32(p + 4) != Checkpoint::version)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(detail::get_u32(p + 4)));
  Checkpoint c;
  c.n = static_cast<int>(detail::get_u32(p + 8));
  c.N = static_cast<int>(detail::get_u32(p + 12));
  c.t = detail::get_f64(p + 16);
  c.task = static_cast<TaskId>(detail::get_u32(p + 24));
  if (c.n != model->n() || c.N != model->N())
    throw CheckpointError("checkpoint grid (n=" + std::to_string(c.n) + ", N=" + std::to_string(c.N) +
                          ") does not match the scenario (n=" + std::to_string(model->n()) +
                          ", N=" + std::to_string(model->N()) + ")");
  const std::size_t M = model->size();
  const std::size_t arrays = 1 + static_cast<std::size_t>(c.n) * c.n;
  const std::size_t payload = 8 * M * arrays;
  if (b.size() != Checkpoint::header_bytes + payload + 4) throw CheckpointError("checkpoint has the wrong size");
  const unsigned char* q = p + Checkpoint::header_bytes;
  if (detail::crc32_of(q, payload) != detail::get_u32(q + payload))
    throw CheckpointError("checkpoint checksum mismatch");
  auto next = [&] {
    const double v = detail::get_f64(q);
    q += 8;
    return v;
  };
  c.phi.resize(M);
  for (auto& v : c.phi) v = next();
  c.metric = HermitianField(model);
  for (int j = 0; j < c.n; ++j)
    for (auto& v : c.metric.diag(j)) v = next();
  for (int j = 0; j < c.n; ++j)
    for (int k = j + 1; k < c.n; ++k) {
      auto& o = c.metric.off(j, k);
      for (auto& v : o) v = cplx(next(), 0.0);
      for (auto& v : o) v = cplx(v.real(), next());
    }
  return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path, const ModelPtr& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, model);
}

}  // namespace tcrf
