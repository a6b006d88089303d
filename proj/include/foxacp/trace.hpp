// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"

namespace foxacp {

// Binary trace container, little-endian throughout:
//   magic   8 bytes  "FOXTRC01"
//   H       u32      number of heads
//   L       u32      sequence length
//   d       u32      head dimension
//   per head, f64:   L log gates, then Q, K, V row-major (L x d each)
// Bit-exact round trips are part of the contract; floats are moved as raw
// IEEE-754 bit patterns.

inline constexpr std::array<char, 8> kTraceMagic = {'F', 'O', 'X', 'T', 'R', 'C', '0', '1'};
inline constexpr std::size_t kTraceHeaderBytes = 8 + 3 * 4;

struct HeadRecord {
  GateTrace trace;
  AttentionInputs inputs;
  std::size_t head_id = 0;
  std::size_t layer_id = 0;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void write_trace(const std::filesystem::path& path,
                        std::span<const HeadRecord> records) {
  std::uint32_t num_heads = static_cast<std::uint32_t>(records.size());
  std::uint32_t seq_len = 0, head_dim = 0;
  if (!records.empty()) {
    seq_len = static_cast<std::uint32_t>(records[0].inputs.seq_len);
    head_dim = static_cast<std::uint32_t>(records[0].inputs.head_dim);
  }
  for (const HeadRecord& rec : records) {
    if (rec.inputs.seq_len != seq_len || rec.inputs.head_dim != head_dim ||
        rec.trace.seq_len() != seq_len) {
      throw ValidationError("write_trace: all heads must share seq_len and head_dim");
    }
  }

  std::string buf;
  buf.reserve(kTraceHeaderBytes +
              records.size() * (seq_len + 3ull * seq_len * head_dim) * 8);
  buf.append(kTraceMagic.data(), kTraceMagic.size());
  detail::put_u32(buf, num_heads);
  detail::put_u32(buf, seq_len);
  detail::put_u32(buf, head_dim);
  for (const HeadRecord& rec : records) {
    for (double lg : rec.trace.log_gates()) detail::put_f64(buf, lg);
    for (const DenseMatrix* m : {&rec.inputs.q, &rec.inputs.k, &rec.inputs.v}) {
      for (double v : m->data()) detail::put_f64(buf, v);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("write_trace: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write_trace: short write to " + path.string());
}

inline std::vector<HeadRecord> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_trace: cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < kTraceHeaderBytes ||
      std::memcmp(buf.data(), kTraceMagic.data(), kTraceMagic.size()) != 0) {
    throw FormatError("read_trace: bad magic in " + path.string());
  }
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data()) + 8;
  std::size_t num_heads = detail::get_u32(p);
  std::size_t seq_len = detail::get_u32(p + 4);
  std::size_t head_dim = detail::get_u32(p + 8);

  // Header fields are untrusted; size arithmetic must not overflow.
  std::size_t payload = buf.size() - kTraceHeaderBytes;
  if (num_heads > 0 && (seq_len == 0 || head_dim == 0)) {
    throw FormatError("read_trace: zero-sized heads in " + path.string());
  }
  if (head_dim != 0 &&
      seq_len > std::numeric_limits<std::size_t>::max() / 8 / 4 / head_dim) {
    throw FormatError("read_trace: implausible header in " + path.string());
  }
  std::size_t per_head = (seq_len + 3 * seq_len * head_dim) * 8;
  if (per_head != 0 && payload / per_head < num_heads) {
    throw TruncatedError("read_trace: payload truncated in " + path.string());
  }
  if (payload != num_heads * per_head) {
    throw FormatError("read_trace: trailing bytes in " + path.string());
  }

  std::vector<HeadRecord> records;
  records.reserve(num_heads);
  const unsigned char* cur = reinterpret_cast<const unsigned char*>(buf.data()) + kTraceHeaderBytes;
  for (std::size_t h = 0; h < num_heads; ++h) {
    std::vector<double> log_gates(seq_len);
    for (std::size_t i = 0; i < seq_len; ++i, cur += 8) {
      log_gates[i] = detail::get_f64(cur);
      if (!(log_gates[i] <= 0.0)) {
        throw ValidationError("read_trace: positive log gate in head " + std::to_string(h));
      }
    }
    HeadRecord rec;
    rec.trace = GateTrace::from_log_gates(std::move(log_gates));
    rec.head_id = h;
    rec.inputs.seq_len = seq_len;
    rec.inputs.head_dim = head_dim;
    for (DenseMatrix* m : {&rec.inputs.q, &rec.inputs.k, &rec.inputs.v}) {
      std::vector<double> data(seq_len * head_dim);
      for (double& v : data) {
        v = detail::get_f64(cur);
        cur += 8;
      }
      *m = DenseMatrix(seq_len, head_dim, std::move(data));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace foxacp
