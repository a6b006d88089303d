// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "foxacp/core.hpp"

namespace foxacp {

// Block layout of the L x L lower-triangular score grid. Blocks are 0-based;
// ragged tails are allowed, so the last block in either dimension may be
// short and index helpers always report actual extents.
struct BlockGrid {
  std::size_t seq_len;
  std::size_t block_q;
  std::size_t block_k;

  BlockGrid(std::size_t L, std::size_t Bq, std::size_t Bk)
      : seq_len(L), block_q(Bq), block_k(Bk) {
    if (L < 1 || Bq < 1 || Bk < 1) {
      throw ValidationError("BlockGrid: seq_len and block sizes must be >= 1");
    }
  }

  std::size_t num_query_blocks() const { return (seq_len + block_q - 1) / block_q; }
  std::size_t num_key_blocks() const { return (seq_len + block_k - 1) / block_k; }

  std::size_t q_first(std::size_t m) const { return m * block_q; }
  std::size_t q_last(std::size_t m) const {
    return std::min((m + 1) * block_q, seq_len) - 1;
  }
  std::size_t k_first(std::size_t n) const { return n * block_k; }
  std::size_t k_last(std::size_t n) const {
    return std::min((n + 1) * block_k, seq_len) - 1;
  }

  std::size_t query_block_of(std::size_t i) const { return i / block_q; }
  std::size_t key_block_of(std::size_t j) const { return j / block_k; }

  /// Rightmost key block holding any causal (j <= i) column for query block m.
  std::size_t diag_block(std::size_t m) const { return q_last(m) / block_k; }

  /// Number of blocks intersecting the causal lower triangle.
  std::size_t total_lower_blocks() const {
    std::size_t total = 0;
    for (std::size_t m = 0; m < num_query_blocks(); ++m) total += diag_block(m) + 1;
    return total;
  }
};

}  // namespace foxacp
