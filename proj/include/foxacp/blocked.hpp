// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"
#include "foxacp/grid.hpp"
#include "foxacp/pruning.hpp"
#include "foxacp/reference.hpp"

// Tiled forward/backward passes for forgetting attention with adaptive
// computation pruning. Work is organized on the BlockGrid; each query-block
// row m iterates key blocks from boundary.first_kept[m] to its causal
// diagonal, maintaining online-softmax state. Blocks left of the boundary are
// never read.
//
// Query-block rows are independent in the forward pass; the backward pass
// runs three sweeps (row-owned delta, key-block-owned dk/dv, row-owned dq) so
// every output location has exactly one writer and results are bitwise
// identical under any thread count.

namespace foxacp {

struct BlockCounters {
  std::uint64_t visited_blocks = 0;
  std::uint64_t total_lower_blocks = 0;
  std::uint64_t skipped_kv_loads = 0;
  std::uint64_t flops_visited = 0;
  std::uint64_t flops_total = 0;

  double pruned_fraction() const {
    if (total_lower_blocks == 0) return 0.0;
    return 1.0 - static_cast<double>(visited_blocks) / static_cast<double>(total_lower_blocks);
  }
};

/// 4 * B_q * B_k * d matmul flops per visited score+value block pair, with
/// actual (ragged) extents; softmax exponentials are sub-leading and ignored.
inline BlockCounters counters_from_boundary(const BoundarySpec& boundary,
                                            const BlockGrid& grid, std::size_t head_dim) {
  BlockCounters counters;
  counters.visited_blocks = boundary.visited_blocks;
  counters.total_lower_blocks = boundary.total_lower_blocks;
  counters.skipped_kv_loads = 2 * (boundary.total_lower_blocks - boundary.visited_blocks);
  for (std::size_t m = 0; m < grid.num_query_blocks(); ++m) {
    std::uint64_t bq = grid.q_last(m) - grid.q_first(m) + 1;
    std::size_t diag = grid.diag_block(m);
    std::uint64_t cols_total = grid.k_last(diag) + 1;
    std::uint64_t cols_visited = grid.k_last(diag) - grid.k_first(boundary.first_kept[m]) + 1;
    counters.flops_total += 4 * bq * cols_total * head_dim;
    counters.flops_visited += 4 * bq * cols_visited * head_dim;
  }
  return counters;
}

/// Per-block K/V read counts, indexed (query block, key block). Pass to a
/// kernel to audit that pruned blocks are never touched.
struct AccessLog {
  std::size_t num_query_blocks = 0;
  std::size_t num_key_blocks = 0;
  std::vector<std::uint32_t> counts;

  AccessLog(std::size_t M, std::size_t N)
      : num_query_blocks(M), num_key_blocks(N), counts(M * N, 0) {}

  void record(std::size_t m, std::size_t n) { ++counts[m * num_key_blocks + n]; }
  std::uint32_t at(std::size_t m, std::size_t n) const {
    return counts[m * num_key_blocks + n];
  }
};

/// Per-row online-softmax carry: running max, running denominator, and the
/// unnormalized output accumulator.
template <class Scalar>
struct OnlineSoftmaxState {
  std::vector<Scalar> row_max;
  std::vector<Scalar> denom;
  std::vector<Scalar> acc;

  OnlineSoftmaxState(std::size_t rows, std::size_t head_dim)
      : row_max(rows, -std::numeric_limits<Scalar>::infinity()),
        denom(rows, Scalar(0)),
        acc(rows * head_dim, Scalar(0)) {}
};

/// Row max and softmax denominator saved by the forward pass; together they
/// let the backward pass reconstruct attention weights blockwise without
/// re-running the forward recurrence.
struct SavedStats {
  std::vector<double> row_max;
  std::vector<double> row_denom;
};

struct AcpForwardResult {
  AttentionOutput out;
  BoundarySpec boundary;
  BlockCounters counters;
  SavedStats stats;
};

namespace detail {

template <class Scalar>
struct PackedHead {
  std::size_t seq_len, head_dim;
  std::vector<Scalar> q, k, v, c;

  PackedHead(const AttentionInputs& inputs, const GateTrace& trace)
      : seq_len(inputs.seq_len), head_dim(inputs.head_dim) {
    auto pack = [](std::span<const double> src, std::vector<Scalar>& dst) {
      dst.resize(src.size());
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Scalar>(src[i]);
    };
    pack(inputs.q.data(), q);
    pack(inputs.k.data(), k);
    pack(inputs.v.data(), v);
    pack(trace.cumsum(), c);
  }

  const Scalar* q_row(std::size_t i) const { return q.data() + i * head_dim; }
  const Scalar* k_row(std::size_t i) const { return k.data() + i * head_dim; }
  const Scalar* v_row(std::size_t i) const { return v.data() + i * head_dim; }
};

template <class Scalar>
void forward_rows(const PackedHead<Scalar>& head, const BlockGrid& grid,
                  const BoundarySpec& boundary, unsigned num_threads,
                  DenseMatrix& out, SavedStats& stats, AccessLog* access_log) {
  const std::size_t d = head.head_dim;
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();

  parallel_for(grid.num_query_blocks(), num_threads, [&](std::size_t m) {
    const std::size_t r0 = grid.q_first(m), r1 = grid.q_last(m);
    const std::size_t bq = r1 - r0 + 1;
    OnlineSoftmaxState<Scalar> state(bq, d);
    std::vector<Scalar> scores(grid.block_k);

    for (std::size_t n = boundary.first_kept[m]; n <= grid.diag_block(m); ++n) {
      const std::size_t k0 = grid.k_first(n), k1 = grid.k_last(n);
      if (access_log) {
        access_log->record(m, n);  // K block
        access_log->record(m, n);  // V block
      }
      for (std::size_t r = 0; r < bq; ++r) {
        const std::size_t i = r0 + r;
        if (k0 > i) continue;  // block row entirely above the diagonal
        const Scalar* qi = head.q_row(i);
        const Scalar ci = head.c[i];
        Scalar block_max = neg_inf;
        for (std::size_t j = k0; j <= k1; ++j) {
          Scalar s;
          if (j > i) {
            s = neg_inf;  // causal mask inside the diagonal block
          } else {
            const Scalar* kj = head.k_row(j);
            Scalar dot = Scalar(0);
            for (std::size_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
            s = dot * inv_sqrt_d + (ci - head.c[j]);
          }
          scores[j - k0] = s;
          block_max = std::max(block_max, s);
        }
        const Scalar new_max = std::max(state.row_max[r], block_max);
        const Scalar alpha = std::exp(state.row_max[r] - new_max);
        Scalar* acc = state.acc.data() + r * d;
        for (std::size_t t = 0; t < d; ++t) acc[t] *= alpha;
        Scalar partial = Scalar(0);
        for (std::size_t j = k0; j <= k1 && j <= i; ++j) {
          const Scalar p = std::exp(scores[j - k0] - new_max);
          partial += p;
          const Scalar* vj = head.v_row(j);
          for (std::size_t t = 0; t < d; ++t) acc[t] += p * vj[t];
        }
        state.denom[r] = state.denom[r] * alpha + partial;
        state.row_max[r] = new_max;
      }
    }

    for (std::size_t r = 0; r < bq; ++r) {
      const std::size_t i = r0 + r;
      const Scalar inv = Scalar(1) / state.denom[r];
      auto oi = out.row(i);
      for (std::size_t t = 0; t < d; ++t) oi[t] = static_cast<double>(state.acc[r * d + t] * inv);
      stats.row_max[i] = static_cast<double>(state.row_max[r]);
      stats.row_denom[i] = static_cast<double>(state.denom[r]);
    }
  });
}

// Backward sweeps. Attention weights are reconstructed blockwise from the
// saved per-row max and denominator; dz_ij = P_ij ((g_i . v_j) - delta_i).
template <class Scalar>
void backward_sweeps(const PackedHead<Scalar>& head, const BlockGrid& grid,
                     const BoundarySpec& boundary, const SavedStats& stats,
                     const DenseMatrix& upstream, unsigned num_threads,
                     AttentionGrads& grads, AccessLog* access_log) {
  const std::size_t L = head.seq_len, d = head.head_dim;
  const std::size_t M = grid.num_query_blocks();
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));

  std::vector<Scalar> g(L * d), row_max(L), inv_denom(L);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t t = 0; t < d; ++t) g[i * d + t] = static_cast<Scalar>(upstream(i, t));
    row_max[i] = static_cast<Scalar>(stats.row_max[i]);
    inv_denom[i] = Scalar(1) / static_cast<Scalar>(stats.row_denom[i]);
  }

  // P_ij for one block row i restricted to key block n.
  auto block_weights = [&](std::size_t i, std::size_t k0, std::size_t k1, Scalar* p) {
    const Scalar* qi = head.q_row(i);
    const Scalar ci = head.c[i];
    for (std::size_t j = k0; j <= k1; ++j) {
      if (j > i) {
        p[j - k0] = Scalar(0);
        continue;
      }
      const Scalar* kj = head.k_row(j);
      Scalar dot = Scalar(0);
      for (std::size_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
      Scalar s = dot * inv_sqrt_d + (ci - head.c[j]);
      p[j - k0] = std::exp(s - row_max[i]) * inv_denom[i];
    }
  };

  // Sweep 1 (rows): delta_i = sum_j P_ij (g_i . v_j) = g_i . o_i.
  std::vector<Scalar> delta(L, Scalar(0));
  parallel_for(M, num_threads, [&](std::size_t m) {
    std::vector<Scalar> p(grid.block_k);
    for (std::size_t n = boundary.first_kept[m]; n <= grid.diag_block(m); ++n) {
      const std::size_t k0 = grid.k_first(n), k1 = grid.k_last(n);
      if (access_log) {
        access_log->record(m, n);
        access_log->record(m, n);
      }
      for (std::size_t i = grid.q_first(m); i <= grid.q_last(m); ++i) {
        if (k0 > i) continue;
        block_weights(i, k0, k1, p.data());
        const Scalar* gi = g.data() + i * d;
        Scalar acc = Scalar(0);
        for (std::size_t j = k0; j <= k1 && j <= i; ++j) {
          const Scalar* vj = head.v_row(j);
          Scalar t = Scalar(0);
          for (std::size_t x = 0; x < d; ++x) t += gi[x] * vj[x];
          acc += p[j - k0] * t;
        }
        delta[i] += acc;
      }
    }
  });

  // Key blocks n are visited by the contiguous query-row range
  // [m_lo(n), m_hi(n)): diag_block and first_kept are both non-decreasing,
  // so both endpoints advance monotonically with n.
  const std::size_t N = grid.num_key_blocks();
  std::vector<std::size_t> m_lo(N, M), m_hi(N, 0);
  {
    std::size_t lo = 0, hi = 0;
    for (std::size_t n = 0; n < N; ++n) {
      while (lo < M && grid.diag_block(lo) < n) ++lo;
      m_lo[n] = lo;
      while (hi < M && boundary.first_kept[hi] <= n) ++hi;
      m_hi[n] = hi;  // exclusive
    }
  }

  std::vector<double> dc_row(L, 0.0), dc_col(L, 0.0);

  // Sweep 2 (key blocks): dk, dv, and the column part of dc.
  parallel_for(N, num_threads, [&](std::size_t n) {
    const std::size_t k0 = grid.k_first(n), k1 = grid.k_last(n);
    std::vector<Scalar> p(grid.block_k);
    std::vector<Scalar> dk_acc((k1 - k0 + 1) * d, Scalar(0));
    std::vector<Scalar> dv_acc((k1 - k0 + 1) * d, Scalar(0));
    std::vector<Scalar> dzc(k1 - k0 + 1, Scalar(0));
    for (std::size_t m = m_lo[n]; m < m_hi[n]; ++m) {
      if (n < boundary.first_kept[m] || n > grid.diag_block(m)) continue;
      if (access_log) {
        access_log->record(m, n);
        access_log->record(m, n);
      }
      for (std::size_t i = grid.q_first(m); i <= grid.q_last(m); ++i) {
        if (k0 > i) continue;
        block_weights(i, k0, k1, p.data());
        const Scalar* gi = g.data() + i * d;
        const Scalar* qi = head.q_row(i);
        for (std::size_t j = k0; j <= k1 && j <= i; ++j) {
          const Scalar* vj = head.v_row(j);
          Scalar t = Scalar(0);
          for (std::size_t x = 0; x < d; ++x) t += gi[x] * vj[x];
          const Scalar a = p[j - k0];
          const Scalar dz = a * (t - delta[i]);
          Scalar* dkj = dk_acc.data() + (j - k0) * d;
          Scalar* dvj = dv_acc.data() + (j - k0) * d;
          for (std::size_t x = 0; x < d; ++x) {
            dkj[x] += dz * qi[x] * inv_sqrt_d;
            dvj[x] += a * gi[x];
          }
          dzc[j - k0] += dz;
        }
      }
    }
    for (std::size_t j = k0; j <= k1; ++j) {
      for (std::size_t x = 0; x < d; ++x) {
        grads.dk(j, x) = static_cast<double>(dk_acc[(j - k0) * d + x]);
        grads.dv(j, x) = static_cast<double>(dv_acc[(j - k0) * d + x]);
      }
      dc_col[j] = -static_cast<double>(dzc[j - k0]);
    }
  });

  // Sweep 3 (rows): dq and the row part of dc.
  parallel_for(M, num_threads, [&](std::size_t m) {
    std::vector<Scalar> p(grid.block_k);
    for (std::size_t i = grid.q_first(m); i <= grid.q_last(m); ++i) {
      const Scalar* gi = g.data() + i * d;
      Scalar dzr = Scalar(0);
      std::vector<Scalar> dq_acc(d, Scalar(0));
      for (std::size_t n = boundary.first_kept[m]; n <= grid.diag_block(m); ++n) {
        const std::size_t k0 = grid.k_first(n), k1 = grid.k_last(n);
        if (k0 > i) continue;
        block_weights(i, k0, k1, p.data());
        for (std::size_t j = k0; j <= k1 && j <= i; ++j) {
          const Scalar* vj = head.v_row(j);
          const Scalar* kj = head.k_row(j);
          Scalar t = Scalar(0);
          for (std::size_t x = 0; x < d; ++x) t += gi[x] * vj[x];
          const Scalar dz = p[j - k0] * (t - delta[i]);
          for (std::size_t x = 0; x < d; ++x) dq_acc[x] += dz * kj[x];
          dzr += dz;
        }
      }
      for (std::size_t x = 0; x < d; ++x) {
        grads.dq(i, x) = static_cast<double>(dq_acc[x] * inv_sqrt_d);
      }
      dc_row[i] = static_cast<double>(dzr);
    }
  });

  // dD flows into c as (row sum, -column sum); c is a prefix sum of the log
  // gates, so d(log f_l) is the suffix sum of dc.
  double suffix = 0.0;
  for (std::size_t l = L; l-- > 0;) {
    suffix += dc_row[l] + dc_col[l];
    grads.dlog_gates[l] = suffix;
  }
}

inline void check_kernel_args(const AttentionInputs& inputs, const GateTrace& trace,
                              const PruneConfig& config) {
  config.validate();
  inputs.validate();
  if (trace.seq_len() != inputs.seq_len) {
    throw ValidationError("blocked kernel: trace length != seq_len");
  }
}

}  // namespace detail

/// Upper bound for the configured mode. qk_norm_params has no in-band data
/// to derive the bound from; callers must supply one explicitly.
inline LogitBound compute_bound(const AttentionInputs& inputs, const PruneConfig& config) {
  switch (config.bound_mode) {
    case BoundMode::explicit_max:
      return bound_explicit(inputs);
    case BoundMode::query_key_norms:
      return bound_from_norms(inputs);
    case BoundMode::qk_norm_params:
      throw ValidationError(
          "compute_bound: qk_norm_params requires a caller-supplied LogitBound");
  }
  throw ValidationError("compute_bound: unknown bound mode");
}

/// Stage-2 kernel: tiled forward over a precomputed boundary.
inline AcpForwardResult forward_with_boundary(const AttentionInputs& inputs,
                                              const GateTrace& trace,
                                              const PruneConfig& config,
                                              BoundarySpec boundary,
                                              unsigned num_threads = 1,
                                              AccessLog* access_log = nullptr) {
  detail::check_kernel_args(inputs, trace, config);
  BlockGrid grid(inputs.seq_len, config.block_q, config.block_k);
  if (boundary.num_query_blocks != grid.num_query_blocks() ||
      boundary.num_key_blocks != grid.num_key_blocks()) {
    throw ValidationError("forward_with_boundary: boundary does not match block grid");
  }

  AcpForwardResult result;
  result.out.o = DenseMatrix(inputs.seq_len, inputs.head_dim);
  result.stats.row_max.resize(inputs.seq_len);
  result.stats.row_denom.resize(inputs.seq_len);
  if (config.precision == Precision::f64) {
    detail::PackedHead<double> head(inputs, trace);
    detail::forward_rows(head, grid, boundary, num_threads, result.out.o, result.stats,
                         access_log);
  } else {
    detail::PackedHead<float> head(inputs, trace);
    detail::forward_rows(head, grid, boundary, num_threads, result.out.o, result.stats,
                         access_log);
  }
  result.counters = counters_from_boundary(boundary, grid, inputs.head_dim);
  result.boundary = std::move(boundary);
  return result;
}

/// Two-stage ACP forward: boundary search, then tiled iteration from the
/// boundary. The threshold comes from the configured bound mode.
inline AcpForwardResult acp_forward(const AttentionInputs& inputs, const GateTrace& trace,
                                    const PruneConfig& config, const LogitBound& bound,
                                    unsigned num_threads = 1,
                                    AccessLog* access_log = nullptr) {
  detail::check_kernel_args(inputs, trace, config);
  double delta = compute_threshold(bound, inputs.seq_len, config.epsilon);
  BoundarySpec boundary = find_boundary(trace, delta, config.block_q, config.block_k);
  return forward_with_boundary(inputs, trace, config, std::move(boundary), num_threads,
                               access_log);
}

inline AcpForwardResult acp_forward(const AttentionInputs& inputs, const GateTrace& trace,
                                    const PruneConfig& config, unsigned num_threads = 1,
                                    AccessLog* access_log = nullptr) {
  return acp_forward(inputs, trace, config, compute_bound(inputs, config), num_threads,
                     access_log);
}

/// Unpruned baseline: identical kernel with delta = -inf, so every causal
/// block is visited.
inline AcpForwardResult full_blocked_forward(const AttentionInputs& inputs,
                                             const GateTrace& trace,
                                             const PruneConfig& config,
                                             unsigned num_threads = 1,
                                             AccessLog* access_log = nullptr) {
  detail::check_kernel_args(inputs, trace, config);
  BoundarySpec boundary = find_boundary(trace, kNegInf, config.block_q, config.block_k);
  return forward_with_boundary(inputs, trace, config, std::move(boundary), num_threads,
                               access_log);
}

/// Backward pass over the same boundary, using the recompute strategy: only
/// the forward's per-row max and denominator are consumed. Pruned blocks
/// contribute exactly zero gradient and are never read.
inline AttentionGrads acp_backward(const AttentionInputs& inputs, const GateTrace& trace,
                                   const PruneConfig& config, const BoundarySpec& boundary,
                                   const SavedStats& stats, const DenseMatrix& upstream,
                                   unsigned num_threads = 1,
                                   AccessLog* access_log = nullptr) {
  detail::check_kernel_args(inputs, trace, config);
  BlockGrid grid(inputs.seq_len, config.block_q, config.block_k);
  if (boundary.num_query_blocks != grid.num_query_blocks() ||
      boundary.num_key_blocks != grid.num_key_blocks()) {
    throw ValidationError("acp_backward: boundary does not match block grid");
  }
  if (stats.row_max.size() != inputs.seq_len || stats.row_denom.size() != inputs.seq_len) {
    throw ValidationError("acp_backward: stale saved stats (dimension mismatch)");
  }
  if (upstream.rows() != inputs.seq_len || upstream.cols() != inputs.head_dim) {
    throw ValidationError("acp_backward: upstream must be seq_len x head_dim");
  }
  if (!upstream.all_finite()) {
    throw ValidationError("acp_backward: upstream entries must be finite");
  }

  AttentionGrads grads{DenseMatrix(inputs.seq_len, inputs.head_dim),
                       DenseMatrix(inputs.seq_len, inputs.head_dim),
                       DenseMatrix(inputs.seq_len, inputs.head_dim),
                       std::vector<double>(inputs.seq_len, 0.0)};
  if (config.precision == Precision::f64) {
    detail::PackedHead<double> head(inputs, trace);
    detail::backward_sweeps(head, grid, boundary, stats, upstream, num_threads, grads,
                            access_log);
  } else {
    detail::PackedHead<float> head(inputs, trace);
    detail::backward_sweeps(head, grid, boundary, stats, upstream, num_threads, grads,
                            access_log);
  }
  return grads;
}

}  // namespace foxacp
