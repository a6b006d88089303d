// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"
#include "foxacp/grid.hpp"

namespace foxacp {

// ---------------------------------------------------------------------------
// Logit upper bounds U >= max |q_i . k_j| / sqrt(d).
// ---------------------------------------------------------------------------

struct LogitBound {
  double value = 0.0;
  BoundMode mode = BoundMode::explicit_max;
};

/// Exact maximization over the causal lower triangle. O(L^2 d); test oracle
/// only, production paths use the norm-based bounds below.
inline LogitBound bound_explicit(const AttentionInputs& inputs) {
  inputs.validate();
  const std::size_t L = inputs.seq_len, d = inputs.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  double best = 0.0;
  for (std::size_t i = 0; i < L; ++i) {
    const auto qi = inputs.q.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      const auto kj = inputs.k.row(j);
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
      best = std::max(best, std::abs(s));
    }
  }
  return {best * inv_sqrt_d, BoundMode::explicit_max};
}

/// Cauchy-Schwarz bound from the max query and key row norms.
inline LogitBound bound_from_norms(const AttentionInputs& inputs) {
  inputs.validate();
  auto max_row_norm = [&](const DenseMatrix& m) {
    double best = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double sq = 0.0;
      for (double v : m.row(i)) sq += v * v;
      best = std::max(best, sq);
    }
    return std::sqrt(best);
  };
  double rho_q = max_row_norm(inputs.q);
  double rho_k = max_row_norm(inputs.k);
  return {rho_q * rho_k / std::sqrt(static_cast<double>(inputs.head_dim)),
          BoundMode::query_key_norms};
}

/// Bound from RMS-norm scaling parameters: rows RMS-normalized then scaled
/// coordinate-wise by gamma have L2 norm at most max|gamma| * sqrt(d), so
/// U = max|gamma_q| * max|gamma_k| * sqrt(d). Usable before any queries are
/// seen, which is what the decode path needs.
inline LogitBound bound_from_qk_norm(std::span<const double> gamma_q,
                                     std::span<const double> gamma_k, std::size_t d) {
  if (gamma_q.empty() || gamma_k.empty() || d < 1) {
    throw ValidationError("bound_from_qk_norm: parameter arrays must be non-empty");
  }
  auto max_abs = [](std::span<const double> g) {
    double best = 0.0;
    for (double v : g) best = std::max(best, std::abs(v));
    return best;
  };
  return {max_abs(gamma_q) * max_abs(gamma_k) * std::sqrt(static_cast<double>(d)),
          BoundMode::qk_norm_params};
}

/// delta = -2U - log L + log eps. Any entry with D_ij < delta has attention
/// weight below eps / L, so a row's total pruned weight stays below eps.
inline double compute_threshold(const LogitBound& bound, std::size_t seq_len,
                                double epsilon) {
  if (!(epsilon > 0.0) || epsilon > 1.0) {
    throw ValidationError("compute_threshold: epsilon must be in (0, 1]");
  }
  if (seq_len < 1) {
    throw ValidationError("compute_threshold: seq_len must be >= 1");
  }
  return -2.0 * bound.value - std::log(static_cast<double>(seq_len)) + std::log(epsilon);
}

// ---------------------------------------------------------------------------
// Boundary search.
// ---------------------------------------------------------------------------

/// Per-query-block-row first unpruned key-block column, plus block counters.
/// first_kept[m] is 0-based; blocks (m, n) with n < first_kept[m] are pruned.
struct BoundarySpec {
  std::size_t num_query_blocks = 0;
  std::size_t num_key_blocks = 0;
  std::vector<std::size_t> first_kept;
  double delta = kNegInf;
  std::size_t total_lower_blocks = 0;
  std::size_t visited_blocks = 0;
  /// Top-right D evaluations performed by the scan; <= M + N by construction.
  std::size_t scan_iterations = 0;
};

/// Pruning rule at exact ties. A block is pruned iff its max D entry is
/// strictly below delta; prune_at_or_below exists only as a fault-injection
/// hook for the verification harness.
enum class TieBreak { prune_strictly_below, prune_at_or_below };

namespace detail {

inline bool prune_block(double top_right, double delta, TieBreak tie) {
  return tie == TieBreak::prune_strictly_below ? top_right < delta
                                               : top_right <= delta;
}

inline void finalize_counters(BoundarySpec& spec, const BlockGrid& grid) {
  spec.total_lower_blocks = 0;
  spec.visited_blocks = 0;
  for (std::size_t m = 0; m < grid.num_query_blocks(); ++m) {
    std::size_t diag = grid.diag_block(m);
    spec.total_lower_blocks += diag + 1;
    spec.visited_blocks += diag - spec.first_kept[m] + 1;
  }
}

}  // namespace detail

/// Single-pass index search for boundary blocks. The shared scan pointer
/// never moves backward: the max entry of block (m, n) is its top-right
/// corner c[q_first(m)] - c[k_last(n)], which is non-increasing in m and
/// non-decreasing in n, so boundaries are monotone across rows.
///
/// A diagonal block's top-right corner has column >= row, hence value >= 0
/// >= delta, so the scan stops at or before the diagonal on its own; the
/// explicit clamp below must never fire and raises if it does.
inline BoundarySpec find_boundary(const GateTrace& trace, double delta,
                                  std::size_t block_q, std::size_t block_k,
                                  TieBreak tie = TieBreak::prune_strictly_below) {
  if (!(delta <= 0.0)) {
    throw ValidationError("find_boundary: delta must be <= 0 (or -inf)");
  }
  BlockGrid grid(trace.seq_len(), block_q, block_k);
  const auto c = trace.cumsum();

  BoundarySpec spec;
  spec.num_query_blocks = grid.num_query_blocks();
  spec.num_key_blocks = grid.num_key_blocks();
  spec.delta = delta;
  spec.first_kept.resize(spec.num_query_blocks);

  std::size_t l = 0;
  for (std::size_t m = 0; m < spec.num_query_blocks; ++m) {
    const double c_row = c[grid.q_first(m)];
    const std::size_t diag = grid.diag_block(m);
    while (l < diag) {
      ++spec.scan_iterations;
      if (!detail::prune_block(c_row - c[grid.k_last(l)], delta, tie)) break;
      ++l;
    }
    if (l == diag) {
      // Clamped at the causal diagonal; must already satisfy the keep rule.
      ++spec.scan_iterations;
      if (detail::prune_block(c_row - c[grid.k_last(diag)], delta, tie)) {
        throw ValidationError("find_boundary: diagonal block failed the keep rule");
      }
    }
    spec.first_kept[m] = l;
  }
  detail::finalize_counters(spec, grid);
  return spec;
}

/// Quadratic oracle: tests every block of every row independently.
inline BoundarySpec find_boundary_oracle(const GateTrace& trace, double delta,
                                         std::size_t block_q, std::size_t block_k,
                                         TieBreak tie = TieBreak::prune_strictly_below) {
  if (!(delta <= 0.0)) {
    throw ValidationError("find_boundary_oracle: delta must be <= 0 (or -inf)");
  }
  BlockGrid grid(trace.seq_len(), block_q, block_k);
  const auto c = trace.cumsum();

  BoundarySpec spec;
  spec.num_query_blocks = grid.num_query_blocks();
  spec.num_key_blocks = grid.num_key_blocks();
  spec.delta = delta;
  spec.first_kept.resize(spec.num_query_blocks);

  for (std::size_t m = 0; m < spec.num_query_blocks; ++m) {
    const double c_row = c[grid.q_first(m)];
    const std::size_t diag = grid.diag_block(m);
    std::size_t first = diag;
    for (std::size_t n = 0; n <= diag; ++n) {
      if (!detail::prune_block(c_row - c[grid.k_last(n)], delta, tie)) {
        first = n;
        break;
      }
    }
    spec.first_kept[m] = first;
  }
  detail::finalize_counters(spec, grid);
  return spec;
}

}  // namespace foxacp
