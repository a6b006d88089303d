// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"
#include "foxacp/grid.hpp"

// Naive O(L^2 d) oracles for forgetting attention: the full forward pass,
// entry-level and block-level pruned variants, and analytic gradients. These
// exist to validate the blocked kernel and are deliberately written as plain
// two-pass softmax loops with no tiling.

namespace foxacp {

struct AttentionOutput {
  DenseMatrix o;
  /// Attention weights, lower-triangular, zero elsewhere. Populated on request.
  std::optional<DenseMatrix> row_weights;
};

struct AttentionGrads {
  DenseMatrix dq, dk, dv;
  std::vector<double> dlog_gates;
};

namespace detail {

/// keep(i, j) gates which causal entries participate; the diagonal must
/// always be kept by the caller's predicate.
template <class Keep>
AttentionOutput masked_forward(const AttentionInputs& inputs, const GateTrace& trace,
                               Keep&& keep, bool keep_weights) {
  inputs.validate();
  if (trace.seq_len() != inputs.seq_len) {
    throw ValidationError("forward: trace length != seq_len");
  }
  const std::size_t L = inputs.seq_len, d = inputs.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const auto c = trace.cumsum();

  AttentionOutput result;
  result.o = DenseMatrix(L, d);
  if (keep_weights) result.row_weights.emplace(L, L);

  std::vector<double> logits(L);
  for (std::size_t i = 0; i < L; ++i) {
    const auto qi = inputs.q.row(i);
    double row_max = kNegInf;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!keep(i, j)) {
        logits[j] = kNegInf;
        continue;
      }
      const auto kj = inputs.k.row(j);
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
      logits[j] = s * inv_sqrt_d + (c[i] - c[j]);
      row_max = std::max(row_max, logits[j]);
    }
    double denom = 0.0;
    auto oi = result.o.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      if (logits[j] == kNegInf) continue;
      double w = std::exp(logits[j] - row_max);
      denom += w;
      const auto vj = inputs.v.row(j);
      for (std::size_t t = 0; t < d; ++t) oi[t] += w * vj[t];
    }
    for (std::size_t t = 0; t < d; ++t) oi[t] /= denom;
    if (keep_weights) {
      for (std::size_t j = 0; j <= i; ++j) {
        if (logits[j] == kNegInf) continue;
        (*result.row_weights)(i, j) = std::exp(logits[j] - row_max) / denom;
      }
    }
  }
  return result;
}

template <class Keep>
AttentionGrads masked_backward(const AttentionInputs& inputs, const GateTrace& trace,
                               const DenseMatrix& upstream, Keep&& keep) {
  inputs.validate();
  if (trace.seq_len() != inputs.seq_len) {
    throw ValidationError("backward: trace length != seq_len");
  }
  if (upstream.rows() != inputs.seq_len || upstream.cols() != inputs.head_dim) {
    throw ValidationError("backward: upstream must be seq_len x head_dim");
  }
  if (!upstream.all_finite()) {
    throw ValidationError("backward: upstream entries must be finite");
  }
  const std::size_t L = inputs.seq_len, d = inputs.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const auto c = trace.cumsum();

  AttentionGrads grads{DenseMatrix(L, d), DenseMatrix(L, d), DenseMatrix(L, d),
                       std::vector<double>(L, 0.0)};
  std::vector<double> weights(L), dcot(L);
  std::vector<double> dc(L, 0.0);

  for (std::size_t i = 0; i < L; ++i) {
    const auto qi = inputs.q.row(i);
    const auto gi = upstream.row(i);
    double row_max = kNegInf;
    for (std::size_t j = 0; j <= i; ++j) {
      if (!keep(i, j)) {
        weights[j] = kNegInf;
        continue;
      }
      const auto kj = inputs.k.row(j);
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
      weights[j] = s * inv_sqrt_d + (c[i] - c[j]);
      row_max = std::max(row_max, weights[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      if (weights[j] == kNegInf) continue;
      weights[j] = std::exp(weights[j] - row_max);
      denom += weights[j];
    }
    // weights[j] := A_ij; dcot[j] := g_i . v_j.
    double delta_i = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      if (weights[j] == kNegInf) continue;
      weights[j] /= denom;
      const auto vj = inputs.v.row(j);
      double t = 0.0;
      for (std::size_t x = 0; x < d; ++x) t += gi[x] * vj[x];
      dcot[j] = t;
      delta_i += weights[j] * t;
    }
    auto dqi = grads.dq.row(i);
    for (std::size_t j = 0; j <= i; ++j) {
      if (weights[j] == kNegInf) continue;
      double a = weights[j];
      double dz = a * (dcot[j] - delta_i);
      auto dkj = grads.dk.row(j);
      auto dvj = grads.dv.row(j);
      const auto kj = inputs.k.row(j);
      for (std::size_t x = 0; x < d; ++x) {
        dqi[x] += dz * kj[x] * inv_sqrt_d;
        dkj[x] += dz * qi[x] * inv_sqrt_d;
        dvj[x] += a * gi[x];
      }
      dc[i] += dz;
      dc[j] -= dz;
    }
  }
  // D_ij = c_i - c_j and c is a prefix sum, so d(log f_l) is a suffix sum.
  double suffix = 0.0;
  for (std::size_t l = L; l-- > 0;) {
    suffix += dc[l];
    grads.dlog_gates[l] = suffix;
  }
  return grads;
}

}  // namespace detail

/// Full forgetting attention, one softmax row at a time with row-max
/// stabilization.
inline AttentionOutput naive_forward(const AttentionInputs& inputs, const GateTrace& trace,
                                     bool keep_weights = false) {
  return detail::masked_forward(
      inputs, trace, [](std::size_t, std::size_t) { return true; }, keep_weights);
}

/// Entry-level pruned attention: entries with D_ij < delta are dropped from
/// both the numerator and the denominator. The diagonal (D_ii = 0) always
/// survives, so the softmax stays well defined.
inline AttentionOutput naive_pruned_forward(const AttentionInputs& inputs,
                                            const GateTrace& trace, double delta,
                                            bool keep_weights = false) {
  if (!(delta < 0.0)) {
    throw ValidationError("naive_pruned_forward: delta must be < 0");
  }
  const auto c = trace.cumsum();
  return detail::masked_forward(
      inputs, trace,
      [&c, delta](std::size_t i, std::size_t j) { return c[i] - c[j] >= delta; },
      keep_weights);
}

/// Block-level pruned attention: an entry survives iff the maximum D entry of
/// its containing block (the block's top-right corner) is >= delta. This is
/// the reference semantics the blocked kernel must reproduce.
inline AttentionOutput naive_block_pruned_forward(const AttentionInputs& inputs,
                                                  const GateTrace& trace, double delta,
                                                  std::size_t block_q, std::size_t block_k,
                                                  bool keep_weights = false) {
  if (!(delta <= 0.0)) {
    throw ValidationError("naive_block_pruned_forward: delta must be <= 0");
  }
  BlockGrid grid(inputs.seq_len, block_q, block_k);
  const auto c = trace.cumsum();
  auto keep = [&](std::size_t i, std::size_t j) {
    std::size_t m = grid.query_block_of(i), n = grid.key_block_of(j);
    return c[grid.q_first(m)] - c[grid.k_last(n)] >= delta;
  };
  return detail::masked_forward(inputs, trace, keep, keep_weights);
}

/// Gradients of naive_forward w.r.t. q, k, v, and the stored log gates, for
/// the scalar loss <upstream, output>.
inline AttentionGrads naive_backward(const AttentionInputs& inputs, const GateTrace& trace,
                                     const DenseMatrix& upstream) {
  return detail::masked_backward(inputs, trace, upstream,
                                 [](std::size_t, std::size_t) { return true; });
}

/// Gradients of naive_block_pruned_forward under the same block indicator.
inline AttentionGrads naive_block_pruned_backward(const AttentionInputs& inputs,
                                                  const GateTrace& trace, double delta,
                                                  std::size_t block_q, std::size_t block_k,
                                                  const DenseMatrix& upstream) {
  if (!(delta <= 0.0)) {
    throw ValidationError("naive_block_pruned_backward: delta must be <= 0");
  }
  BlockGrid grid(inputs.seq_len, block_q, block_k);
  const auto c = trace.cumsum();
  auto keep = [&](std::size_t i, std::size_t j) {
    std::size_t m = grid.query_block_of(i), n = grid.key_block_of(j);
    return c[grid.q_first(m)] - c[grid.k_last(n)] >= delta;
  };
  return detail::masked_backward(inputs, trace, upstream, keep);
}

/// Per-row total full-attention weight on entries with D_ij < delta: the
/// quantity the threshold construction bounds by epsilon.
inline std::vector<double> pruned_weight_mass(const AttentionInputs& inputs,
                                              const GateTrace& trace, double delta) {
  AttentionOutput full = naive_forward(inputs, trace, /*keep_weights=*/true);
  const auto c = trace.cumsum();
  const std::size_t L = inputs.seq_len;
  std::vector<double> mass(L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (c[i] - c[j] < delta) mass[i] += (*full.row_weights)(i, j);
    }
  }
  return mass;
}

/// pruned_weight_mass against precomputed full-attention weights; avoids
/// recomputing the O(L^2 d) forward when sweeping several thresholds.
inline std::vector<double> pruned_weight_mass(const DenseMatrix& row_weights,
                                              const GateTrace& trace, double delta) {
  const auto c = trace.cumsum();
  const std::size_t L = trace.seq_len();
  std::vector<double> mass(L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (c[i] - c[j] < delta) mass[i] += row_weights(i, j);
    }
  }
  return mass;
}

}  // namespace foxacp
