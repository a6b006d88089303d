// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"

// Streaming one-token-at-a-time attention with online pruning-boundary
// maintenance. The decay bias of a retained entry only shrinks as decoding
// advances, so eviction is front-contiguous and the boundary index never
// moves backward; evicted entries can be discarded outright.

namespace foxacp {

class DecodeState {
 public:
  DecodeState(std::size_t head_dim, double delta)
      : head_dim_(head_dim), delta_(delta) {
    if (head_dim < 1) throw ValidationError("DecodeState: head_dim must be >= 1");
    if (!(delta < 0.0)) throw ValidationError("DecodeState: delta must be < 0");
  }

  std::size_t head_dim() const { return head_dim_; }
  double delta() const { return delta_; }
  /// Index of the oldest retained cache entry (0-based position).
  std::size_t boundary() const { return boundary_; }
  std::size_t position() const { return position_; }
  std::size_t cache_len() const { return cache_.size(); }
  double cum_log_gate() const { return cum_log_gate_; }

  struct StepResult {
    std::vector<double> output;
    std::size_t evicted = 0;
  };

  /// Appends (k_i, v_i, c_i), evicts entries with c_i - c_entry < delta from
  /// the front, and attends over what remains.
  StepResult step(std::span<const double> q_i, std::span<const double> k_i,
                  std::span<const double> v_i, double log_f_i) {
    if (q_i.size() != head_dim_ || k_i.size() != head_dim_ || v_i.size() != head_dim_) {
      throw ValidationError("decode_step: q/k/v must have length head_dim");
    }
    if (!(log_f_i <= 0.0)) {
      throw ValidationError("decode_step: log forget gate must be <= 0");
    }
    cum_log_gate_ += std::max(log_f_i, kLogGateFloor);

    Entry entry;
    entry.key.assign(k_i.begin(), k_i.end());
    entry.value.assign(v_i.begin(), v_i.end());
    entry.cum_log_gate = cum_log_gate_;
    cache_.push_back(std::move(entry));

    StepResult result;
    while (cum_log_gate_ - cache_.front().cum_log_gate < delta_) {
      cache_.pop_front();
      ++boundary_;
      ++result.evicted;
    }

    // Softmax with decay bias over the retained window, row-max stabilized.
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    std::vector<double> logits(cache_.size());
    double row_max = kNegInf;
    for (std::size_t t = 0; t < cache_.size(); ++t) {
      double dot = 0.0;
      for (std::size_t x = 0; x < head_dim_; ++x) dot += q_i[x] * cache_[t].key[x];
      logits[t] = dot * inv_sqrt_d + (cum_log_gate_ - cache_[t].cum_log_gate);
      row_max = std::max(row_max, logits[t]);
    }
    result.output.assign(head_dim_, 0.0);
    double denom = 0.0;
    for (std::size_t t = 0; t < cache_.size(); ++t) {
      double w = std::exp(logits[t] - row_max);
      denom += w;
      for (std::size_t x = 0; x < head_dim_; ++x) result.output[x] += w * cache_[t].value[x];
    }
    for (std::size_t x = 0; x < head_dim_; ++x) result.output[x] /= denom;

    ++position_;
    return result;
  }

 private:
  struct Entry {
    std::vector<double> key, value;
    double cum_log_gate = 0.0;
  };

  std::size_t head_dim_;
  double delta_;
  std::size_t boundary_ = 0;
  std::size_t position_ = 0;
  double cum_log_gate_ = 0.0;
  std::deque<Entry> cache_;
};

struct DecodeSequenceResult {
  DenseMatrix outputs;
  std::size_t max_cache_len = 0;
  std::size_t total_evicted = 0;
  std::size_t final_boundary = 0;
};

/// Replays a whole head through the streaming path. delta = -inf disables
/// pruning entirely (no entry is ever evicted).
inline DecodeSequenceResult decode_sequence(const AttentionInputs& inputs,
                                            const GateTrace& trace, double delta) {
  inputs.validate();
  if (trace.seq_len() != inputs.seq_len) {
    throw ValidationError("decode_sequence: trace length != seq_len");
  }
  DecodeState state(inputs.head_dim, delta);
  DecodeSequenceResult result;
  result.outputs = DenseMatrix(inputs.seq_len, inputs.head_dim);
  std::size_t prev_boundary = 0;
  for (std::size_t i = 0; i < inputs.seq_len; ++i) {
    auto step = state.step(inputs.q.row(i), inputs.k.row(i), inputs.v.row(i),
                           trace.log_gates()[i]);
    for (std::size_t x = 0; x < inputs.head_dim; ++x) result.outputs(i, x) = step.output[x];
    result.total_evicted += step.evicted;
    result.max_cache_len = std::max(result.max_cache_len, state.cache_len());
    if (state.boundary() < prev_boundary) {
      throw ValidationError("decode_sequence: boundary moved backward");
    }
    prev_boundary = state.boundary();
  }
  result.final_boundary = state.boundary();
  return result;
}

}  // namespace foxacp
