// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"
#include "foxacp/trace.hpp"

// Deterministic synthetic heads with controllable decay regimes. Gates are
// i.i.d. sigmoid(logit) draws around a configurable logit mean; they are not
// learned and are not meant to model language, only to land in the decay
// regime a test or benchmark asks for.

namespace foxacp {

enum class HeadKind { local, global, mixed, custom };

struct HeadProfile {
  HeadKind kind = HeadKind::custom;
  double gate_logit_mean = 0.0;
  double gate_logit_std = 1.0;
  double qk_scale = 1.0;
  bool rms_normalized = true;

  /// Strong decay: mean gate parameter sigmoid(logit) ~ 0.9 with a wide
  /// spread, giving sliding-window-like pruning at long context.
  static HeadProfile local_head() {
    return {HeadKind::local, 2.1972245773362196, 2.5, 1.0, true};
  }

  /// Nearly gate-free: sigmoid(logit) ~ 0.9999, so essentially nothing decays
  /// below any practical threshold.
  static HeadProfile global_head() {
    return {HeadKind::global, 9.2102403669758494, 0.5, 1.0, true};
  }

  /// Intermediate decay between the two regimes above.
  static HeadProfile mixed_head() {
    return {HeadKind::mixed, 4.5951198501345898, 1.5, 1.0, true};
  }

  void validate() const {
    if (!std::isfinite(gate_logit_mean) || !std::isfinite(gate_logit_std) ||
        !std::isfinite(qk_scale) || gate_logit_std < 0.0 || qk_scale <= 0.0) {
      throw ValidationError("HeadProfile: parameters must be finite, std >= 0, scale > 0");
    }
  }
};

namespace detail {

/// Sigmoid of a logit clamped so the result stays strictly inside (0, 1) in
/// double precision.
inline double clamped_sigmoid(double logit) {
  logit = std::min(36.0, std::max(-36.0, logit));
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  double e = std::exp(logit);
  return e / (1.0 + e);
}

}  // namespace detail

inline HeadRecord generate_head(const HeadProfile& profile, std::size_t seq_len,
                                std::size_t head_dim, Rng& rng) {
  profile.validate();
  if (seq_len < 1 || head_dim < 1) {
    throw ValidationError("generate_head: seq_len and head_dim must be >= 1");
  }

  std::vector<double> gates(seq_len);
  for (double& g : gates) {
    g = detail::clamped_sigmoid(profile.gate_logit_mean +
                                profile.gate_logit_std * rng.normal());
  }

  HeadRecord rec;
  rec.trace = build_trace(gates);
  rec.inputs.seq_len = seq_len;
  rec.inputs.head_dim = head_dim;
  for (DenseMatrix* m : {&rec.inputs.q, &rec.inputs.k, &rec.inputs.v}) {
    *m = DenseMatrix(seq_len, head_dim);
    for (double& v : m->data()) v = rng.normal();
  }
  for (DenseMatrix* m : {&rec.inputs.q, &rec.inputs.k}) {
    for (std::size_t i = 0; i < seq_len; ++i) {
      auto row = m->row(i);
      double scale = profile.qk_scale;
      if (profile.rms_normalized) {
        double sq = 0.0;
        for (double v : row) sq += v * v;
        double rms = std::sqrt(sq / static_cast<double>(head_dim));
        if (rms > 0.0) scale /= rms;
      }
      for (double& v : row) v *= scale;
    }
  }
  return rec;
}

/// Deterministic model population: heads fork child rng streams by head
/// index, layer ids go round-robin, and the local/global mix spreads evenly
/// across head indices.
inline std::vector<HeadRecord> generate_model(std::size_t num_layers,
                                              std::size_t heads_per_layer,
                                              double local_fraction, std::size_t seq_len,
                                              std::size_t head_dim, const Rng& rng) {
  if (num_layers < 1 || heads_per_layer < 1) {
    throw ValidationError("generate_model: needs at least one layer and one head");
  }
  if (!(local_fraction >= 0.0) || local_fraction > 1.0) {
    throw ValidationError("generate_model: local_fraction must be in [0, 1]");
  }
  const std::size_t total = num_layers * heads_per_layer;
  std::vector<HeadRecord> records;
  records.reserve(total);
  for (std::size_t h = 0; h < total; ++h) {
    bool is_local = std::floor(static_cast<double>(h + 1) * local_fraction) -
                        std::floor(static_cast<double>(h) * local_fraction) >
                    0.5;
    HeadProfile profile = is_local ? HeadProfile::local_head() : HeadProfile::global_head();
    Rng child = rng.fork(h);
    HeadRecord rec = generate_head(profile, seq_len, head_dim, child);
    rec.head_id = h;
    rec.layer_id = h % num_layers;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace foxacp
