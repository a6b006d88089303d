// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "foxacp/core.hpp"

namespace foxacp {

/// Floor applied to per-step log gates. A gate that underflowed to zero
/// upstream would otherwise make the cumulative sums -inf; e^-60 is far below
/// any pruning threshold in use, so the clamp is unobservable downstream.
inline constexpr double kLogGateFloor = -60.0;

// ---------------------------------------------------------------------------
// GateTrace: per-head log forget gates and their cumulative sums c, with
// c[i] = sum_{l<=i} log f_l. c is exactly non-increasing: each prefix sum
// adds a non-positive term and IEEE rounding is monotone.
// ---------------------------------------------------------------------------

class GateTrace {
 public:
  GateTrace() = default;

  static GateTrace from_log_gates(std::vector<double> log_gates) {
    for (double lg : log_gates) {
      if (!(lg <= 0.0)) {
        throw ValidationError("GateTrace: log gates must be <= 0 and not NaN");
      }
    }
    GateTrace t;
    for (double& lg : log_gates) lg = std::max(lg, kLogGateFloor);
    t.log_gates_ = std::move(log_gates);
    t.cumsum_.resize(t.log_gates_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < t.log_gates_.size(); ++i) {
      acc += t.log_gates_[i];
      t.cumsum_[i] = acc;
    }
    return t;
  }

  std::size_t seq_len() const { return log_gates_.size(); }
  std::span<const double> log_gates() const { return log_gates_; }
  std::span<const double> cumsum() const { return cumsum_; }

 private:
  std::vector<double> log_gates_;
  std::vector<double> cumsum_;
};

/// Builds a GateTrace from raw gate values in (0, 1].
inline GateTrace build_trace(std::span<const double> gates) {
  std::vector<double> log_gates(gates.size());
  for (std::size_t i = 0; i < gates.size(); ++i) {
    if (!(gates[i] > 0.0) || gates[i] > 1.0) {
      throw ValidationError("build_trace: gates must lie in (0, 1]");
    }
    log_gates[i] = std::log(gates[i]);
  }
  return GateTrace::from_log_gates(std::move(log_gates));
}

inline GateTrace build_trace(const std::vector<double>& gates) {
  return build_trace(std::span<const double>(gates));
}

// ---------------------------------------------------------------------------
// GateParams: projection producing the scalar forget gate per step.
// ---------------------------------------------------------------------------

struct GateParams {
  std::vector<double> w_f;
  double b_f = 0.0;
};

/// Sigmoid forget gate sigma(w_f . x_t + b_f), strictly inside (0, 1).
inline double gate_from_inputs(std::span<const double> x_t, const GateParams& params) {
  if (x_t.size() != params.w_f.size()) {
    throw ValidationError("gate_from_inputs: dimension mismatch");
  }
  double z = params.b_f;
  for (std::size_t i = 0; i < x_t.size(); ++i) z += params.w_f[i] * x_t[i];
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

/// Decay-bias entry D_ij = c_i - c_j for the lower triangle (0-based, j <= i).
/// The region above the main diagonal is conceptually -inf and never
/// representable here.
inline double decay_entry(const GateTrace& trace, std::size_t i, std::size_t j) {
  if (i >= trace.seq_len() || j > i) {
    throw ValidationError("decay_entry: requires j <= i < seq_len");
  }
  if (i == j) return 0.0;
  return trace.cumsum()[i] - trace.cumsum()[j];
}

}  // namespace foxacp
