// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "foxacp/core.hpp"
#include "foxacp/decay.hpp"
#include "foxacp/reference.hpp"

// Harness utilities shared by unit tests, the acceptance suite, and the CLI
// verification command: seeded instance helpers, a finite-difference gradient
// oracle, and an independent plain-softmax reference. Nothing here calls into
// the blocked kernel.

namespace foxacp::testing {

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng,
                                 double scale = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

inline AttentionInputs random_inputs(std::size_t seq_len, std::size_t head_dim, Rng& rng,
                                     double qk_scale = 1.0) {
  AttentionInputs inputs;
  inputs.seq_len = seq_len;
  inputs.head_dim = head_dim;
  inputs.q = random_matrix(seq_len, head_dim, rng, qk_scale);
  inputs.k = random_matrix(seq_len, head_dim, rng, qk_scale);
  inputs.v = random_matrix(seq_len, head_dim, rng);
  return inputs;
}

/// Gates drawn uniformly from (lo, hi]; lo > 0 keeps the log finite.
inline std::vector<double> random_gates(std::size_t seq_len, Rng& rng, double lo = 0.01,
                                        double hi = 1.0) {
  std::vector<double> gates(seq_len);
  for (double& g : gates) g = hi - (hi - lo) * rng.uniform();
  return gates;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// max |a - b| / max(||b||_inf, floor): the usual gradcheck metric, scaled by
/// the reference gradient's magnitude.
inline double rel_error(std::span<const double> got, std::span<const double> want,
                        double floor = 1e-12) {
  double scale = floor, diff = 0.0;
  for (double w : want) scale = std::max(scale, std::abs(w));
  for (std::size_t i = 0; i < got.size(); ++i) diff = std::max(diff, std::abs(got[i] - want[i]));
  return diff / scale;
}

inline double rel_error(const DenseMatrix& got, const DenseMatrix& want) {
  return rel_error(got.data(), want.data());
}

/// Any forward map (inputs, trace) -> L x d output.
using ForwardFn = std::function<DenseMatrix(const AttentionInputs&, const GateTrace&)>;

/// Central finite differences of the scalar loss <upstream, forward(...)>
/// w.r.t. q, k, v, and the stored log gates.
inline AttentionGrads finite_difference_grads(const AttentionInputs& inputs,
                                              const GateTrace& trace,
                                              const DenseMatrix& upstream,
                                              const ForwardFn& forward, double step = 1e-5) {
  auto loss = [&](const AttentionInputs& in, const GateTrace& tr) {
    DenseMatrix out = forward(in, tr);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.rows(); ++i) {
      for (std::size_t t = 0; t < out.cols(); ++t) acc += upstream(i, t) * out(i, t);
    }
    return acc;
  };

  const std::size_t L = inputs.seq_len, d = inputs.head_dim;
  AttentionGrads grads{DenseMatrix(L, d), DenseMatrix(L, d), DenseMatrix(L, d),
                       std::vector<double>(L, 0.0)};

  AttentionInputs work = inputs;
  auto fd_matrix = [&](DenseMatrix& target, DenseMatrix& grad) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t t = 0; t < d; ++t) {
        double saved = target(i, t);
        target(i, t) = saved + step;
        double up = loss(work, trace);
        target(i, t) = saved - step;
        double down = loss(work, trace);
        target(i, t) = saved;
        grad(i, t) = (up - down) / (2.0 * step);
      }
    }
  };
  fd_matrix(work.q, grads.dq);
  fd_matrix(work.k, grads.dk);
  fd_matrix(work.v, grads.dv);

  std::vector<double> log_gates(trace.log_gates().begin(), trace.log_gates().end());
  for (std::size_t l = 0; l < L; ++l) {
    double saved = log_gates[l];
    log_gates[l] = saved + step;
    double up = loss(inputs, GateTrace::from_log_gates(log_gates));
    log_gates[l] = saved - step;
    double down = loss(inputs, GateTrace::from_log_gates(log_gates));
    log_gates[l] = saved;
    grads.dlog_gates[l] = (up - down) / (2.0 * step);
  }
  return grads;
}

/// Standard causal softmax attention with no decay bias; independent check
/// for the gates-identically-one degeneracy.
inline DenseMatrix plain_softmax_attention(const AttentionInputs& inputs) {
  inputs.validate();
  const std::size_t L = inputs.seq_len, d = inputs.head_dim;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  DenseMatrix out(L, d);
  std::vector<double> logits(L);
  for (std::size_t i = 0; i < L; ++i) {
    double row_max = kNegInf;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) s += inputs.q(i, t) * inputs.k(j, t);
      logits[j] = s * inv_sqrt_d;
      row_max = std::max(row_max, logits[j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      logits[j] = std::exp(logits[j] - row_max);
      denom += logits[j];
    }
    for (std::size_t j = 0; j <= i; ++j) {
      for (std::size_t t = 0; t < d; ++t) out(i, t) += logits[j] / denom * inputs.v(j, t);
    }
  }
  return out;
}

}  // namespace foxacp::testing
