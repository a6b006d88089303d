// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace foxacp {

/// Thrown when an argument violates an operation's preconditions.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a trace file is structurally malformed (e.g. bad magic).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a trace file ends before its declared payload.
struct TruncatedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// DenseMatrix: row-major, owning, double storage.
// ---------------------------------------------------------------------------

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ValidationError("DenseMatrix: data length != rows * cols");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// AttentionInputs: per-head dense Q/K/V, each seq_len x head_dim.
// ---------------------------------------------------------------------------

struct AttentionInputs {
  std::size_t seq_len = 0;
  std::size_t head_dim = 0;
  DenseMatrix q, k, v;

  void validate() const {
    if (seq_len < 1 || head_dim < 1) {
      throw ValidationError("AttentionInputs: seq_len and head_dim must be >= 1");
    }
    for (const DenseMatrix* m : {&q, &k, &v}) {
      if (m->rows() != seq_len || m->cols() != head_dim) {
        throw ValidationError("AttentionInputs: q/k/v must all be seq_len x head_dim");
      }
      if (!m->all_finite()) {
        throw ValidationError("AttentionInputs: q/k/v entries must be finite");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// PruneConfig
// ---------------------------------------------------------------------------

enum class BoundMode { explicit_max, query_key_norms, qk_norm_params };
enum class Precision { f64, f32 };

/// Default pruned-weight budget per query row.
inline const double kDefaultEpsilon = std::exp(-10.0);

struct PruneConfig {
  double epsilon = kDefaultEpsilon;
  std::size_t block_q = 64;
  std::size_t block_k = 64;
  BoundMode bound_mode = BoundMode::query_key_norms;
  Precision precision = Precision::f64;

  void validate() const {
    if (!(epsilon > 0.0) || epsilon > 1.0) {
      throw ValidationError("PruneConfig: epsilon must be in (0, 1]");
    }
    if (block_q < 1 || block_k < 1) {
      throw ValidationError("PruneConfig: block sizes must be >= 1");
    }
  }
};

// ---------------------------------------------------------------------------
// Rng: counter-based splitmix64. Identical seed => identical stream on any
// host; child streams fork by seed derivation, never by state sharing.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    // (0, 1] for the log argument.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Independent child stream; deterministic in (seed, stream_id).
  Rng fork(std::uint64_t stream_id) const {
    std::uint64_t z = seed_ ^ (0xD1B54A32D192ED03ULL * (stream_id + 1));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

// ---------------------------------------------------------------------------
// parallel_for: contiguous chunks over [0, n), deterministic result layout.
// Each task index is processed exactly once; callers must write disjoint
// outputs per index.
// ---------------------------------------------------------------------------

template <class Fn>
void parallel_for(std::size_t n, unsigned num_threads, Fn&& fn) {
  if (n == 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  if (num_threads == 0) num_threads = hw ? hw : 1;
  num_threads = static_cast<unsigned>(
      std::min<std::size_t>(num_threads, n));
  if (num_threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(num_threads);
  std::size_t chunk = (n + num_threads - 1) / num_threads;
  for (unsigned t = 0; t < num_threads; ++t) {
    std::size_t lo = t * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace foxacp
