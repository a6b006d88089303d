// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "foxacp/blocked.hpp"
#include "foxacp/core.hpp"
#include "foxacp/pruning.hpp"
#include "foxacp/trace.hpp"

// Savings accounting and CSV report emission. Savings are measured on the
// forward grid only; the backward grid differs by at most block-granularity
// effects that vanish as L grows past the block sizes.

namespace foxacp {

inline constexpr std::size_t kHistogramBins = 20;

struct PerHeadSaving {
  std::size_t head_id = 0;
  std::size_t layer_id = 0;
  double pruned_fraction = 0.0;
};

struct SavingsReport {
  std::vector<PerHeadSaving> per_head;
  /// 5%-wide bins [0,5), [5,10), ..., [95,100]; mass normalized over heads.
  std::array<double, kHistogramBins> histogram{};
  double aggregate_pruned_fraction = 0.0;
};

struct SweepRow {
  double epsilon = 0.0;
  double delta = 0.0;
  double pruned_fraction = 0.0;
};

namespace detail {

inline std::size_t histogram_bin(double fraction) {
  double percent = fraction * 100.0;
  auto bin = static_cast<std::size_t>(std::max(0.0, std::floor(percent / 5.0)));
  return std::min(bin, kHistogramBins - 1);
}

inline double head_pruned_fraction(const HeadRecord& rec, const PruneConfig& config,
                                   const std::optional<LogitBound>& fixed_bound) {
  LogitBound bound = fixed_bound ? *fixed_bound : compute_bound(rec.inputs, config);
  double delta = compute_threshold(bound, rec.inputs.seq_len, config.epsilon);
  BoundarySpec spec = find_boundary(rec.trace, delta, config.block_q, config.block_k);
  return 1.0 - static_cast<double>(spec.visited_blocks) /
                   static_cast<double>(spec.total_lower_blocks);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// fixed_bound overrides per-head bound computation; required for the
/// qk_norm_params mode, whose scaling parameters are not part of HeadRecord.
inline SavingsReport savings_for_traces(std::span<const HeadRecord> records,
                                        const PruneConfig& config,
                                        std::optional<LogitBound> fixed_bound = {}) {
  config.validate();
  if (records.empty()) {
    throw ValidationError("savings_for_traces: no head records");
  }
  SavingsReport report;
  report.per_head.reserve(records.size());
  for (const HeadRecord& rec : records) {
    double fraction = detail::head_pruned_fraction(rec, config, fixed_bound);
    report.per_head.push_back({rec.head_id, rec.layer_id, fraction});
    report.histogram[detail::histogram_bin(fraction)] += 1.0;
    report.aggregate_pruned_fraction += fraction;
  }
  for (double& mass : report.histogram) mass /= static_cast<double>(records.size());
  report.aggregate_pruned_fraction /= static_cast<double>(records.size());
  return report;
}

inline std::vector<SweepRow> sweep_epsilon(std::span<const HeadRecord> records,
                                           PruneConfig config,
                                           std::span<const double> epsilons,
                                           std::optional<LogitBound> fixed_bound = {}) {
  if (records.empty()) {
    throw ValidationError("sweep_epsilon: no head records");
  }
  for (double eps : epsilons) {
    if (!(eps > 0.0) || eps > 1.0) {
      throw ValidationError("sweep_epsilon: epsilons must lie in (0, 1]");
    }
  }
  // The reported delta uses the largest per-head bound, which is a valid
  // bound for every head in the set; fractions use per-head thresholds.
  double max_u = 0.0;
  for (const HeadRecord& rec : records) {
    max_u = std::max(
        max_u, fixed_bound ? fixed_bound->value : compute_bound(rec.inputs, config).value);
  }
  std::vector<SweepRow> rows;
  rows.reserve(epsilons.size());
  for (double eps : epsilons) {
    config.epsilon = eps;
    SweepRow row;
    row.epsilon = eps;
    row.delta = compute_threshold({max_u, config.bound_mode}, records[0].inputs.seq_len, eps);
    row.pruned_fraction =
        savings_for_traces(records, config, fixed_bound).aggregate_pruned_fraction;
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Boundary export for plotting.
// ---------------------------------------------------------------------------

struct BlockDmax {
  std::size_t row_block = 0;
  std::size_t col_block = 0;
  double dmax = 0.0;
};

struct BoundaryExport {
  BoundarySpec boundary;
  std::vector<BlockDmax> dmax_grid;
};

inline BoundaryExport export_boundary(const GateTrace& trace, const PruneConfig& config,
                                      const LogitBound& bound) {
  config.validate();
  double delta = compute_threshold(bound, trace.seq_len(), config.epsilon);
  BoundaryExport out;
  out.boundary = find_boundary(trace, delta, config.block_q, config.block_k);
  BlockGrid grid(trace.seq_len(), config.block_q, config.block_k);
  const auto c = trace.cumsum();
  for (std::size_t m = 0; m < grid.num_query_blocks(); ++m) {
    for (std::size_t n = 0; n <= grid.diag_block(m); ++n) {
      out.dmax_grid.push_back({m, n, c[grid.q_first(m)] - c[grid.k_last(n)]});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV emission. Header rows are part of the interface, byte for byte.
// ---------------------------------------------------------------------------

namespace detail {

inline std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  return out;
}

}  // namespace detail

inline void write_per_head_csv(const std::filesystem::path& path,
                               const SavingsReport& report) {
  auto out = detail::open_csv(path);
  out << "head_id,layer_id,pruned_fraction\n";
  for (const PerHeadSaving& h : report.per_head) {
    out << h.head_id << ',' << h.layer_id << ',' << detail::fmt_double(h.pruned_fraction)
        << '\n';
  }
}

inline void write_histogram_csv(const std::filesystem::path& path,
                                const SavingsReport& report) {
  auto out = detail::open_csv(path);
  out << "bin_low_percent,bin_high_percent,mass\n";
  for (std::size_t b = 0; b < kHistogramBins; ++b) {
    out << b * 5 << ',' << (b + 1) * 5 << ',' << detail::fmt_double(report.histogram[b])
        << '\n';
  }
}

/// Per-layer savings histogram, one row per (layer, bin).
inline void write_per_layer_csv(const std::filesystem::path& path,
                                const SavingsReport& report) {
  auto out = detail::open_csv(path);
  out << "layer_id,bin_low_percent,bin_high_percent,mass\n";
  std::map<std::size_t, std::array<double, kHistogramBins>> layers;
  std::map<std::size_t, std::size_t> counts;
  for (const PerHeadSaving& h : report.per_head) {
    layers[h.layer_id][detail::histogram_bin(h.pruned_fraction)] += 1.0;
    ++counts[h.layer_id];
  }
  for (auto& [layer, bins] : layers) {
    for (std::size_t b = 0; b < kHistogramBins; ++b) {
      out << layer << ',' << b * 5 << ',' << (b + 1) * 5 << ','
          << detail::fmt_double(bins[b] / static_cast<double>(counts[layer])) << '\n';
    }
  }
}

inline void write_sweep_csv(const std::filesystem::path& path,
                            std::span<const SweepRow> rows) {
  auto out = detail::open_csv(path);
  out << "epsilon,delta,pruned_fraction\n";
  for (const SweepRow& r : rows) {
    out << detail::fmt_double(r.epsilon) << ',' << detail::fmt_double(r.delta) << ','
        << detail::fmt_double(r.pruned_fraction) << '\n';
  }
}

inline void write_boundary_csv(const std::filesystem::path& path,
                               const BoundaryExport& exported) {
  auto out = detail::open_csv(path);
  out << "row_block,first_unpruned_col\n";
  for (std::size_t m = 0; m < exported.boundary.first_kept.size(); ++m) {
    out << m << ',' << exported.boundary.first_kept[m] << '\n';
  }
}

inline void write_dmax_csv(const std::filesystem::path& path,
                           const BoundaryExport& exported) {
  auto out = detail::open_csv(path);
  out << "row_block,col_block,dmax\n";
  for (const BlockDmax& b : exported.dmax_grid) {
    out << b.row_block << ',' << b.col_block << ',' << detail::fmt_double(b.dmax) << '\n';
  }
}

}  // namespace foxacp
