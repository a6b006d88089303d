// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "foxacp/foxacp.hpp"
#include "foxacp/testing.hpp"

// Seeded self-verification battery behind `foxacp verify`. Every check is an
// invariant of the pruning construction or an oracle-equivalence statement;
// failures name the broken invariant and drive a nonzero exit.

namespace foxacp::verify {

struct Options {
  std::uint64_t seed = 42;
  double epsilon = kDefaultEpsilon;
  unsigned threads = 1;
  bool inject_fault = false;
  std::filesystem::path scratch_dir = std::filesystem::temp_directory_path();
};

class Reporter {
 public:
  void pass(const std::string& name, const std::string& detail = "") {
    std::printf("[ok]   %s%s%s\n", name.c_str(), detail.empty() ? "" : ": ",
                detail.c_str());
  }
  void fail(const std::string& name, const std::string& detail) {
    std::printf("[FAIL] %s: %s\n", name.c_str(), detail.c_str());
    ++failures_;
    if (first_failure_.empty()) first_failure_ = name;
  }
  void check(bool ok, const std::string& name, const std::string& detail) {
    if (ok) {
      pass(name, detail);
    } else {
      fail(name, detail);
    }
  }
  int failures() const { return failures_; }
  const std::string& first_failure() const { return first_failure_; }

 private:
  int failures_ = 0;
  std::string first_failure_;
};

namespace detail {

struct Instance {
  HeadRecord rec;
  std::string label;
};

inline std::vector<Instance> regime_instances(std::uint64_t seed,
                                              std::vector<std::size_t> seq_lens,
                                              std::vector<std::size_t> head_dims,
                                              std::size_t seeds_per_combo) {
  std::vector<Instance> out;
  Rng root(seed);
  std::uint64_t stream = 0;
  const std::vector<std::pair<const char*, HeadProfile>> regimes = {
      {"local", HeadProfile::local_head()},
      {"global", HeadProfile::global_head()},
      {"mixed", HeadProfile::mixed_head()},
  };
  for (std::size_t L : seq_lens) {
    for (std::size_t d : head_dims) {
      for (const auto& [name, profile] : regimes) {
        for (std::size_t s = 0; s < seeds_per_combo; ++s) {
          Rng child = root.fork(stream++);
          Instance inst;
          inst.rec = generate_head(profile, L, d, child);
          inst.label = std::string(name) + " L=" + std::to_string(L) +
                       " d=" + std::to_string(d) + " s=" + std::to_string(s);
          out.push_back(std::move(inst));
        }
      }
    }
  }
  return out;
}

inline void check_trace_roundtrip(Reporter& rep, const Options& opt) {
  Rng rng(opt.seed ^ 0x7261636bull);
  std::vector<HeadRecord> records;
  for (std::size_t h = 0; h < 3; ++h) {
    HeadRecord rec = generate_head(HeadProfile::mixed_head(), 65, 7, rng);
    rec.head_id = h;
    records.push_back(std::move(rec));
  }
  auto path = opt.scratch_dir / "foxacp_verify_trace.foxtrc";
  write_trace(path, records);
  auto back = read_trace(path);
  bool ok = back.size() == records.size();
  for (std::size_t h = 0; ok && h < back.size(); ++h) {
    ok = back[h].inputs.q == records[h].inputs.q &&
         back[h].inputs.k == records[h].inputs.k &&
         back[h].inputs.v == records[h].inputs.v &&
         std::equal(back[h].trace.log_gates().begin(), back[h].trace.log_gates().end(),
                    records[h].trace.log_gates().begin());
  }
  std::filesystem::remove(path);
  rep.check(ok, "trace round-trip", ok ? "bitwise" : "mismatch after read back");
}

inline void check_rng_determinism(Reporter& rep, const Options& opt) {
  Rng a(opt.seed), b(opt.seed);
  for (std::size_t i = 0; i < 1000000; ++i) {
    if (a.next_u64() != b.next_u64()) {
      rep.fail("rng determinism", "streams diverged at draw " + std::to_string(i));
      return;
    }
  }
  rep.pass("rng determinism", "10^6 draws identical");
}

inline void check_boundary(Reporter& rep, const Options& opt) {
  Rng rng(opt.seed ^ 0xb0071dull);
  std::size_t mismatches = 0, work_violations = 0, monotone_violations = 0,
              diag_violations = 0;
  std::size_t cases = opt.inject_fault ? 1 : 200;
  TieBreak tie =
      opt.inject_fault ? TieBreak::prune_at_or_below : TieBreak::prune_strictly_below;

  for (std::size_t case_idx = 0; case_idx < cases; ++case_idx) {
    std::size_t L, bq, bk;
    GateTrace trace;
    double delta;
    if (opt.inject_fault) {
      // Constant integer decay with an exactly representable threshold, so
      // blocks tie at D = delta and the flipped tie-break prunes them.
      L = 64;
      bq = bk = 1;
      trace = GateTrace::from_log_gates(std::vector<double>(L, -1.0));
      delta = -10.0;
    } else {
      L = 1 + static_cast<std::size_t>(rng.uniform() * 300);
      bq = 1 + static_cast<std::size_t>(rng.uniform() * 70);
      bk = 1 + static_cast<std::size_t>(rng.uniform() * 70);
      if (case_idx % 4 == 0) {
        trace = GateTrace::from_log_gates(std::vector<double>(L, -1.0));
      } else {
        Rng g = rng.fork(case_idx);
        trace = build_trace(testing::random_gates(L, g));
      }
      delta = -rng.uniform_in(0.5, 40.0);
    }

    BoundarySpec got = find_boundary(trace, delta, bq, bk, tie);
    BoundarySpec want = find_boundary_oracle(trace, delta, bq, bk);
    if (got.first_kept != want.first_kept) ++mismatches;
    if (got.scan_iterations > got.num_query_blocks + got.num_key_blocks) ++work_violations;
    BlockGrid grid(L, bq, bk);
    for (std::size_t m = 0; m < got.first_kept.size(); ++m) {
      if (m > 0 && got.first_kept[m] < got.first_kept[m - 1]) ++monotone_violations;
      if (got.first_kept[m] > grid.diag_block(m)) ++diag_violations;
    }
  }
  rep.check(mismatches == 0, "boundary-oracle agreement",
            std::to_string(mismatches) + " mismatches over " + std::to_string(cases) +
                " cases");
  rep.check(work_violations == 0, "boundary linear work (iterations <= M+N)",
            std::to_string(work_violations) + " violations");
  rep.check(monotone_violations == 0, "boundary monotonicity",
            std::to_string(monotone_violations) + " violations");
  rep.check(diag_violations == 0, "diagonal-block safety",
            std::to_string(diag_violations) + " violations");
}

inline void check_kernels(Reporter& rep, const Options& opt) {
  auto instances = regime_instances(opt.seed ^ 0x6b65726eull, {1, 7, 33, 128, 257}, {1, 5, 16}, 1);
  double worst_full = 0.0, worst_acp = 0.0;
  bool counters_ok = true, no_touch_ok = true;
  for (const auto& inst : instances) {
    PruneConfig cfg;
    cfg.epsilon = opt.epsilon;
    cfg.block_q = 16;
    cfg.block_k = 16;

    auto naive = naive_forward(inst.rec.inputs, inst.rec.trace);
    auto full = full_blocked_forward(inst.rec.inputs, inst.rec.trace, cfg, opt.threads);
    worst_full = std::max(worst_full, testing::max_abs_diff(full.out.o, naive.o));

    BlockGrid grid(inst.rec.inputs.seq_len, cfg.block_q, cfg.block_k);
    AccessLog log(grid.num_query_blocks(), grid.num_key_blocks());
    auto acp = acp_forward(inst.rec.inputs, inst.rec.trace, cfg, opt.threads, &log);
    auto block_oracle = naive_block_pruned_forward(inst.rec.inputs, inst.rec.trace,
                                                   acp.boundary.delta, cfg.block_q,
                                                   cfg.block_k);
    worst_acp = std::max(worst_acp, testing::max_abs_diff(acp.out.o, block_oracle.o));
    if (acp.counters.visited_blocks != acp.boundary.visited_blocks) counters_ok = false;
    for (std::size_t m = 0; m < grid.num_query_blocks(); ++m) {
      for (std::size_t n = 0; n < acp.boundary.first_kept[m]; ++n) {
        if (log.at(m, n) != 0) no_touch_ok = false;
      }
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max |blocked - naive| = %.3e", worst_full);
  rep.check(worst_full <= 1e-10, "full blocked kernel vs naive oracle", buf);
  std::snprintf(buf, sizeof(buf), "max |acp - block-indicator oracle| = %.3e", worst_acp);
  rep.check(worst_acp <= 1e-10, "acp kernel vs block-indicator oracle", buf);
  rep.check(counters_ok, "visited-block counter consistency",
            counters_ok ? "visited == boundary count" : "counter mismatch");
  rep.check(no_touch_ok, "no-touch guarantee (pruned K/V never read)",
            no_touch_ok ? "zero reads left of boundary" : "pruned block was read");
}

inline void check_safety(Reporter& rep, const Options& opt) {
  auto instances =
      regime_instances(opt.seed ^ 0x73616665ull, {16, 64, 256, 1024}, {4, 16}, 3);
  double max_mass = 0.0, worst_ratio = 0.0;
  std::size_t checked = 0;
  for (const auto& inst : instances) {
    const auto& rec = inst.rec;
    auto full = naive_forward(rec.inputs, rec.trace, /*keep_weights=*/true);
    double max_v = rec.inputs.v.max_abs();
    LogitBound bounds[] = {
        bound_explicit(rec.inputs),
        bound_from_norms(rec.inputs),
        bound_from_qk_norm(std::vector<double>{1.0}, std::vector<double>{1.0},
                           rec.inputs.head_dim),
    };
    for (const LogitBound& bound : bounds) {
      double delta = compute_threshold(bound, rec.inputs.seq_len, opt.epsilon);
      auto mass = pruned_weight_mass(*full.row_weights, rec.trace, delta);
      for (double m : mass) max_mass = std::max(max_mass, m);
      ++checked;

      PruneConfig cfg;
      cfg.epsilon = opt.epsilon;
      cfg.block_q = 32;
      cfg.block_k = 32;
      auto acp = acp_forward(rec.inputs, rec.trace, cfg, bound, opt.threads);
      double diff = testing::max_abs_diff(acp.out.o, full.o);
      double budget =
          (opt.epsilon / (1.0 - opt.epsilon) + opt.epsilon) * max_v + 1e-9;
      worst_ratio = std::max(worst_ratio, diff / budget);
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "max pruned weight %.3e < epsilon %.3e (%zu checks)",
                max_mass, opt.epsilon, checked);
  rep.check(max_mass < opt.epsilon, "pruned-mass safety bound", buf);
  std::snprintf(buf, sizeof(buf), "max diff / budget = %.3e", worst_ratio);
  rep.check(worst_ratio <= 1.0, "end-to-end output perturbation", buf);
}

inline void check_gradients(Reporter& rep, const Options& opt) {
  Rng rng(opt.seed ^ 0x67726164ull);
  // Naive backward vs finite differences.
  {
    auto inputs = testing::random_inputs(8, 4, rng);
    auto trace = build_trace(testing::random_gates(8, rng, 0.3));
    auto upstream = testing::random_matrix(8, 4, rng);
    auto got = naive_backward(inputs, trace, upstream);
    auto want = testing::finite_difference_grads(
        inputs, trace, upstream,
        [](const AttentionInputs& in, const GateTrace& tr) {
          return naive_forward(in, tr).o;
        });
    double err = std::max(
        std::max(testing::rel_error(got.dq, want.dq), testing::rel_error(got.dk, want.dk)),
        std::max(testing::rel_error(got.dv, want.dv),
                 testing::rel_error(got.dlog_gates, want.dlog_gates)));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "rel err %.3e", err);
    rep.check(err <= 1e-6, "naive gradient vs finite differences", buf);
  }
  // Blocked backward vs the block-pruned analytic oracle and vs finite
  // differences of the frozen-boundary forward.
  {
    auto rec = generate_head(HeadProfile::local_head(), 96, 8, rng);
    PruneConfig cfg;
    cfg.epsilon = opt.epsilon;
    cfg.block_q = 16;
    cfg.block_k = 16;
    auto upstream = testing::random_matrix(96, 8, rng);
    auto fwd = acp_forward(rec.inputs, rec.trace, cfg, opt.threads);
    auto got = acp_backward(rec.inputs, rec.trace, cfg, fwd.boundary, fwd.stats, upstream,
                            opt.threads);
    auto analytic = naive_block_pruned_backward(rec.inputs, rec.trace, fwd.boundary.delta,
                                                cfg.block_q, cfg.block_k, upstream);
    double diff = std::max(
        std::max(testing::max_abs_diff(got.dq, analytic.dq),
                 testing::max_abs_diff(got.dk, analytic.dk)),
        std::max(testing::max_abs_diff(got.dv, analytic.dv),
                 testing::max_abs_diff(got.dlog_gates, analytic.dlog_gates)));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max abs diff %.3e", diff);
    rep.check(diff <= 1e-8, "acp backward vs analytic oracle", buf);

    auto rec_small = generate_head(HeadProfile::local_head(), 24, 4, rng);
    auto fwd_small = acp_forward(rec_small.inputs, rec_small.trace, cfg, opt.threads);
    auto up_small = testing::random_matrix(24, 4, rng);
    auto got_small = acp_backward(rec_small.inputs, rec_small.trace, cfg, fwd_small.boundary,
                                  fwd_small.stats, up_small, opt.threads);
    BoundarySpec frozen = fwd_small.boundary;
    auto want_fd = testing::finite_difference_grads(
        rec_small.inputs, rec_small.trace, up_small,
        [&](const AttentionInputs& in, const GateTrace& tr) {
          return forward_with_boundary(in, tr, cfg, frozen).out.o;
        });
    double err = std::max(
        std::max(testing::rel_error(got_small.dq, want_fd.dq),
                 testing::rel_error(got_small.dk, want_fd.dk)),
        std::max(testing::rel_error(got_small.dv, want_fd.dv),
                 testing::rel_error(got_small.dlog_gates, want_fd.dlog_gates)));
    std::snprintf(buf, sizeof(buf), "rel err %.3e", err);
    rep.check(err <= 1e-5, "acp backward vs finite differences", buf);
  }
}

inline void check_decode(Reporter& rep, const Options& opt) {
  Rng rng(opt.seed ^ 0xdec0deull);
  double worst = 0.0, max_evicted_mass = 0.0;
  for (int rep_idx = 0; rep_idx < 3; ++rep_idx) {
    auto rec = generate_head(HeadProfile::local_head(), 160, 8, rng);
    LogitBound bound = bound_from_norms(rec.inputs);
    double delta = compute_threshold(bound, rec.inputs.seq_len, opt.epsilon);
    auto streamed = decode_sequence(rec.inputs, rec.trace, delta);
    auto oracle = naive_pruned_forward(rec.inputs, rec.trace, delta);
    worst = std::max(worst, testing::max_abs_diff(streamed.outputs, oracle.o));
    auto mass = pruned_weight_mass(rec.inputs, rec.trace, delta);
    for (double m : mass) max_evicted_mass = std::max(max_evicted_mass, m);
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max |decode - entry-pruned oracle| = %.3e", worst);
  rep.check(worst <= 1e-10, "decode/prefill consistency", buf);
  std::snprintf(buf, sizeof(buf), "max evicted mass %.3e < epsilon %.3e", max_evicted_mass,
                opt.epsilon);
  rep.check(max_evicted_mass < opt.epsilon, "decode eviction safety", buf);
}

inline void check_degenerate_threshold(Reporter& rep) {
  // U = 0, L = 1, eps = 1 drives delta to exactly 0; the single diagonal
  // block must survive on the keep-at-tie rule.
  AttentionInputs in;
  in.seq_len = 1;
  in.head_dim = 2;
  in.q = DenseMatrix(1, 2);
  in.k = DenseMatrix(1, 2);
  in.v = DenseMatrix(1, 2, {3.0, -4.0});
  auto trace = GateTrace::from_log_gates({0.0});
  double delta = compute_threshold(bound_from_norms(in), 1, 1.0);
  bool ok = delta == 0.0;
  auto spec = find_boundary(trace, delta, 64, 64);
  ok = ok && spec.visited_blocks == 1 && spec.total_lower_blocks == 1;
  PruneConfig cfg;
  cfg.epsilon = 1.0;
  auto res = forward_with_boundary(in, trace, cfg, spec);
  ok = ok && res.out.o == in.v;
  rep.check(ok, "degenerate threshold (delta = 0) path",
            ok ? "diagonal retained, output = v" : "diagonal handling broke");
}

inline void check_thread_determinism(Reporter& rep, const Options& opt) {
  Rng rng(opt.seed ^ 0x74687264ull);
  auto rec = generate_head(HeadProfile::local_head(), 320, 16, rng);
  PruneConfig cfg;
  cfg.epsilon = opt.epsilon;
  auto upstream = testing::random_matrix(320, 16, rng);
  auto a = acp_forward(rec.inputs, rec.trace, cfg, 1);
  auto b = acp_forward(rec.inputs, rec.trace, cfg, 5);
  bool fwd_ok = a.out.o == b.out.o && a.stats.row_max == b.stats.row_max &&
                a.stats.row_denom == b.stats.row_denom;
  auto ga = acp_backward(rec.inputs, rec.trace, cfg, a.boundary, a.stats, upstream, 1);
  auto gb = acp_backward(rec.inputs, rec.trace, cfg, b.boundary, b.stats, upstream, 5);
  bool bwd_ok = ga.dq == gb.dq && ga.dk == gb.dk && ga.dv == gb.dv &&
                ga.dlog_gates == gb.dlog_gates;
  rep.check(fwd_ok && bwd_ok, "schedule-independent determinism",
            fwd_ok && bwd_ok ? "1-thread and 5-thread runs bitwise equal"
                             : "results differ across thread counts");
}

}  // namespace detail

inline int run(const Options& opt) {
  Reporter rep;
  if (opt.inject_fault) {
    std::printf("fault injection: boundary tie-break flipped to <=; "
                "expecting the safety checks below to fail\n");
    detail::check_boundary(rep, opt);
  } else {
    detail::check_trace_roundtrip(rep, opt);
    detail::check_rng_determinism(rep, opt);
    detail::check_boundary(rep, opt);
    detail::check_kernels(rep, opt);
    detail::check_safety(rep, opt);
    detail::check_gradients(rep, opt);
    detail::check_decode(rep, opt);
    detail::check_degenerate_threshold(rep);
    detail::check_thread_determinism(rep, opt);
  }
  if (rep.failures() == 0) {
    std::printf("verify: all checks passed\n");
    return 0;
  }
  std::printf("verify: %d check(s) failed, first failing invariant: %s\n", rep.failures(),
              rep.first_failure().c_str());
  return 1;
}

}  // namespace foxacp::verify
