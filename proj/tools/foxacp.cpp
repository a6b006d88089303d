// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: verification battery, savings reports, epsilon
// sweeps, boundary exports, streaming-decode replay, and micro-benchmarks
// over synthetic or file-based head traces.

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "foxacp/foxacp.hpp"
#include "foxacp/testing.hpp"
#include "verify_suite.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

using foxacp::HeadProfile;
using foxacp::HeadRecord;
using foxacp::PruneConfig;

struct CommonOpts {
  std::string trace_path;
  std::string gen_profile = "local";
  double local_frac = -1.0;  // < 0 means: homogeneous gen_profile population
  std::size_t layers = 2;
  std::size_t heads_per_layer = 4;
  std::size_t seq_len = 4096;
  std::size_t head_dim = 64;
  std::size_t block_q = 64;
  std::size_t block_k = 64;
  double epsilon = foxacp::kDefaultEpsilon;
  std::string bound = "norms";
  std::uint64_t seed = 42;
  std::string out_dir = ".";
  unsigned threads = 1;
};

void add_common_flags(CLI::App* cmd, CommonOpts& opts, bool with_input = true) {
  if (with_input) {
    cmd->add_option("--trace", opts.trace_path, "read heads from a trace file");
    cmd->add_option("--gen-profile", opts.gen_profile,
                    "synthetic head profile: local, global, or mixed")
        ->check(CLI::IsMember({"local", "global", "mixed"}));
    cmd->add_option("--local-frac", opts.local_frac,
                    "generate a local/global head mix with this local fraction");
    cmd->add_option("--layers", opts.layers, "generated model: number of layers");
    cmd->add_option("--heads-per-layer", opts.heads_per_layer,
                    "generated model: heads per layer");
    cmd->add_option("--seq-len", opts.seq_len, "generated sequence length");
    cmd->add_option("--head-dim", opts.head_dim, "generated head dimension");
  }
  cmd->add_option("--block-q", opts.block_q, "query block size");
  cmd->add_option("--block-k", opts.block_k, "key/value block size");
  cmd->add_option("--epsilon", opts.epsilon, "pruned attention weight budget per row");
  cmd->add_option("--bound", opts.bound, "logit bound mode: explicit, norms, qknorm")
      ->check(CLI::IsMember({"explicit", "norms", "qknorm"}));
  cmd->add_option("--seed", opts.seed, "generator seed");
  cmd->add_option("--out", opts.out_dir, "output directory for reports");
  cmd->add_option("--threads", opts.threads, "worker threads for kernels (0 = auto)");
}

PruneConfig make_config(const CommonOpts& opts) {
  PruneConfig cfg;
  cfg.epsilon = opts.epsilon;
  cfg.block_q = opts.block_q;
  cfg.block_k = opts.block_k;
  if (opts.bound == "explicit") {
    cfg.bound_mode = foxacp::BoundMode::explicit_max;
  } else if (opts.bound == "norms") {
    cfg.bound_mode = foxacp::BoundMode::query_key_norms;
  } else {
    cfg.bound_mode = foxacp::BoundMode::qk_norm_params;
  }
  cfg.validate();
  return cfg;
}

HeadProfile profile_by_name(const std::string& name) {
  if (name == "local") return HeadProfile::local_head();
  if (name == "global") return HeadProfile::global_head();
  return HeadProfile::mixed_head();
}

std::vector<HeadRecord> load_or_generate(const CommonOpts& opts) {
  if (!opts.trace_path.empty()) {
    auto records = foxacp::read_trace(opts.trace_path);
    if (records.empty()) {
      throw foxacp::ValidationError("trace file contains no heads");
    }
    for (auto& rec : records) {
      rec.layer_id = opts.heads_per_layer > 0 ? rec.head_id / opts.heads_per_layer : 0;
    }
    return records;
  }
  foxacp::Rng rng(opts.seed);
  if (opts.local_frac >= 0.0) {
    return foxacp::generate_model(opts.layers, opts.heads_per_layer, opts.local_frac,
                                  opts.seq_len, opts.head_dim, rng);
  }
  HeadProfile profile = profile_by_name(opts.gen_profile);
  std::vector<HeadRecord> records;
  const std::size_t total = opts.layers * opts.heads_per_layer;
  if (total == 0) throw foxacp::ValidationError("need at least one layer and head");
  records.reserve(total);
  for (std::size_t h = 0; h < total; ++h) {
    foxacp::Rng child = rng.fork(h);
    HeadRecord rec = foxacp::generate_head(profile, opts.seq_len, opts.head_dim, child);
    rec.head_id = h;
    rec.layer_id = h % opts.layers;
    records.push_back(std::move(rec));
  }
  return records;
}

std::filesystem::path ensure_out_dir(const CommonOpts& opts) {
  std::filesystem::path dir(opts.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// qknorm mode needs scaling parameters that a raw trace file does not carry;
/// for synthetic inputs the generator RMS-normalizes with a uniform scale, so
/// gamma = qk_scale of the profile in play.
std::optional<foxacp::LogitBound> fixed_bound_for(const CommonOpts& opts) {
  if (opts.bound != "qknorm") return std::nullopt;
  if (!opts.trace_path.empty()) {
    throw foxacp::ValidationError(
        "--bound qknorm needs generator scaling parameters; trace files carry none "
        "(use --bound norms or explicit)");
  }
  double scale = opts.local_frac >= 0.0
                     ? std::max(HeadProfile::local_head().qk_scale,
                                HeadProfile::global_head().qk_scale)
                     : profile_by_name(opts.gen_profile).qk_scale;
  std::vector<double> gamma(opts.head_dim, scale);
  return foxacp::bound_from_qk_norm(gamma, gamma, opts.head_dim);
}

foxacp::LogitBound bound_for_head(const HeadRecord& rec, const PruneConfig& cfg,
                                  const CommonOpts& opts) {
  if (auto fixed = fixed_bound_for(opts)) return *fixed;
  return foxacp::compute_bound(rec.inputs, cfg);
}

// ---------------------------------------------------------------------------

int cmd_gen(const CommonOpts& opts) {
  auto records = load_or_generate(opts);
  auto path = ensure_out_dir(opts) / "trace.foxtrc";
  foxacp::write_trace(path, records);
  std::printf("wrote %zu heads (L=%zu, d=%zu) to %s\n", records.size(),
              records[0].inputs.seq_len, records[0].inputs.head_dim, path.c_str());
  return kExitOk;
}

int cmd_savings(const CommonOpts& opts) {
  auto records = load_or_generate(opts);
  PruneConfig cfg = make_config(opts);
  auto report = foxacp::savings_for_traces(records, cfg, fixed_bound_for(opts));
  auto dir = ensure_out_dir(opts);
  foxacp::write_per_head_csv(dir / "per_head.csv", report);
  foxacp::write_histogram_csv(dir / "histogram.csv", report);
  foxacp::write_per_layer_csv(dir / "per_layer.csv", report);
  std::printf("heads: %zu\n", report.per_head.size());
  std::printf("aggregate pruned fraction: %.6f\n", report.aggregate_pruned_fraction);
  std::printf("reports: %s/{per_head,histogram,per_layer}.csv\n", dir.c_str());
  return kExitOk;
}

int cmd_sweep(const CommonOpts& opts, std::vector<double> epsilons) {
  auto records = load_or_generate(opts);
  PruneConfig cfg = make_config(opts);
  if (epsilons.empty()) {
    epsilons = {std::exp(-30.0), std::exp(-20.0), std::exp(-10.0), std::exp(-5.0),
                std::exp(-1.0)};
  }
  auto rows = foxacp::sweep_epsilon(records, cfg, epsilons, fixed_bound_for(opts));
  auto dir = ensure_out_dir(opts);
  foxacp::write_sweep_csv(dir / "sweep.csv", rows);
  std::printf("%-14s %-12s %s\n", "epsilon", "delta", "pruned_fraction");
  for (const auto& row : rows) {
    std::printf("%-14.6e %-12.4f %.6f\n", row.epsilon, row.delta, row.pruned_fraction);
  }
  std::printf("sweep written to %s\n", (dir / "sweep.csv").c_str());
  return kExitOk;
}

int cmd_boundary(const CommonOpts& opts, std::size_t head_idx) {
  auto records = load_or_generate(opts);
  if (head_idx >= records.size()) {
    throw foxacp::ValidationError("--head out of range");
  }
  PruneConfig cfg = make_config(opts);
  const HeadRecord& rec = records[head_idx];
  auto exported = foxacp::export_boundary(rec.trace, cfg, bound_for_head(rec, cfg, opts));
  auto dir = ensure_out_dir(opts);
  foxacp::write_boundary_csv(dir / "boundary.csv", exported);
  foxacp::write_dmax_csv(dir / "dmax_grid.csv", exported);
  std::printf("head %zu: delta = %.4f, visited %" PRIu64 " of %" PRIu64
              " lower blocks (pruned fraction %.4f)\n",
              head_idx, exported.boundary.delta,
              static_cast<std::uint64_t>(exported.boundary.visited_blocks),
              static_cast<std::uint64_t>(exported.boundary.total_lower_blocks),
              1.0 - static_cast<double>(exported.boundary.visited_blocks) /
                        static_cast<double>(exported.boundary.total_lower_blocks));
  std::printf("exports: %s/{boundary,dmax_grid}.csv\n", dir.c_str());
  return kExitOk;
}

int cmd_decode(const CommonOpts& opts, std::size_t head_idx, std::size_t max_len,
               bool check) {
  auto records = load_or_generate(opts);
  if (head_idx >= records.size()) {
    throw foxacp::ValidationError("--head out of range");
  }
  PruneConfig cfg = make_config(opts);
  const HeadRecord& rec = records[head_idx];
  if (max_len == 0) max_len = rec.inputs.seq_len;
  if (max_len < rec.inputs.seq_len) {
    throw foxacp::ValidationError("--max-len must cover the replayed sequence");
  }
  double delta =
      foxacp::compute_threshold(bound_for_head(rec, cfg, opts), max_len, cfg.epsilon);

  foxacp::DecodeState state(rec.inputs.head_dim, delta);
  foxacp::DenseMatrix outputs(rec.inputs.seq_len, rec.inputs.head_dim);
  auto dir = ensure_out_dir(opts);
  auto csv_path = dir / "decode.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  csv << "step,cache_len,evicted,boundary\n";
  std::size_t max_cache = 0, total_evicted = 0;
  for (std::size_t i = 0; i < rec.inputs.seq_len; ++i) {
    auto step = state.step(rec.inputs.q.row(i), rec.inputs.k.row(i), rec.inputs.v.row(i),
                           rec.trace.log_gates()[i]);
    for (std::size_t x = 0; x < rec.inputs.head_dim; ++x) outputs(i, x) = step.output[x];
    total_evicted += step.evicted;
    max_cache = std::max(max_cache, state.cache_len());
    csv << i << ',' << state.cache_len() << ',' << step.evicted << ',' << state.boundary()
        << '\n';
  }
  std::printf("head %zu: delta = %.4f, max cache %zu of %zu, evicted %zu\n", head_idx,
              delta, max_cache, rec.inputs.seq_len, total_evicted);
  std::printf("per-step trace: %s\n", csv_path.c_str());

  if (check) {
    auto oracle = foxacp::naive_pruned_forward(rec.inputs, rec.trace, delta);
    double diff = foxacp::testing::max_abs_diff(outputs, oracle.o);
    std::printf("decode vs entry-pruned oracle: max diff %.3e\n", diff);
    if (!(diff <= 1e-10)) {
      std::printf("FAIL: decode/prefill consistency\n");
      return kExitCheckFailed;
    }
    std::printf("check passed\n");
  }
  return kExitOk;
}

int cmd_bench(const CommonOpts& opts, std::size_t bench_heads) {
  auto records = load_or_generate(opts);
  PruneConfig cfg = make_config(opts);
  bench_heads = std::min(bench_heads, records.size());
  auto dir = ensure_out_dir(opts);
  std::ofstream csv(dir / "bench.csv", std::ios::trunc);
  csv << "head_id,full_forward_s,full_backward_s,acp_forward_s,acp_backward_s,"
         "boundary_search_s,visited_blocks,total_blocks\n";

  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  double full_total = 0.0, acp_total = 0.0, boundary_total = 0.0;
  std::uint64_t visited = 0, total = 0;
  std::printf("%-6s %-10s %-10s %-10s %-10s %-12s %s\n", "head", "full fwd", "full bwd",
              "acp fwd", "acp bwd", "boundary", "visited/total");
  for (std::size_t h = 0; h < bench_heads; ++h) {
    const HeadRecord& rec = records[h];
    foxacp::Rng urng(opts.seed ^ (h + 1));
    auto upstream =
        foxacp::testing::random_matrix(rec.inputs.seq_len, rec.inputs.head_dim, urng);

    auto t0 = clock::now();
    auto full = foxacp::full_blocked_forward(rec.inputs, rec.trace, cfg, opts.threads);
    auto t1 = clock::now();
    auto full_grads = foxacp::acp_backward(rec.inputs, rec.trace, cfg, full.boundary,
                                           full.stats, upstream, opts.threads);
    auto t2 = clock::now();

    foxacp::LogitBound bound = bound_for_head(rec, cfg, opts);
    auto t3 = clock::now();
    double delta = foxacp::compute_threshold(bound, rec.inputs.seq_len, cfg.epsilon);
    auto boundary = foxacp::find_boundary(rec.trace, delta, cfg.block_q, cfg.block_k);
    auto t4 = clock::now();
    auto acp = foxacp::forward_with_boundary(rec.inputs, rec.trace, cfg, boundary,
                                             opts.threads);
    auto t5 = clock::now();
    auto acp_grads = foxacp::acp_backward(rec.inputs, rec.trace, cfg, acp.boundary,
                                          acp.stats, upstream, opts.threads);
    auto t6 = clock::now();
    (void)full_grads;
    (void)acp_grads;

    double ffwd = seconds(t0, t1), fbwd = seconds(t1, t2);
    double bsearch = seconds(t3, t4), afwd = seconds(t4, t5), abwd = seconds(t5, t6);
    full_total += ffwd + fbwd;
    acp_total += bsearch + afwd + abwd;
    boundary_total += bsearch;
    visited += acp.counters.visited_blocks;
    total += acp.counters.total_lower_blocks;

    std::printf("%-6zu %-10.4f %-10.4f %-10.4f %-10.4f %-12.6f %" PRIu64 "/%" PRIu64 "\n",
                h, ffwd, fbwd, afwd, abwd, bsearch, acp.counters.visited_blocks,
                acp.counters.total_lower_blocks);
    csv << rec.head_id << ',' << ffwd << ',' << fbwd << ',' << afwd << ',' << abwd << ','
        << bsearch << ',' << acp.counters.visited_blocks << ','
        << acp.counters.total_lower_blocks << '\n';
  }
  double block_ratio = total ? static_cast<double>(visited) / static_cast<double>(total) : 1.0;
  std::printf("block ratio (visited/total): %.4f\n", block_ratio);
  std::printf("wall clock: acp %.4fs vs full %.4fs (ratio %.4f, informational)\n",
              acp_total, full_total, full_total > 0 ? acp_total / full_total : 1.0);
  std::printf("boundary-search share of acp time: %.2f%%\n",
              acp_total > 0 ? 100.0 * boundary_total / acp_total : 0.0);
  std::printf("bench table: %s\n", (dir / "bench.csv").c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forgetting attention with adaptive computation pruning"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::vector<double> epsilons;
  std::size_t head_idx = 0, max_len = 0, bench_heads = 4;
  bool check = false;
  bool inject_fault = false;

  auto* verify = app.add_subcommand("verify", "run the oracle and invariant battery");
  add_common_flags(verify, opts, /*with_input=*/false);
  verify->add_flag("--inject-fault", inject_fault,
                   "flip the pruning tie-break to <= and expect detection");

  auto* savings = app.add_subcommand("savings", "per-head savings report");
  add_common_flags(savings, opts);

  auto* sweep = app.add_subcommand("sweep-eps", "pruned fraction across epsilon values");
  add_common_flags(sweep, opts);
  sweep->add_option("--epsilons", epsilons, "explicit epsilon list");

  auto* boundary = app.add_subcommand("boundary", "export pruning boundary and D-max grid");
  add_common_flags(boundary, opts);
  boundary->add_option("--head", head_idx, "head index to export");

  auto* decode = app.add_subcommand("decode", "streaming decode replay with cache eviction");
  add_common_flags(decode, opts);
  decode->add_option("--head", head_idx, "head index to replay");
  decode->add_option("--max-len", max_len, "declared maximum length for the threshold");
  decode->add_flag("--check", check, "compare against the entry-pruned oracle");

  auto* bench = app.add_subcommand("bench", "time full vs pruned kernels");
  add_common_flags(bench, opts);
  bench->add_option("--bench-heads", bench_heads, "number of heads to time");

  auto* gen = app.add_subcommand("gen", "generate a synthetic trace file");
  add_common_flags(gen, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (verify->parsed()) {
      foxacp::verify::Options vopt;
      vopt.seed = opts.seed;
      vopt.epsilon = opts.epsilon;
      vopt.threads = opts.threads;
      vopt.inject_fault = inject_fault;
      return foxacp::verify::run(vopt);
    }
    if (savings->parsed()) return cmd_savings(opts);
    if (sweep->parsed()) return cmd_sweep(opts, epsilons);
    if (boundary->parsed()) return cmd_boundary(opts, head_idx);
    if (decode->parsed()) return cmd_decode(opts, head_idx, max_len, check);
    if (bench->parsed()) return cmd_bench(opts, bench_heads);
    if (gen->parsed()) return cmd_gen(opts);
  } catch (const foxacp::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const foxacp::FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const foxacp::TruncatedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitUsage;
}
