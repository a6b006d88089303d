// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "foxacp/pruning.hpp"
#include "foxacp/testing.hpp"
#include "foxacp/workload.hpp"

using namespace foxacp;

namespace {

AttentionInputs one_hot_qk(std::size_t L, std::size_t d, double q_scale, double k_scale) {
  AttentionInputs in;
  in.seq_len = L;
  in.head_dim = d;
  in.q = DenseMatrix(L, d);
  in.k = DenseMatrix(L, d);
  in.v = DenseMatrix(L, d);
  for (std::size_t i = 0; i < L; ++i) {
    in.q(i, 0) = q_scale;
    in.k(i, 0) = k_scale;
  }
  return in;
}

}  // namespace

TEST_CASE("bound_explicit: exact lower-triangle maximization") {
  SECTION("all-zero queries") {
    Rng rng(1);
    auto in = testing::random_inputs(8, 4, rng);
    in.q = DenseMatrix(8, 4);
    CHECK(bound_explicit(in).value == 0.0);
  }
  SECTION("single dominant pair") {
    auto in = one_hot_qk(3, 4, 0.0, 0.0);
    in.q(0, 0) = 2.0;
    in.k(0, 0) = 2.0;
    CHECK(bound_explicit(in).value == 2.0);  // |4| / sqrt(4)
  }
  SECTION("equals an exhaustive rescan") {
    Rng rng(2);
    auto in = testing::random_inputs(33, 8, rng);
    double want = 0.0;
    for (std::size_t i = 0; i < 33; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < 8; ++t) s += in.q(i, t) * in.k(j, t);
        want = std::max(want, std::abs(s) / std::sqrt(8.0));
      }
    }
    CHECK(bound_explicit(in).value == Catch::Approx(want).margin(1e-15));
  }
}

TEST_CASE("bound_from_norms: Cauchy-Schwarz bound") {
  SECTION("all-zero keys") {
    Rng rng(3);
    auto in = testing::random_inputs(8, 4, rng);
    in.k = DenseMatrix(8, 4);
    CHECK(bound_from_norms(in).value == 0.0);
  }
  SECTION("unit-norm rows at d = 64") {
    auto in = one_hot_qk(4, 64, 1.0, 1.0);
    CHECK(bound_from_norms(in).value == Catch::Approx(0.125).margin(1e-15));
  }
  SECTION("dominates the explicit bound") {
    Rng rng(4);
    for (int it = 0; it < 25; ++it) {
      auto in = testing::random_inputs(20, 6, rng);
      REQUIRE(bound_from_norms(in).value >= bound_explicit(in).value);
    }
  }
}

TEST_CASE("bound_from_qk_norm: bound from scaling parameters") {
  SECTION("unit parameters at d = 64") {
    std::vector<double> ones(64, 1.0);
    CHECK(bound_from_qk_norm(ones, ones, 64).value == 8.0);
  }
  SECTION("max magnitude wins") {
    std::vector<double> gq = {0.1, -2.0, 0.3};
    std::vector<double> gk(16, 0.5);
    CHECK(bound_from_qk_norm(gq, gk, 16).value == 4.0);
  }
  SECTION("empty parameters are rejected") {
    CHECK_THROWS_AS(bound_from_qk_norm({}, std::vector<double>{1.0}, 4), ValidationError);
  }
  SECTION("bounds all logits of RMS-normalized scaled rows") {
    Rng rng(5);
    const std::size_t L = 40, d = 8;
    std::vector<double> gq(d), gk(d);
    for (auto& g : gq) g = rng.uniform_in(-1.5, 1.5);
    for (auto& g : gk) g = rng.uniform_in(-1.5, 1.5);
    auto in = testing::random_inputs(L, d, rng);
    for (DenseMatrix* m : {&in.q, &in.k}) {
      for (std::size_t i = 0; i < L; ++i) {
        auto row = m->row(i);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        double rms = std::sqrt(sq / d);
        for (std::size_t t = 0; t < d; ++t) {
          row[t] = row[t] / rms * (m == &in.q ? gq[t] : gk[t]);
        }
      }
    }
    double u = bound_from_qk_norm(gq, gk, d).value;
    CHECK(u >= bound_explicit(in).value);
  }
}

TEST_CASE("compute_threshold: delta = -2U - log L + log eps") {
  CHECK(compute_threshold({0.0, BoundMode::explicit_max}, 1, 1.0) == 0.0);
  CHECK(compute_threshold({1.0, BoundMode::explicit_max}, 1024, std::exp(-10.0)) ==
        Catch::Approx(-18.931471805599453).margin(1e-12));
  CHECK(kDefaultEpsilon == Catch::Approx(4.54e-5).epsilon(1e-3));
  CHECK_THROWS_AS(compute_threshold({1.0, BoundMode::explicit_max}, 16, 0.0),
                  ValidationError);
  CHECK_THROWS_AS(compute_threshold({1.0, BoundMode::explicit_max}, 16, 1.5),
                  ValidationError);
  CHECK_THROWS_AS(compute_threshold({1.0, BoundMode::explicit_max}, 0, 0.5),
                  ValidationError);
}

TEST_CASE("find_boundary: no decay keeps every block") {
  auto t = build_trace(std::vector<double>(128, 1.0));
  auto spec = find_boundary(t, -5.0, 16, 16);
  for (std::size_t m = 0; m < spec.first_kept.size(); ++m) CHECK(spec.first_kept[m] == 0);
  CHECK(spec.visited_blocks == spec.total_lower_blocks);
}

TEST_CASE("find_boundary: constant decay gives a sliding window") {
  const std::size_t L = 64;
  auto t = GateTrace::from_log_gates(std::vector<double>(L, -1.0));
  auto spec = find_boundary(t, -10.0, 1, 1);
  // D(i, j) = -(i - j); pruned iff i - j > 10, so each row keeps a window of
  // 10 positions plus itself.
  for (std::size_t m = 0; m < L; ++m) {
    REQUIRE(spec.first_kept[m] == (m > 10 ? m - 10 : 0));
  }
  // Exactly at the tie D = delta the block is kept...
  CHECK(spec.first_kept[20] == 10);
  // ...unless the tie-break hook is flipped, which prunes one more column.
  auto flipped = find_boundary(t, -10.0, 1, 1, TieBreak::prune_at_or_below);
  CHECK(flipped.first_kept[20] == 11);
}

TEST_CASE("find_boundary: matches the exhaustive oracle") {
  Rng rng(29);
  std::size_t checked = 0;
  for (std::size_t it = 0; it < 150; ++it) {
    std::size_t L = 1 + static_cast<std::size_t>(rng.uniform() * 260);
    std::size_t bq = 1 + static_cast<std::size_t>(rng.uniform() * 48);
    std::size_t bk = 1 + static_cast<std::size_t>(rng.uniform() * 48);
    GateTrace t = it % 3 == 0
                      ? GateTrace::from_log_gates(std::vector<double>(L, -0.5))
                      : build_trace(testing::random_gates(L, rng));
    double delta = -rng.uniform_in(0.1, 50.0);
    auto fast = find_boundary(t, delta, bq, bk);
    auto slow = find_boundary_oracle(t, delta, bq, bk);
    REQUIRE(fast.first_kept == slow.first_kept);
    REQUIRE(fast.visited_blocks == slow.visited_blocks);
    REQUIRE(fast.total_lower_blocks == slow.total_lower_blocks);

    // Linear work, monotone boundary, diagonal never pruned.
    REQUIRE(fast.scan_iterations <= fast.num_query_blocks + fast.num_key_blocks);
    BlockGrid grid(L, bq, bk);
    for (std::size_t m = 0; m < fast.first_kept.size(); ++m) {
      if (m > 0) REQUIRE(fast.first_kept[m] >= fast.first_kept[m - 1]);
      REQUIRE(fast.first_kept[m] <= grid.diag_block(m));
    }
    ++checked;
  }
  CHECK(checked == 150);
}

TEST_CASE("find_boundary: edge cases") {
  SECTION("single block grid") {
    auto t = build_trace(std::vector<double>{0.5, 0.5, 0.5});
    auto spec = find_boundary(t, -100.0, 8, 8);
    REQUIRE(spec.first_kept.size() == 1);
    CHECK(spec.first_kept[0] == 0);
    CHECK(spec.total_lower_blocks == 1);
  }
  SECTION("degenerate delta = 0 keeps exactly the no-decay blocks") {
    auto ones = build_trace(std::vector<double>(4, 1.0));
    auto spec = find_boundary(ones, 0.0, 1, 1);
    for (std::size_t m = 0; m < 4; ++m) CHECK(spec.first_kept[m] == 0);

    auto decayed = GateTrace::from_log_gates(std::vector<double>{0.0, -1.0, -1.0, -1.0});
    auto spec2 = find_boundary(decayed, 0.0, 1, 1);
    // Only entries with zero decay survive: each row keeps just its diagonal
    // (plus earlier columns while nothing has decayed yet).
    CHECK(spec2.first_kept[0] == 0);
    CHECK(spec2.first_kept[1] == 1);
    CHECK(spec2.first_kept[3] == 3);
  }
  SECTION("positive delta and bad blocks are rejected") {
    auto t = build_trace(std::vector<double>{0.5, 0.5});
    CHECK_THROWS_AS(find_boundary(t, 0.5, 1, 1), ValidationError);
    CHECK_THROWS_AS(find_boundary(t, -1.0, 0, 1), ValidationError);
    CHECK_THROWS_AS(find_boundary(t, -1.0, 1, 0), ValidationError);
  }
  SECTION("-inf visits everything") {
    Rng rng(31);
    auto t = build_trace(testing::random_gates(40, rng));
    auto spec = find_boundary(t, kNegInf, 8, 8);
    CHECK(spec.visited_blocks == spec.total_lower_blocks);
  }
}

TEST_CASE("ragged tails use actual block extents") {
  // L = 37 with 16-wide blocks: last block is 5 wide in both dimensions.
  Rng rng(37);
  auto t = build_trace(testing::random_gates(37, rng));
  for (double delta : {-0.5, -2.0, -8.0, -20.0}) {
    auto fast = find_boundary(t, delta, 16, 16);
    auto slow = find_boundary_oracle(t, delta, 16, 16);
    REQUIRE(fast.first_kept == slow.first_kept);
  }
  // Mixed block sizes around the diagonal.
  for (auto [bq, bk] : std::vector<std::pair<std::size_t, std::size_t>>{
           {4, 16}, {16, 4}, {5, 7}, {37, 1}, {1, 37}}) {
    auto fast = find_boundary(t, -3.0, bq, bk);
    auto slow = find_boundary_oracle(t, -3.0, bq, bk);
    REQUIRE(fast.first_kept == slow.first_kept);
    BlockGrid grid(37, bq, bk);
    for (std::size_t m = 0; m < fast.first_kept.size(); ++m) {
      REQUIRE(fast.first_kept[m] <= grid.diag_block(m));
    }
  }
}
