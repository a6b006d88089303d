// Copyright 2026 The foxacp Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "foxacp/testing.hpp"
#include "foxacp/trace.hpp"
#include "foxacp/workload.hpp"

using namespace foxacp;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f64(std::string& s, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

HeadRecord tiny_record() {
  HeadRecord rec;
  rec.trace = GateTrace::from_log_gates({0.0, 0.0});
  rec.inputs.seq_len = 2;
  rec.inputs.head_dim = 1;
  rec.inputs.q = DenseMatrix(2, 1, {1.0, 1.0});
  rec.inputs.k = DenseMatrix(2, 1, {1.0, 1.0});
  rec.inputs.v = DenseMatrix(2, 1, {1.0, 1.0});
  return rec;
}

}  // namespace

TEST_CASE("trace: identity round trip for a hand-built head") {
  auto path = tmp_file("foxacp_identity.foxtrc");
  std::vector<HeadRecord> records{tiny_record()};
  write_trace(path, records);
  auto back = read_trace(path);
  REQUIRE(back.size() == 1);
  CHECK(back[0].inputs.q == records[0].inputs.q);
  CHECK(back[0].inputs.k == records[0].inputs.k);
  CHECK(back[0].inputs.v == records[0].inputs.v);
  CHECK(back[0].trace.log_gates()[0] == 0.0);
  CHECK(back[0].trace.log_gates()[1] == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("trace: bitwise round trip on seeded random data") {
  Rng rng(2024);
  std::vector<HeadRecord> records;
  for (std::size_t h = 0; h < 4; ++h) {
    HeadRecord rec = generate_head(HeadProfile::mixed_head(), 33, 5, rng);
    rec.head_id = h;
    records.push_back(std::move(rec));
  }
  auto path = tmp_file("foxacp_roundtrip.foxtrc");
  write_trace(path, records);
  auto back = read_trace(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t h = 0; h < records.size(); ++h) {
    REQUIRE(back[h].inputs.q == records[h].inputs.q);
    REQUIRE(back[h].inputs.k == records[h].inputs.k);
    REQUIRE(back[h].inputs.v == records[h].inputs.v);
    REQUIRE(std::equal(back[h].trace.log_gates().begin(), back[h].trace.log_gates().end(),
                       records[h].trace.log_gates().begin()));
    REQUIRE(std::equal(back[h].trace.cumsum().begin(), back[h].trace.cumsum().end(),
                       records[h].trace.cumsum().begin()));
  }

  // Writing the read-back records reproduces the original file byte for byte.
  auto path2 = tmp_file("foxacp_roundtrip2.foxtrc");
  write_trace(path2, back);
  CHECK(file_bytes(path) == file_bytes(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("trace: file sizes match the format arithmetic") {
  auto path = tmp_file("foxacp_sizes.foxtrc");

  write_trace(path, std::vector<HeadRecord>{});
  CHECK(std::filesystem::file_size(path) == 20);
  CHECK(read_trace(path).empty());

  Rng rng(5);
  std::vector<HeadRecord> one{generate_head(HeadProfile::local_head(), 4, 2, rng)};
  write_trace(path, one);
  CHECK(std::filesystem::file_size(path) == 20 + (4 + 3 * 4 * 2) * 8);  // 244
  std::filesystem::remove(path);
}

TEST_CASE("trace: mismatched head shapes are rejected on write") {
  Rng rng(6);
  std::vector<HeadRecord> records;
  records.push_back(generate_head(HeadProfile::local_head(), 4, 2, rng));
  records.push_back(generate_head(HeadProfile::local_head(), 4, 3, rng));
  auto path = tmp_file("foxacp_mismatch.foxtrc");
  CHECK_THROWS_AS(write_trace(path, records), ValidationError);
}

TEST_CASE("trace: malformed files raise the right errors") {
  auto path = tmp_file("foxacp_malformed.foxtrc");

  SECTION("bad magic") {
    std::string buf = "NOTMAGIC";
    append_u32(buf, 0);
    append_u32(buf, 0);
    append_u32(buf, 0);
    std::ofstream(path, std::ios::binary) << buf;
    CHECK_THROWS_AS(read_trace(path), FormatError);
  }

  SECTION("truncated payload") {
    std::string buf = "FOXTRC01";
    append_u32(buf, 1);  // one head promised
    append_u32(buf, 2);
    append_u32(buf, 1);
    append_f64(buf, -0.5);  // only one of the promised doubles
    std::ofstream(path, std::ios::binary) << buf;
    CHECK_THROWS_AS(read_trace(path), TruncatedError);
  }

  SECTION("trailing bytes") {
    write_trace(path, std::vector<HeadRecord>{tiny_record()});
    std::ofstream(path, std::ios::binary | std::ios::app) << "xx";
    CHECK_THROWS_AS(read_trace(path), FormatError);
  }

  SECTION("positive log gate") {
    std::string buf = "FOXTRC01";
    append_u32(buf, 1);
    append_u32(buf, 1);
    append_u32(buf, 1);
    append_f64(buf, 0.5);  // log gate > 0
    for (int i = 0; i < 3; ++i) append_f64(buf, 1.0);
    std::ofstream(path, std::ios::binary) << buf;
    CHECK_THROWS_AS(read_trace(path), ValidationError);
  }

  std::filesystem::remove(path);
}
