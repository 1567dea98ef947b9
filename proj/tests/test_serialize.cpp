/*
 * Copyright 2026 The fedtil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "fedtil/error.hpp"
#include "fedtil/nn.hpp"
#include "fedtil/random.hpp"
#include "fedtil/serialize.hpp"
#include "test_util.hpp"

using namespace fedtil;

namespace {

// Byte-at-a-time little-endian builder, independent of ByteWriter.
struct Bytes {
  std::vector<std::uint8_t> v;
  void le(std::uint64_t x, int n) {
    for (int i = 0; i < n; ++i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
  }
  void str(const char* s) {
    for (; *s; ++s) v.push_back(static_cast<std::uint8_t>(*s));
  }
  void f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    le(u, 4);
  }
};

nn::ModelWeights random_weights(Rng& rng) {
  nn::ModelWeights w;
  const int layers = 1 + static_cast<int>(uniform_index(rng, 5));
  for (int l = 0; l < layers; ++l) {
    nn::Tensor t;
    t.name = "layer" + std::to_string(l) + (uniform01(rng) < 0.5 ? ".weight" : ".bias");
    const int rank = 1 + static_cast<int>(uniform_index(rng, 4));
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      t.shape.push_back(1 + static_cast<std::uint32_t>(uniform_index(rng, 4)));
      n *= t.shape.back();
    }
    for (std::size_t i = 0; i < n; ++i) {
      t.values.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(rng())));
    }
    w.layers.push_back(std::move(t));
  }
  return w;
}

ErrorCode code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_weights(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(0);
}

}  // namespace

TEST_SUITE("serialize") {

TEST_CASE("weight encoding matches the documented byte layout") {
  nn::ModelWeights w;
  w.layers.push_back({"a", {2}, {1.5f, -0.0f}});
  w.layers.push_back({"dense.bias", {1, 1}, {3.0f}});
  Bytes b;
  b.str("FSHD");
  b.le(1, 2);
  b.le(2, 4);
  b.le(1, 2);
  b.str("a");
  b.le(1, 1);
  b.le(2, 4);
  b.f32(1.5f);
  b.f32(-0.0f);
  b.le(10, 2);
  b.str("dense.bias");
  b.le(2, 1);
  b.le(1, 4);
  b.le(1, 4);
  b.f32(3.0f);
  CHECK(encode_weights(w) == b.v);
  CHECK(nn::bitwise_equal(decode_weights(b.v), w));
}

TEST_CASE("weights round-trip bit-exactly, including NaN payloads and signed zeros") {
  Rng rng(101);
  for (int i = 0; i < 200; ++i) {
    const auto w = random_weights(rng);
    const auto bytes = encode_weights(w);
    const auto back = decode_weights(bytes);
    CHECK(nn::bitwise_equal(back, w));
    CHECK(encode_weights(back) == bytes);
  }
  nn::NetworkSpec spec;
  const auto w = nn::init_weights(spec);
  CHECK(nn::bitwise_equal(decode_weights(encode_weights(w)), w));
}

TEST_CASE("weight files round-trip through disk") {
  const auto dir = fedtil::testing::scratch_dir("serialize_files");
  nn::NetworkSpec spec;
  const auto w = nn::init_weights(spec);
  const auto path = dir + "/w.fshd";
  save_weights(path, w);
  CHECK(nn::bitwise_equal(load_weights(path), w));
  CHECK(read_file(path) == encode_weights(w));
}

TEST_CASE("every truncation is a parse error with an in-range offset") {
  Rng rng(102);
  const auto w = random_weights(rng);
  const auto bytes = encode_weights(w);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(n));
    try {
      decode_weights(cut);
      FAIL("decoded a truncated buffer of " << n << " bytes");
    } catch (const ParseError& e) {
      CHECK(e.code() == ErrorCode::kParse);
      CHECK(e.offset() <= n);
    }
  }
}

TEST_CASE("structural corruption is reported with the right code") {
  nn::ModelWeights w;
  w.layers.push_back({"x", {3}, {1.0f, 2.0f, 3.0f}});
  const auto good = encode_weights(w);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(code_of(bad_magic) == ErrorCode::kParse);

  auto bad_version = good;
  bad_version[4] = 2;
  CHECK(code_of(bad_version) == ErrorCode::kVersion);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(code_of(trailing) == ErrorCode::kParse);

  auto huge_count = good;
  huge_count[6] = huge_count[7] = huge_count[8] = huge_count[9] = 0xff;
  CHECK(code_of(huge_count) == ErrorCode::kParse);

  auto huge_rank = good;
  huge_rank[4 + 2 + 4 + 2 + 1] = 200;
  CHECK(code_of(huge_rank) == ErrorCode::kParse);

  auto huge_dim = good;
  huge_dim[4 + 2 + 4 + 2 + 1 + 1 + 3] = 0x7f;
  CHECK(code_of(huge_dim) == ErrorCode::kParse);
}

TEST_CASE("random corruption never crashes") {
  Rng rng(103);
  const auto w = random_weights(rng);
  const auto good = encode_weights(w);
  int rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    auto bytes = good;
    const int flips = 1 + static_cast<int>(uniform_index(rng, 4));
    for (int f = 0; f < flips; ++f) {
      bytes[uniform_index(rng, bytes.size())] = static_cast<std::uint8_t>(rng());
    }
    try {
      const auto back = decode_weights(bytes);
      CHECK(encode_weights(back) == bytes);
    } catch (const Error&) {
      ++rejected;
    }
  }
  CHECK(rejected > 0);
}

TEST_CASE("missing weight file is an I/O error naming the path") {
  try {
    load_weights("/nonexistent/dir/w.fshd");
    FAIL("expected an I/O error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
    CHECK(std::string(e.what()).find("/nonexistent/dir/w.fshd") != std::string::npos);
  }
}

TEST_CASE("tensor files round-trip and reject damage") {
  FloatTensor t{{2, 3, 1}, {0.f, 1.f, -2.5f, 1e-40f, 7.f, 8.f}};
  const auto bytes = encode_tensor(t);
  Bytes b;
  b.str("FSHT");
  b.le(1, 2);
  b.le(3, 1);
  b.le(2, 4);
  b.le(3, 4);
  b.le(1, 4);
  for (float f : t.values) b.f32(f);
  CHECK(bytes == b.v);
  const auto back = decode_tensor(bytes);
  CHECK(back.shape == t.shape);
  REQUIRE(back.values.size() == t.values.size());
  CHECK(std::memcmp(back.values.data(), t.values.data(), 4 * t.values.size()) == 0);
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    CHECK_THROWS_AS(decode_tensor(std::span(bytes.data(), n)), ParseError);
  }
  auto v2 = bytes;
  v2[4] = 9;
  CHECK_THROWS_AS(decode_tensor(v2), Error);
}

TEST_CASE("error codes have stable names") {
  CHECK(std::string(error_code_name(ErrorCode::kParse)) == "parse");
  CHECK(std::string(error_code_name(ErrorCode::kVersion)) == "version");
  CHECK(std::string(error_code_name(ErrorCode::kIo)) == "io");
}

}  // TEST_SUITE
