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

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "fedtil/binary_io.hpp"
#include "fedtil/dataset.hpp"
#include "fedtil/error.hpp"
#include "fedtil/serialize.hpp"
#include "test_util.hpp"

using namespace fedtil;
using namespace fedtil::dataset;

namespace {

// Counts 4-connected groups of lymphocyte-colored pixels: dark and bluer
// than red once the site's known channel shift is removed.
int count_blobs(std::span<const float> px, int side, const std::vector<double>& shift) {
  std::vector<int> mask(static_cast<std::size_t>(side) * side, 0);
  for (int i = 0; i < side * side; ++i) {
    const double r = px[i * 3 + 0] - shift[0];
    const double b = px[i * 3 + 2] - shift[2];
    mask[i] = (r < 0.5 && b - r > 0.08) ? 1 : 0;
  }
  int blobs = 0;
  std::vector<int> stack;
  for (int start = 0; start < side * side; ++start) {
    if (mask[start] != 1) continue;
    ++blobs;
    mask[start] = 2;
    stack.push_back(start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / side, x = p % side;
      const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbr) {
        if (n[0] < 0 || n[0] >= side || n[1] < 0 || n[1] >= side) continue;
        const int q = n[0] * side + n[1];
        if (mask[q] == 1) {
          mask[q] = 2;
          stack.push_back(q);
        }
      }
    }
  }
  return blobs;
}

SiteProfile small_profile(int site_id = 2) {
  SiteProfile p;
  p.site_id = site_id;
  p.positive_rate_train = 0.4;
  p.positive_rate_validation = 0.25;
  p.texture_shift = {0.1, -0.05, 0.02};
  p.n_patients_train = 4;
  p.n_patches_train = 30;
  p.n_patients_validation = 2;
  p.n_patches_validation = 12;
  p.seed = 99;
  return p;
}

bool same_set(const PatchSet& a, const PatchSet& b) {
  return a.side == b.side && a.channels == b.channels && a.labels == b.labels &&
         a.patient_ids == b.patient_ids && a.site_ids == b.site_ids &&
         a.pixels.size() == b.pixels.size() &&
         std::memcmp(a.pixels.data(), b.pixels.data(), 4 * a.pixels.size()) == 0;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("full-scale profiles carry the published counts") {
  const auto p = default_eight_sites(1.0, 1);
  REQUIRE(p.size() == 8);
  CHECK(p[0].n_patients_train == 89);
  CHECK(p[0].n_patches_train == 10542);
  CHECK(p[0].n_patients_validation == 22);
  CHECK(p[0].n_patches_validation == 2602);
  CHECK(p[2].n_patients_train == 3);
  CHECK(p[2].n_patches_train == 11039);
  CHECK(p[5].n_patches_train == 1938);
  CHECK(p[7].n_patches_train == 39665);
  CHECK(p[7].n_patches_validation == 11857);
  for (const auto& s : p) {
    CHECK(s.n_patches_train <= p[7].n_patches_train);
    CHECK(s.n_patches_train >= p[5].n_patches_train);
  }
}

TEST_CASE("default profiles: rates, shifts and the all-negative site") {
  const auto p = default_eight_sites(0.02, 2021);
  std::set<std::vector<double>> shifts;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i].site_id == static_cast<int>(i) + 1);
    CHECK_NOTHROW(p[i].validate());
    shifts.insert(p[i].texture_shift);
    for (double s : p[i].texture_shift) CHECK(std::abs(s) <= 0.2);
    if (static_cast<int>(i) == kAllNegativeSite) {
      CHECK(p[i].positive_rate_validation == 0.0);
      continue;
    }
    CHECK(p[i].positive_rate_train >= 0.2);
    CHECK(p[i].positive_rate_train <= 0.5);
    CHECK(p[i].positive_rate_validation >= 0.2);
    CHECK(p[i].positive_rate_validation <= 0.5);
  }
  CHECK(shifts.size() == 8);
  CHECK(default_eight_sites(0.02, 2021) == p);
  CHECK_FALSE(default_eight_sites(0.02, 2022) == p);
}

TEST_CASE("scaled counts are proportional with the patient floor") {
  for (double scale : {0.001, 0.005, 0.02, 0.05, 0.3}) {
    const auto p = default_eight_sites(scale, 3);
    for (int i = 0; i < 8; ++i) {
      const auto& c = kFullScaleCounts[i];
      const int pt = std::max(1, static_cast<int>(std::llround(c.patients_train * scale)));
      CHECK(p[i].n_patients_train == pt);
      CHECK(p[i].n_patients_train >= 1);
      CHECK(p[i].n_patches_train ==
            std::max(pt, static_cast<int>(std::llround(c.patches_train * scale))));
      CHECK(p[i].n_patches_train >= p[i].n_patients_train);
    }
  }
  CHECK_THROWS_AS(default_eight_sites(0.0, 1), Error);
  CHECK_THROWS_AS(default_eight_sites(1.5, 1), Error);
}

TEST_CASE("generate_site honors counts, rates and patient partition") {
  const auto p = small_profile();
  const auto shard = generate_site(p);
  CHECK(shard.site_id == p.site_id);
  CHECK(shard.train.size() == 30);
  CHECK(shard.validation.size() == 12);
  CHECK(std::count(shard.train.labels.begin(), shard.train.labels.end(), 1) == 12);
  CHECK(std::count(shard.validation.labels.begin(), shard.validation.labels.end(), 1) == 3);
  CHECK(std::set(shard.train.patient_ids.begin(), shard.train.patient_ids.end()).size() == 4);
  CHECK(std::set(shard.validation.patient_ids.begin(), shard.validation.patient_ids.end()).size() == 2);
  CHECK_NOTHROW(shard.validate());
  for (float v : shard.train.pixels) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  for (int s : shard.train.site_ids) CHECK(s == p.site_id);
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  const auto p = small_profile();
  const auto a = generate_site(p);
  const auto b = generate_site(p);
  CHECK(same_set(a.train, b.train));
  CHECK(same_set(a.validation, b.validation));
  auto q = p;
  q.seed = 100;
  CHECK_FALSE(same_set(a.train, generate_site(q).train));
}

TEST_CASE("zero validation rate gives an all-negative validation split") {
  auto p = small_profile();
  p.positive_rate_validation = 0.0;
  const auto shard = generate_site(p);
  for (auto l : shard.validation.labels) CHECK(l == 0);
}

TEST_CASE("inconsistent counts are rejected") {
  auto p = small_profile();
  p.n_patches_train = 2;
  CHECK_THROWS_AS(generate_site(p), Error);
  p = small_profile();
  p.n_patients_train = 0;
  CHECK_THROWS_AS(generate_site(p), Error);
  p = small_profile();
  p.texture_shift = {0.3, 0.0, 0.0};
  CHECK_THROWS_AS(generate_site(p), Error);
  p = small_profile();
  p.positive_rate_train = 1.2;
  CHECK_THROWS_AS(generate_site(p), Error);
}

TEST_CASE("brute-force blob counter agrees with labels on >= 99% of patches") {
  std::size_t total = 0, agree = 0, wrong_positive = 0, wrong_negative = 0;
  for (const auto& profile : default_eight_sites(0.02, 2021)) {
    const auto shard = generate_site(profile);
    for (const PatchSet* set : {&shard.train, &shard.validation}) {
      for (std::size_t i = 0; i < set->size(); ++i) {
        const auto s = set->sample(i);
        const int blobs = count_blobs(s.pixels, set->side, profile.texture_shift);
        const bool predicted = blobs >= 2;
        ++total;
        if (predicted == (s.label == 1)) {
          ++agree;
        } else if (s.label == 1) {
          ++wrong_positive;
        } else {
          ++wrong_negative;
        }
      }
    }
  }
  MESSAGE("blob-count fidelity " << agree << "/" << total << " (missed positives "
                                 << wrong_positive << ", spurious " << wrong_negative << ")");
  CHECK(total > 2000);
  CHECK(static_cast<double>(agree) >= 0.99 * static_cast<double>(total));
}

TEST_CASE("draw_patch reports the blobs it drew") {
  Rng rng(5);
  const std::vector<double> shift{0.0, 0.0, 0.0};
  std::vector<float> out(32 * 32 * 3);
  int pos_ok = 0, neg_ok = 0;
  for (int i = 0; i < 300; ++i) {
    const int n = draw_patch(rng, 32, 3, true, {shift, 0.9, 0.0}, out);
    pos_ok += (n >= 2 && n <= 4 && count_blobs(out, 32, shift) == n);
    const int m = draw_patch(rng, 32, 3, false, {shift, 0.9, 0.0}, out);
    neg_ok += (m <= 1 && count_blobs(out, 32, shift) == m);
  }
  CHECK(pos_ok >= 297);
  CHECK(neg_ok >= 297);
}

TEST_CASE("pool_shards concatenates by site and keeps patients disjoint") {
  std::vector<SiteShard> shards;
  for (int id : {3, 1, 2}) {
    auto p = small_profile(id);
    p.seed = 10 + id;
    shards.push_back(generate_site(p));
  }
  const auto [train, validation] = pool_shards(shards);
  CHECK(train.size() == 90);
  CHECK(validation.size() == 36);
  CHECK(std::is_sorted(train.site_ids.begin(), train.site_ids.end()));
  // Site 1's samples come first in their original order.
  const auto& s1 = shards[1].train;
  CHECK(std::memcmp(train.pixels.data(), s1.pixels.data(), 4 * s1.pixels.size()) == 0);
  std::set<std::string> tp(train.patient_ids.begin(), train.patient_ids.end());
  for (const auto& v : validation.patient_ids) CHECK(tp.count(v) == 0);

  const auto [one, one_v] = pool_shards({shards[0]});
  CHECK(same_set(one, shards[0].train));
  CHECK(same_set(one_v, shards[0].validation));
  CHECK_THROWS_AS(pool_shards({}), Error);
}

TEST_CASE("manifest round-trip is exact") {
  const auto dir = fedtil::testing::scratch_dir("manifest_rt");
  const auto shard = generate_site(small_profile());
  write_manifest(shard, dir);
  const auto back = read_manifest(dir);
  CHECK(back.site_id == shard.site_id);
  CHECK(back.profile == shard.profile);
  CHECK(same_set(back.train, shard.train));
  CHECK(same_set(back.validation, shard.validation));

  // Rewriting is byte-identical.
  const auto json1 = read_file(dir + "/manifest.json");
  const auto t1 = read_file(dir + "/train.fsht");
  write_manifest(back, dir);
  CHECK(read_file(dir + "/manifest.json") == json1);
  CHECK(read_file(dir + "/train.fsht") == t1);
}

TEST_CASE("damaged manifests produce structured errors") {
  const auto dir = fedtil::testing::scratch_dir("manifest_bad");
  const auto shard = generate_site(small_profile());
  write_manifest(shard, dir);
  const auto json_bytes = read_file(dir + "/manifest.json");
  const auto tensor_bytes = read_file(dir + "/train.fsht");
  auto restore = [&] {
    write_file(dir + "/manifest.json", json_bytes);
    write_file(dir + "/train.fsht", tensor_bytes);
  };

  SUBCASE("truncated tensor file") {
    write_file(dir + "/train.fsht", std::span(tensor_bytes.data(), tensor_bytes.size() / 2));
    CHECK_THROWS_AS(read_manifest(dir), ParseError);
  }
  SUBCASE("every truncation of the index") {
    for (std::size_t n = 0; n < json_bytes.size(); n += 7) {
      write_file(dir + "/manifest.json", std::span(json_bytes.data(), n));
      CHECK_THROWS_AS(read_manifest(dir), Error);
    }
  }
  SUBCASE("malformed JSON reports a byte offset") {
    const std::string text = "{\"format_version\": 1,,}";
    write_file(dir + "/manifest.json",
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    try {
      read_manifest(dir);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.offset() > 0);
      CHECK(e.offset() <= text.size());
    }
  }
  SUBCASE("version mismatch") {
    auto j = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    j["format_version"] = 2;
    const auto text = j.dump();
    write_file(dir + "/manifest.json",
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    try {
      read_manifest(dir);
      FAIL("expected a version error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kVersion);
    }
  }
  SUBCASE("label count disagrees with tensor") {
    auto j = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    j["splits"][0]["labels"].erase(0);
    const auto text = j.dump();
    write_file(dir + "/manifest.json",
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    CHECK_THROWS_AS(read_manifest(dir), Error);
  }
  SUBCASE("empty train set is rejected") {
    SiteShard empty = shard;
    empty.train = PatchSet{};
    empty.train.side = shard.train.side;
    empty.train.channels = shard.train.channels;
    const auto edir = fedtil::testing::scratch_dir("manifest_empty");
    CHECK_THROWS_AS(write_manifest(empty, edir), Error);
    auto j = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    j["splits"][0]["labels"] = nlohmann::json::array();
    j["splits"][0]["patient_ids"] = nlohmann::json::array();
    j["splits"][0]["shape"][0] = 0;
    const auto text = j.dump();
    write_file(dir + "/manifest.json",
               std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    FloatTensor t{{0, 32, 32, 3}, {}};
    write_file(dir + "/train.fsht", encode_tensor(t));
    CHECK_THROWS_AS(read_manifest(dir), Error);
  }
  SUBCASE("missing directory") {
    try {
      read_manifest(dir + "/nope");
      FAIL("expected an I/O error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kIo);
    }
  }
  restore();
  CHECK_NOTHROW(read_manifest(dir));
}

}  // TEST_SUITE
