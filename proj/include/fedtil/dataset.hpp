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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedtil/nn.hpp"
#include "fedtil/random.hpp"

namespace fedtil::dataset {

// Borrowed view of one patch in a PatchSet.
struct PatchSample {
  std::span<const float> pixels;  // side x side x channels, in [0,1]
  std::uint8_t label = 0;         // 1 = two or more lymphocyte-like blobs
  const std::string* patient_id = nullptr;
  int site_id = 0;
};

// Struct-of-arrays storage for a list of patches of identical geometry.
struct PatchSet {
  int side = 0;
  int channels = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> patient_ids;
  std::vector<int> site_ids;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t patch_values() const {
    return static_cast<std::size_t>(side) * side * channels;
  }
  PatchSample sample(std::size_t i) const;
  nn::LabeledPatches view() const { return {pixels, labels, side, channels}; }
  void append(const PatchSet& other);
};

struct SiteProfile {
  int site_id = 1;
  double positive_rate_train = 0.3;
  double positive_rate_validation = 0.3;
  std::vector<double> texture_shift{0.0, 0.0, 0.0};  // per channel, in [-0.2, 0.2]
  double blob_intensity = 0.9;                       // blend weight of blob color
  double mimic_rate = 0.0;  // mean count of large dark lymphocyte-like nuclei per patch
  int n_patients_train = 1;
  int n_patches_train = 1;
  int n_patients_validation = 1;
  int n_patches_validation = 1;
  std::uint64_t seed = 0;
  int patch_side = 32;
  int channels = 3;

  // Throws Error(kInvalidArgument).
  void validate() const;

  bool operator==(const SiteProfile&) const = default;
};

struct SiteShard {
  int site_id = 0;
  PatchSet train;
  PatchSet validation;
  SiteProfile profile;

  // Non-empty train set, consistent geometry, no patient in both splits.
  void validate() const;
};

// Blob geometry of the generator, shared with tests that re-derive labels.
inline constexpr double kBlobMinDiameter = 0.08;  // fraction of patch side
inline constexpr double kBlobMaxDiameter = 0.12;
inline constexpr double kMimicMinDiameter = 0.12;
inline constexpr double kMimicMaxDiameter = 0.18;

struct PatchStyle {
  std::span<const double> texture_shift;
  double blob_intensity = 0.9;
  double mimic_rate = 0.0;
};

// Draws one patch into `out` (side*side*channels values). Positive patches get
// 2-4 dark round blobs, negative ones 0 or 1, on a textured background with
// pale distractor nuclei and, at rate style.mimic_rate, large dark mimic
// nuclei that do not count. Returns the number of lymphocyte blobs drawn.
int draw_patch(Rng& rng, int side, int channels, bool positive, const PatchStyle& style,
               std::span<float> out);

SiteShard generate_site(const SiteProfile& profile);

// Per-site training/validation patient and patch counts at full scale.
struct SiteCounts {
  int patients_train;
  int patches_train;
  int patients_validation;
  int patches_validation;
};
extern const SiteCounts kFullScaleCounts[8];

// Index (0-based) of the site whose validation data is all negative.
inline constexpr int kAllNegativeSite = 5;

std::vector<SiteProfile> default_eight_sites(double scale, std::uint64_t master_seed,
                                             int patch_side = 32, int channels = 3);

// Concatenates train and validation sets in site order.
std::pair<PatchSet, PatchSet> pool_shards(const std::vector<SiteShard>& shards);

inline constexpr int kManifestVersion = 1;

// Writes <dir>/manifest.json, <dir>/train.fsht and <dir>/validation.fsht.
void write_manifest(const SiteShard& shard, const std::string& dir);
SiteShard read_manifest(const std::string& dir);

}  // namespace fedtil::dataset
