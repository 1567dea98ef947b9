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
#include <string>
#include <vector>

#include "fedtil/dataset.hpp"
#include "fedtil/nn.hpp"

namespace fedtil::heatmap {

inline constexpr double kDefaultPatchMicrons = 50.0;

// A slide held in memory as HWC floats in [0,1]. `pixels` may be empty when
// only the geometry is needed.
struct SlideSpec {
  int width_px = 0;
  int height_px = 0;
  double microns_per_pixel = 0.5;
  int channels = 3;
  std::vector<float> pixels;

  void validate() const;
};

struct PatchGrid {
  int patch_px = 0;
  int cols = 0;
  int rows = 0;
};

// patch_px = round(patch_microns / mpp); partial patches at the right and
// bottom edges are dropped.
PatchGrid patch_grid(int width_px, int height_px, double microns_per_pixel,
                     double patch_microns = kDefaultPatchMicrons);
PatchGrid patch_grid(const SlideSpec& slide, double patch_microns = kDefaultPatchMicrons);

struct ProbabilityMap {
  int cols = 0;
  int rows = 0;
  int patch_px = 0;
  std::vector<double> grid;  // row-major, rows x cols
  std::string slide_ref;

  double at(int row, int col) const { return grid[static_cast<std::size_t>(row) * cols + col]; }
};

struct ScoreOptions {
  double patch_microns = kDefaultPatchMicrons;
  // Nearest-neighbor resize of each patch to the network input side.
  bool resize = true;
};

ProbabilityMap score_slide(const nn::NetworkSpec& spec, const nn::ModelWeights& weights,
                           const SlideSpec& slide, const ScoreOptions& options = {});

// Row-major grid, one CSV line per row, 6 decimals.
std::string map_csv(const ProbabilityMap& map);
std::vector<double> parse_map_csv(const std::string& text, int* cols = nullptr,
                                  int* rows = nullptr);

inline constexpr int kRenderScale = 8;

// Binary PPM (P6): "P6\n<w> <h>\n255\n" then RGB bytes; each cell becomes a
// kRenderScale square colored (255p, 48(1-p), 48(1-p)).
std::vector<std::uint8_t> map_ppm(const ProbabilityMap& map, int scale = kRenderScale);

// Writes <path_stem>.csv and <path_stem>.ppm.
void render(const ProbabilityMap& map, const std::string& path_stem);

double mean_abs_difference(const ProbabilityMap& a, const ProbabilityMap& b);

// A slide tiled from generator patches, with the label of every tile.
struct SyntheticSlide {
  SlideSpec slide;
  int tile_px = 0;
  int cols = 0;
  int rows = 0;
  std::vector<std::uint8_t> tile_labels;  // row-major
};

// Tiles follow a smooth field of TIL density: positives concentrate in a few
// elliptical regions. mpp is chosen so that 50 um maps to tile_px pixels.
SyntheticSlide make_synthetic_slide(const dataset::SiteProfile& style, int cols, int rows,
                                    int tile_px, std::uint64_t seed);

inline constexpr int kSlideVersion = 1;

// <dir>/slide.json + <dir>/pixels.fsht ([height, width, channels]).
void write_slide(const SyntheticSlide& slide, const std::string& dir);
SyntheticSlide read_slide(const std::string& dir);

}  // namespace fedtil::heatmap
