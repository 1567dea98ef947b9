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

#include "fedtil/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "fedtil/binary_io.hpp"
#include "fedtil/error.hpp"
#include "fedtil/random.hpp"
#include "fedtil/serialize.hpp"

namespace fedtil::heatmap {

void SlideSpec::validate() const {
  if (width_px < 1 || height_px < 1 || channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "slide dimensions must be >= 1");
  }
  if (!(microns_per_pixel > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "microns per pixel must be > 0");
  }
  if (!pixels.empty() &&
      pixels.size() != static_cast<std::size_t>(width_px) * height_px * channels) {
    throw Error(ErrorCode::kShapeMismatch, "slide pixel buffer does not match its dimensions");
  }
}

PatchGrid patch_grid(int width_px, int height_px, double microns_per_pixel,
                     double patch_microns) {
  if (!(patch_microns > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "patch size in microns must be > 0");
  }
  if (!(microns_per_pixel > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "microns per pixel must be > 0");
  }
  const double px = std::round(patch_microns / microns_per_pixel);
  if (px < 1.0) throw Error(ErrorCode::kInvalidArgument, "patch is smaller than one pixel");
  if (px > 1e9) throw Error(ErrorCode::kInvalidArgument, "patch size overflows");
  PatchGrid g;
  g.patch_px = static_cast<int>(px);
  g.cols = width_px / g.patch_px;
  g.rows = height_px / g.patch_px;
  if (g.cols < 1 || g.rows < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "slide " + std::to_string(width_px) + "x" + std::to_string(height_px) +
                    " holds no whole " + std::to_string(g.patch_px) + " px patch");
  }
  return g;
}

PatchGrid patch_grid(const SlideSpec& slide, double patch_microns) {
  slide.validate();
  return patch_grid(slide.width_px, slide.height_px, slide.microns_per_pixel, patch_microns);
}

ProbabilityMap score_slide(const nn::NetworkSpec& spec, const nn::ModelWeights& weights,
                           const SlideSpec& slide, const ScoreOptions& options) {
  const PatchGrid g = patch_grid(slide, options.patch_microns);
  if (slide.pixels.empty()) throw Error(ErrorCode::kInvalidArgument, "slide has no pixel data");
  if (slide.channels != spec.input_channels) {
    throw Error(ErrorCode::kShapeMismatch, "slide has " + std::to_string(slide.channels) +
                                               " channels, network expects " +
                                               std::to_string(spec.input_channels));
  }
  if (g.patch_px != spec.input_side && !options.resize) {
    throw Error(ErrorCode::kShapeMismatch,
                "patch is " + std::to_string(g.patch_px) + " px but the network input is " +
                    std::to_string(spec.input_side) + " px and resizing is disabled");
  }

  const int in = spec.input_side;
  const int ch = slide.channels;
  const std::size_t per = static_cast<std::size_t>(in) * in * ch;
  std::vector<float> batch(per * g.cols * g.rows);
  std::vector<int> src_offset(in);
  for (int d = 0; d < in; ++d) {
    src_offset[d] = std::min(g.patch_px - 1, static_cast<int>((d + 0.5) * g.patch_px / in));
  }
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      float* dst = batch.data() + (static_cast<std::size_t>(r) * g.cols + c) * per;
      for (int y = 0; y < in; ++y) {
        const std::size_t sy = static_cast<std::size_t>(r) * g.patch_px + src_offset[y];
        for (int x = 0; x < in; ++x) {
          const std::size_t sx = static_cast<std::size_t>(c) * g.patch_px + src_offset[x];
          const float* src = slide.pixels.data() + (sy * slide.width_px + sx) * ch;
          std::copy_n(src, ch, dst + (static_cast<std::size_t>(y) * in + x) * ch);
        }
      }
    }
  }
  ProbabilityMap map;
  map.cols = g.cols;
  map.rows = g.rows;
  map.patch_px = g.patch_px;
  map.grid = nn::forward(spec, weights,
                         {batch, static_cast<std::size_t>(g.cols) * g.rows, in, ch});
  return map;
}

std::string map_csv(const ProbabilityMap& map) {
  std::string out;
  char buf[32];
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      std::snprintf(buf, sizeof buf, c ? ",%.6f" : "%.6f", map.at(r, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<double> parse_map_csv(const std::string& text, int* cols, int* rows) {
  std::vector<double> values;
  std::istringstream lines(text);
  std::string line;
  int n_rows = 0, n_cols = -1;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    int count = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kParse, "bad number '" + cell + "' in row " + std::to_string(n_rows));
      }
      ++count;
    }
    if (n_cols >= 0 && count != n_cols) {
      throw Error(ErrorCode::kParse, "ragged CSV row " + std::to_string(n_rows));
    }
    n_cols = count;
    ++n_rows;
  }
  if (cols) *cols = std::max(n_cols, 0);
  if (rows) *rows = n_rows;
  return values;
}

std::vector<std::uint8_t> map_ppm(const ProbabilityMap& map, int scale) {
  if (scale < 1) throw Error(ErrorCode::kInvalidArgument, "render scale must be >= 1");
  if (map.grid.size() != static_cast<std::size_t>(map.cols) * map.rows || map.grid.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "probability map grid is inconsistent");
  }
  const int w = map.cols * scale, h = map.rows * scale;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(w) * h * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double p = std::clamp(map.at(y / scale, x / scale), 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * p)));
      const auto cool = static_cast<std::uint8_t>(std::lround(48.0 * (1.0 - p)));
      out.push_back(cool);
      out.push_back(cool);
    }
  }
  return out;
}

void render(const ProbabilityMap& map, const std::string& path_stem) {
  const std::string csv = map_csv(map);
  write_file(path_stem + ".csv",
             std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
  write_file(path_stem + ".ppm", map_ppm(map));
}

double mean_abs_difference(const ProbabilityMap& a, const ProbabilityMap& b) {
  if (a.cols != b.cols || a.rows != b.rows) {
    throw Error(ErrorCode::kShapeMismatch, "probability maps differ in size");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.grid.size(); ++i) sum += std::abs(a.grid[i] - b.grid[i]);
  return sum / static_cast<double>(a.grid.size());
}

SyntheticSlide make_synthetic_slide(const dataset::SiteProfile& style, int cols, int rows,
                                    int tile_px, std::uint64_t seed) {
  style.validate();
  if (cols < 1 || rows < 1 || tile_px < 4) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic slide needs >= 1x1 tiles of >= 4 px");
  }
  const int ch = style.channels;
  SyntheticSlide s;
  s.tile_px = tile_px;
  s.cols = cols;
  s.rows = rows;
  s.slide.width_px = cols * tile_px;
  s.slide.height_px = rows * tile_px;
  s.slide.microns_per_pixel = kDefaultPatchMicrons / tile_px;
  s.slide.channels = ch;
  s.slide.pixels.resize(static_cast<std::size_t>(s.slide.width_px) * s.slide.height_px * ch);
  s.tile_labels.resize(static_cast<std::size_t>(cols) * rows);

  Rng layout(mix_seed(seed, 0x736c696465ULL));
  struct Region {
    double cx, cy, rx, ry;
  };
  std::vector<Region> regions(2 + uniform_index(layout, 2));
  for (auto& g : regions) {
    g = {uniform(layout, 0, cols), uniform(layout, 0, rows), uniform(layout, 0.12, 0.3) * cols,
         uniform(layout, 0.12, 0.3) * rows};
  }

  std::vector<float> tile(static_cast<std::size_t>(tile_px) * tile_px * ch);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double density = 0.05;
      for (const auto& g : regions) {
        const double dx = (c + 0.5 - g.cx) / g.rx, dy = (r + 0.5 - g.cy) / g.ry;
        density = std::max(density, 0.9 * std::exp(-(dx * dx + dy * dy)));
      }
      Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r), static_cast<std::uint64_t>(c)));
      const bool positive = uniform01(rng) < density;
      s.tile_labels[static_cast<std::size_t>(r) * cols + c] = positive ? 1 : 0;
      dataset::draw_patch(rng, tile_px, ch, positive,
                          {style.texture_shift, style.blob_intensity, style.mimic_rate}, tile);
      for (int y = 0; y < tile_px; ++y) {
        const std::size_t dst = ((static_cast<std::size_t>(r) * tile_px + y) * s.slide.width_px +
                                 static_cast<std::size_t>(c) * tile_px) * ch;
        std::copy_n(tile.begin() + static_cast<std::size_t>(y) * tile_px * ch,
                    static_cast<std::size_t>(tile_px) * ch, s.slide.pixels.begin() + dst);
      }
    }
  }
  return s;
}

void write_slide(const SyntheticSlide& s, const std::string& dir) {
  s.slide.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create directory '" + dir + "': " + ec.message());
  FloatTensor t{{static_cast<std::uint32_t>(s.slide.height_px),
                 static_cast<std::uint32_t>(s.slide.width_px),
                 static_cast<std::uint32_t>(s.slide.channels)},
                s.slide.pixels};
  write_file((fs::path(dir) / "pixels.fsht").string(), encode_tensor(t));
  nlohmann::json index = {{"format_version", kSlideVersion},
                          {"kind", "slide"},
                          {"width_px", s.slide.width_px},
                          {"height_px", s.slide.height_px},
                          {"microns_per_pixel", s.slide.microns_per_pixel},
                          {"channels", s.slide.channels},
                          {"tensor_file", "pixels.fsht"},
                          {"tile_px", s.tile_px},
                          {"tile_cols", s.cols},
                          {"tile_rows", s.rows},
                          {"tile_labels", s.tile_labels}};
  const std::string text = index.dump(1) + "\n";
  write_file((fs::path(dir) / "slide.json").string(),
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

SyntheticSlide read_slide(const std::string& dir) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  const std::string path = (fs::path(dir) / "slide.json").string();
  const auto bytes = read_file(path);
  json index;
  try {
    index = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, path + ": malformed JSON");
  }
  try {
    const int version = index.at("format_version").get<int>();
    if (version != kSlideVersion) {
      throw Error(ErrorCode::kVersion, path + ": slide version " + std::to_string(version) +
                                           " unsupported (expected " +
                                           std::to_string(kSlideVersion) + ")");
    }
    if (index.at("kind").get<std::string>() != "slide") {
      throw Error(ErrorCode::kParse, path + ": not a slide manifest");
    }
    SyntheticSlide s;
    s.slide.width_px = index.at("width_px").get<int>();
    s.slide.height_px = index.at("height_px").get<int>();
    s.slide.microns_per_pixel = index.at("microns_per_pixel").get<double>();
    s.slide.channels = index.at("channels").get<int>();
    s.tile_px = index.value("tile_px", 0);
    s.cols = index.value("tile_cols", 0);
    s.rows = index.value("tile_rows", 0);
    s.tile_labels = index.value("tile_labels", std::vector<std::uint8_t>{});
    const auto file = (fs::path(dir) / index.at("tensor_file").get<std::string>()).string();
    FloatTensor t;
    try {
      t = decode_tensor(read_file(file));
    } catch (const ParseError& e) {
      throw e.within(file);
    } catch (const Error& e) {
      throw Error(e.code(), file + ": " + e.what());
    }
    const std::vector<std::uint32_t> expected{static_cast<std::uint32_t>(s.slide.height_px),
                                              static_cast<std::uint32_t>(s.slide.width_px),
                                              static_cast<std::uint32_t>(s.slide.channels)};
    if (t.shape != expected) {
      throw Error(ErrorCode::kShapeMismatch, file + ": tensor shape differs from slide.json");
    }
    s.slide.pixels = std::move(t.values);
    s.slide.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
}

}  // namespace fedtil::heatmap
