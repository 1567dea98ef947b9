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

#include "fedtil/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "fedtil/binary_io.hpp"
#include "fedtil/error.hpp"
#include "fedtil/serialize.hpp"

namespace fedtil::dataset {
namespace {

using nlohmann::json;

constexpr double kBackground[3] = {0.90, 0.72, 0.84};
constexpr double kBlobColor[3] = {0.10, 0.05, 0.30};
constexpr double kDistractorColor[3] = {0.74, 0.60, 0.80};
constexpr double kDistractorAlpha = 0.6;
// Melanin-laden tumor cells: as dark as lymphocytes but brown instead of blue.
constexpr double kMimicColor[3] = {0.36, 0.20, 0.10};

double channel_value(const double (&color)[3], int c) { return c < 3 ? color[c] : 0.8; }

struct Disk {
  double cx, cy, r;
};

void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); }

void fill_split(const SiteProfile& p, int split, int n_patients, int n_patches, double rate,
                const std::string& tag, PatchSet& out) {
  out.side = p.patch_side;
  out.channels = p.channels;
  const std::size_t per = out.patch_values();
  out.pixels.assign(per * n_patches, 0.0f);
  out.labels.assign(n_patches, 0);
  out.site_ids.assign(n_patches, p.site_id);
  out.patient_ids.resize(n_patches);

  const auto n_pos = static_cast<std::size_t>(std::llround(rate * n_patches));
  std::fill_n(out.labels.begin(), std::min<std::size_t>(n_pos, n_patches), std::uint8_t{1});
  Rng label_rng(mix_seed(p.seed, static_cast<std::uint64_t>(split), 0x6c61626cULL));
  shuffle(out.labels.begin(), out.labels.end(), label_rng);

  for (int i = 0; i < n_patches; ++i) {
    // Contiguous runs of patches per patient.
    const auto patient = static_cast<int>(static_cast<long long>(i) * n_patients / n_patches);
    out.patient_ids[i] = "site" + std::to_string(p.site_id) + "-" + tag + "-p" +
                         std::to_string(patient);
    Rng rng(mix_seed(p.seed, static_cast<std::uint64_t>(split) + 1, static_cast<std::uint64_t>(i)));
    draw_patch(rng, p.patch_side, p.channels, out.labels[i] == 1,
               {p.texture_shift, p.blob_intensity, p.mimic_rate},
               std::span<float>(out.pixels).subspan(per * i, per));
  }
}

json profile_to_json(const SiteProfile& p) {
  return {{"site_id", p.site_id},
          {"positive_rate_train", p.positive_rate_train},
          {"positive_rate_validation", p.positive_rate_validation},
          {"texture_shift", p.texture_shift},
          {"blob_intensity", p.blob_intensity},
          {"mimic_rate", p.mimic_rate},
          {"n_patients_train", p.n_patients_train},
          {"n_patches_train", p.n_patches_train},
          {"n_patients_validation", p.n_patients_validation},
          {"n_patches_validation", p.n_patches_validation},
          {"seed", p.seed},
          {"patch_side", p.patch_side},
          {"channels", p.channels}};
}

SiteProfile profile_from_json(const json& j) {
  SiteProfile p;
  p.site_id = j.at("site_id").get<int>();
  p.positive_rate_train = j.at("positive_rate_train").get<double>();
  p.positive_rate_validation = j.at("positive_rate_validation").get<double>();
  p.texture_shift = j.at("texture_shift").get<std::vector<double>>();
  p.blob_intensity = j.at("blob_intensity").get<double>();
  p.mimic_rate = j.at("mimic_rate").get<double>();
  p.n_patients_train = j.at("n_patients_train").get<int>();
  p.n_patches_train = j.at("n_patches_train").get<int>();
  p.n_patients_validation = j.at("n_patients_validation").get<int>();
  p.n_patches_validation = j.at("n_patches_validation").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.patch_side = j.at("patch_side").get<int>();
  p.channels = j.at("channels").get<int>();
  return p;
}

json split_to_json(const char* name, const char* file, const PatchSet& s) {
  return {{"name", name},
          {"tensor_file", file},
          {"shape", {s.size(), s.side, s.side, s.channels}},
          {"labels", s.labels},
          {"patient_ids", s.patient_ids}};
}

PatchSet split_from_json(const json& j, const std::filesystem::path& dir, int site_id) {
  PatchSet s;
  const auto shape = j.at("shape").get<std::vector<std::uint32_t>>();
  if (shape.size() != 4) throw Error(ErrorCode::kParse, "split shape must have rank 4");
  s.side = static_cast<int>(shape[1]);
  s.channels = static_cast<int>(shape[3]);
  if (shape[1] != shape[2]) throw Error(ErrorCode::kParse, "patches must be square");
  s.labels = j.at("labels").get<std::vector<std::uint8_t>>();
  s.patient_ids = j.at("patient_ids").get<std::vector<std::string>>();
  if (s.labels.size() != shape[0] || s.patient_ids.size() != shape[0]) {
    throw Error(ErrorCode::kParse, "split '" + j.at("name").get<std::string>() +
                                       "' has inconsistent label/patient/shape counts");
  }
  for (auto l : s.labels) {
    if (l > 1) throw Error(ErrorCode::kParse, "labels must be 0 or 1");
  }
  const auto file = (dir / j.at("tensor_file").get<std::string>()).string();
  const auto bytes = read_file(file);
  FloatTensor t;
  try {
    t = decode_tensor(bytes);
  } catch (const ParseError& e) {
    throw e.within(file);
  } catch (const Error& e) {
    throw Error(e.code(), file + ": " + e.what());
  }
  if (t.shape != shape) {
    throw Error(ErrorCode::kShapeMismatch, file + ": tensor shape differs from manifest");
  }
  s.pixels = std::move(t.values);
  s.site_ids.assign(s.labels.size(), site_id);
  return s;
}

}  // namespace

PatchSample PatchSet::sample(std::size_t i) const {
  const std::size_t per = patch_values();
  return {std::span<const float>(pixels).subspan(i * per, per), labels[i], &patient_ids[i],
          site_ids[i]};
}

void PatchSet::append(const PatchSet& other) {
  if (other.empty()) return;
  if (empty() && pixels.empty()) {
    side = other.side;
    channels = other.channels;
  } else if (side != other.side || channels != other.channels) {
    throw Error(ErrorCode::kShapeMismatch, "cannot concatenate patch sets of different geometry");
  }
  pixels.insert(pixels.end(), other.pixels.begin(), other.pixels.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  patient_ids.insert(patient_ids.end(), other.patient_ids.begin(), other.patient_ids.end());
  site_ids.insert(site_ids.end(), other.site_ids.begin(), other.site_ids.end());
}

void SiteProfile::validate() const {
  auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate_ok(positive_rate_train) || !rate_ok(positive_rate_validation)) {
    invalid("site " + std::to_string(site_id) + ": positive rates must be in [0,1]");
  }
  if (patch_side < 4 || channels < 1) invalid("patch side must be >= 4 and channels >= 1");
  if (texture_shift.size() != static_cast<std::size_t>(channels)) {
    invalid("texture_shift needs one entry per channel");
  }
  for (double s : texture_shift) {
    if (!(s >= -0.2 && s <= 0.2)) invalid("texture_shift entries must be in [-0.2, 0.2]");
  }
  if (!(blob_intensity > 0.0 && blob_intensity <= 1.0)) invalid("blob_intensity must be in (0,1]");
  if (!(mimic_rate >= 0.0 && mimic_rate <= 4.0)) invalid("mimic_rate must be in [0,4]");
  if (n_patients_train < 0 || n_patches_train < 0 || n_patients_validation < 0 ||
      n_patches_validation < 0) {
    invalid("counts must be >= 0");
  }
  if (n_patients_train < 1 || n_patches_train < 1) {
    invalid("site " + std::to_string(site_id) + ": training split needs >= 1 patient and patch");
  }
  if (n_patches_train < n_patients_train) {
    invalid("site " + std::to_string(site_id) + ": fewer training patches than patients");
  }
  if (n_patches_validation < n_patients_validation ||
      (n_patches_validation > 0 && n_patients_validation == 0)) {
    invalid("site " + std::to_string(site_id) + ": validation patches inconsistent with patients");
  }
}

void SiteShard::validate() const {
  if (train.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "site " + std::to_string(site_id) + " has an empty training set");
  }
  if (!validation.empty() && (validation.side != train.side || validation.channels != train.channels)) {
    throw Error(ErrorCode::kShapeMismatch, "train and validation patch geometry differ");
  }
  const std::set<std::string> train_patients(train.patient_ids.begin(), train.patient_ids.end());
  for (const auto& p : validation.patient_ids) {
    if (train_patients.count(p)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "patient '" + p + "' appears in both train and validation");
    }
  }
}

int draw_patch(Rng& rng, int side, int channels, bool positive, const PatchStyle& style,
               std::span<float> out) {
  // Background: H&E-like tint, low-frequency texture, pixel noise.
  const double fx = uniform(rng, 0.15, 0.45), fy = uniform(rng, 0.15, 0.45);
  const double px = uniform(rng, 0.0, 6.283185307179586), py = uniform(rng, 0.0, 6.283185307179586);
  std::vector<double> img(static_cast<std::size_t>(side) * side * channels);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double wave = 0.06 * std::sin(fx * x + px) * std::sin(fy * y + py);
      for (int c = 0; c < channels; ++c) {
        img[(y * side + x) * channels + c] =
            channel_value(kBackground, c) + wave + uniform(rng, -0.04, 0.04);
      }
    }
  }

  auto paint = [&](double cx, double cy, double rx, double ry, const double (&color)[3],
                   double alpha) {
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
    const int y1 = std::min(side - 1, static_cast<int>(std::ceil(cy + ry)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
    const int x1 = std::min(side - 1, static_cast<int>(std::ceil(cx + rx)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy > 1.0) continue;
        for (int c = 0; c < channels; ++c) {
          double& v = img[(y * side + x) * channels + c];
          v = v * (1.0 - alpha) + channel_value(color, c) * alpha;
        }
      }
    }
  };

  // Pale tumor-like nuclei that are present regardless of label.
  const auto n_distractors = uniform_index(rng, 3);
  for (std::uint64_t i = 0; i < n_distractors; ++i) {
    const double rx = uniform(rng, 0.08, 0.13) * side;
    const double ry = rx * uniform(rng, 0.7, 1.0);
    paint(uniform(rng, 0, side), uniform(rng, 0, side), rx, ry, kDistractorColor,
          kDistractorAlpha);
  }

  // Dark nuclei: large mimics first, then the lymphocyte blobs that decide the
  // label. Painted pixels of different nuclei never touch (4-neighborhood).
  std::vector<Disk> nuclei;
  auto place = [&](double min_d, double max_d) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double r = 0.5 * side * uniform(rng, min_d, max_d);
      const double cx = uniform(rng, r + 0.5, side - r - 0.5);
      const double cy = uniform(rng, r + 0.5, side - r - 0.5);
      const bool clear = std::all_of(nuclei.begin(), nuclei.end(), [&](const Disk& d) {
        return std::hypot(d.cx - cx, d.cy - cy) > d.r + r + 1.5;
      });
      if (clear) {
        nuclei.push_back({cx, cy, r});
        return true;
      }
    }
    return false;
  };
  const double whole = std::floor(style.mimic_rate);
  const int n_mimics =
      static_cast<int>(whole) + (uniform01(rng) < style.mimic_rate - whole ? 1 : 0);
  for (int i = 0; i < n_mimics; ++i) place(kMimicMinDiameter, kMimicMaxDiameter);
  for (const auto& d : nuclei) paint(d.cx, d.cy, d.r, d.r, kMimicColor, style.blob_intensity);
  const std::size_t first_blob = nuclei.size();
  const int wanted = positive ? 2 + static_cast<int>(uniform_index(rng, 3))
                              : static_cast<int>(uniform_index(rng, 2));
  for (int i = 0; i < wanted; ++i) place(kBlobMinDiameter, kBlobMaxDiameter);
  for (std::size_t i = first_blob; i < nuclei.size(); ++i) {
    const auto& d = nuclei[i];
    paint(d.cx, d.cy, d.r, d.r, kBlobColor, style.blob_intensity);
  }

  for (std::size_t i = 0; i < img.size(); ++i) {
    const double shifted = img[i] + style.texture_shift[i % channels];
    out[i] = static_cast<float>(std::clamp(shifted, 0.0, 1.0));
  }
  return static_cast<int>(nuclei.size() - first_blob);
}

SiteShard generate_site(const SiteProfile& profile) {
  profile.validate();
  SiteShard shard;
  shard.site_id = profile.site_id;
  shard.profile = profile;
  fill_split(profile, 0, profile.n_patients_train, profile.n_patches_train,
             profile.positive_rate_train, "train", shard.train);
  fill_split(profile, 1, profile.n_patients_validation, profile.n_patches_validation,
             profile.positive_rate_validation, "val", shard.validation);
  return shard;
}

const SiteCounts kFullScaleCounts[8] = {
    {89, 10542, 22, 2602}, {174, 20517, 43, 5107}, {3, 11039, 1, 237},
    {32, 3793, 8, 950},    {156, 18505, 40, 4753}, {19, 1938, 5, 500},
    {8, 16265, 2, 7091},   {48, 39665, 12, 11857},
};

std::vector<SiteProfile> default_eight_sites(double scale, std::uint64_t master_seed,
                                             int patch_side, int channels) {
  if (!(scale > 0.0 && scale <= 1.0)) invalid("scale must be in (0, 1]");
  auto scaled = [scale](int n) { return static_cast<int>(std::llround(n * scale)); };
  std::vector<SiteProfile> out;
  for (int i = 0; i < 8; ++i) {
    const auto& c = kFullScaleCounts[i];
    SiteProfile p;
    p.site_id = i + 1;
    p.patch_side = patch_side;
    p.channels = channels;
    p.n_patients_train = std::max(1, scaled(c.patients_train));
    p.n_patches_train = std::max(p.n_patients_train, scaled(c.patches_train));
    p.n_patients_validation = std::max(1, scaled(c.patients_validation));
    p.n_patches_validation = std::max(p.n_patients_validation, scaled(c.patches_validation));

    Rng rng(mix_seed(master_seed, static_cast<std::uint64_t>(p.site_id)));
    p.seed = rng();
    p.positive_rate_train = uniform(rng, 0.2, 0.5);
    p.positive_rate_validation = uniform(rng, 0.2, 0.5);
    // Sites are spread evenly over the shift range, then jittered per channel.
    const double base = -0.16 + 0.32 * i / 7.0;
    p.texture_shift.resize(channels);
    for (auto& s : p.texture_shift) s = std::clamp(base + uniform(rng, -0.04, 0.04), -0.2, 0.2);
    p.blob_intensity = uniform(rng, 0.75, 1.0);
    p.mimic_rate = (i == 5 || i == 7) ? 1.2 : 0.0;
    if (i == kAllNegativeSite) {
      p.positive_rate_validation = 0.0;
      p.positive_rate_train = 0.05;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::pair<PatchSet, PatchSet> pool_shards(const std::vector<SiteShard>& shards) {
  if (shards.empty()) invalid("pool_shards needs at least one shard");
  std::vector<const SiteShard*> ordered;
  for (const auto& s : shards) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const SiteShard* a, const SiteShard* b) { return a->site_id < b->site_id; });
  std::pair<PatchSet, PatchSet> pooled;
  pooled.first.side = pooled.second.side = ordered.front()->train.side;
  pooled.first.channels = pooled.second.channels = ordered.front()->train.channels;
  for (const auto* s : ordered) {
    pooled.first.append(s->train);
    pooled.second.append(s->validation);
  }
  return pooled;
}

void write_manifest(const SiteShard& shard, const std::string& dir) {
  shard.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create directory '" + dir + "': " + ec.message());

  auto write_split = [&](const PatchSet& s, const char* file) {
    FloatTensor t{{static_cast<std::uint32_t>(s.size()), static_cast<std::uint32_t>(s.side),
                   static_cast<std::uint32_t>(s.side), static_cast<std::uint32_t>(s.channels)},
                  s.pixels};
    write_file((fs::path(dir) / file).string(), encode_tensor(t));
  };
  write_split(shard.train, "train.fsht");
  write_split(shard.validation, "validation.fsht");

  json index = {{"format_version", kManifestVersion},
                {"site_id", shard.site_id},
                {"profile", profile_to_json(shard.profile)},
                {"splits",
                 {split_to_json("train", "train.fsht", shard.train),
                  split_to_json("validation", "validation.fsht", shard.validation)}}};
  const std::string text = index.dump(1) + "\n";
  write_file((fs::path(dir) / "manifest.json").string(),
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

SiteShard read_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dir) / "manifest.json").string();
  const auto bytes = read_file(path);
  json index;
  try {
    index = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ParseError(e.byte, path + ": malformed JSON");
  }
  try {
    const int version = index.at("format_version").get<int>();
    if (version != kManifestVersion) {
      throw Error(ErrorCode::kVersion, path + ": manifest version " + std::to_string(version) +
                                           " unsupported (expected " +
                                           std::to_string(kManifestVersion) + ")");
    }
    SiteShard shard;
    shard.site_id = index.at("site_id").get<int>();
    shard.profile = profile_from_json(index.at("profile"));
    bool have_train = false, have_val = false;
    for (const auto& split : index.at("splits")) {
      const auto name = split.at("name").get<std::string>();
      if (name == "train") {
        shard.train = split_from_json(split, dir, shard.site_id);
        have_train = true;
      } else if (name == "validation") {
        shard.validation = split_from_json(split, dir, shard.site_id);
        have_val = true;
      } else {
        throw Error(ErrorCode::kParse, "unknown split '" + name + "'");
      }
    }
    if (!have_train || !have_val) throw Error(ErrorCode::kParse, "manifest lacks a split");
    shard.validate();
    return shard;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    if (std::string(e.what()).rfind(path, 0) == 0) throw;
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace fedtil::dataset
