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

#include "fedtil/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "fedtil/binary_io.hpp"
#include "fedtil/dataset.hpp"
#include "fedtil/error.hpp"
#include "fedtil/heatmap.hpp"
#include "fedtil/random.hpp"
#include "fedtil/serialize.hpp"

namespace fedtil::experiment {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kSlideSalt = 0x51;

std::string fmt(double v, const char* pattern) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// Shortest text that parses back to exactly `v`.
std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw Error(ErrorCode::kInvalidArgument,
              "config key '" + key + "': '" + value + "' is not " + expected);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
  if (used != value.size()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

// "8x1,16x1,32x1": output channels x convolutions per block.
std::vector<nn::ConvBlock> parse_blocks(const std::string& key, const std::string& value) {
  std::vector<nn::ConvBlock> blocks;
  for (const auto& raw : split(value, ',')) {
    const auto item = trim(raw);
    const auto x = item.find('x');
    if (x == std::string::npos) bad_value(key, value, "a list like 8x1,16x1");
    blocks.push_back({parse_integer<int>(key, item.substr(0, x)),
                      parse_integer<int>(key, item.substr(x + 1))});
  }
  if (blocks.empty()) bad_value(key, value, "a list like 8x1,16x1");
  return blocks;
}

std::string blocks_string(const std::vector<nn::ConvBlock>& blocks) {
  std::string out;
  for (const auto& b : blocks) {
    if (!out.empty()) out += ",";
    out += std::to_string(b.out_channels) + "x" + std::to_string(b.convs);
  }
  return out;
}

std::vector<int> parse_sites(const std::string& key, const std::string& value) {
  std::vector<int> sites;
  for (const auto& raw : split(value, ',')) sites.push_back(parse_integer<int>(key, trim(raw)));
  return sites;
}

void log_line(const Logger& log, const std::string& line) {
  if (log) log(line);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create directory '" + dir.string() + "'");
}

void write_text(const std::string& path, const std::string& text) {
  ensure_dir(fs::path(path).parent_path());
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<dataset::SiteShard> load_shards(const ExperimentConfig& config) {
  std::vector<dataset::SiteShard> shards;
  for (int id : config.sites) {
    const auto dir = site_dir(config.out_dir, id);
    if (!fs::exists(fs::path(dir) / "manifest.json")) {
      throw Error(ErrorCode::kIo, "missing manifest '" + (fs::path(dir) / "manifest.json").string() +
                                      "' (run gen-data first)");
    }
    shards.push_back(dataset::read_manifest(dir));
    const auto& t = shards.back().train;
    if (t.side != config.network.input_side || t.channels != config.network.input_channels) {
      throw Error(ErrorCode::kShapeMismatch,
                  dir + ": patches are " + std::to_string(t.side) + "x" + std::to_string(t.side) +
                      "x" + std::to_string(t.channels) + " but the network expects " +
                      std::to_string(config.network.input_side) + "x" +
                      std::to_string(config.network.input_side) + "x" +
                      std::to_string(config.network.input_channels));
    }
  }
  return shards;
}

std::string model_label(const std::string& checkpoint) {
  if (checkpoint == "consensus") return "Consensus model";
  if (checkpoint == "centralized") return "Centralized model";
  if (checkpoint.rfind("site", 0) == 0) return "Site " + checkpoint.substr(4) + " model";
  return checkpoint;
}

nn::ModelWeights load_checked(const ExperimentConfig& config, const std::string& path) {
  auto w = load_weights(path);
  try {
    nn::check_layout(config.network, w);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
  return w;
}

std::string losses_csv(const std::vector<std::string>& columns,
                       const std::vector<const std::vector<double>*>& losses, int epochs) {
  std::string out = "round,epoch";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  const std::size_t n = losses.empty() ? 0 : losses.front()->size();
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(i / epochs) + "," + std::to_string(i % epochs);
    for (const auto* l : losses) out += "," + fmt((*l)[i], "%.6f");
    out += "\n";
  }
  return out;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  federation.rounds = 30;
  federation.epochs_per_round = 1;
  federation.weighting = federation::Weighting::kBySampleCount;
  federation.master_seed = 2021;
  federation.train.batch_size = 8;
}

void ExperimentConfig::validate() const {
  network.validate();
  federation.validate();
  if (!(scale > 0.0 && scale <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "dataset.scale must be in (0, 1]");
  }
  if (sites.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset.sites is empty");
  std::set<int> seen;
  for (int s : sites) {
    if (s < 1 || s > 8) {
      throw Error(ErrorCode::kInvalidArgument, "dataset.sites: site " + std::to_string(s) +
                                                   " is outside 1..8");
    }
    if (!seen.insert(s).second) {
      throw Error(ErrorCode::kInvalidArgument, "dataset.sites: site " + std::to_string(s) +
                                                   " listed twice");
    }
  }
  if (slide_style_site < 1 || slide_style_site > 8) {
    throw Error(ErrorCode::kInvalidArgument, "dataset.slide_style_site must be in 1..8");
  }
  if (slide_cols < 1 || slide_rows < 1 || slide_tile_px < 4) {
    throw Error(ErrorCode::kInvalidArgument, "dataset slide needs >= 1x1 tiles of >= 4 px");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "evaluation.threshold must be in (0, 1)");
  }
  if (!(patch_microns > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "heatmap.patch_microns must be positive");
  }
  if (out_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "output.dir is empty");
}

void apply_override(ExperimentConfig& c, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  auto& f = c.federation;
  if (key == "network.input_side") c.network.input_side = parse_integer<int>(key, value);
  else if (key == "network.channels") c.network.input_channels = parse_integer<int>(key, value);
  else if (key == "network.blocks") c.network.blocks = parse_blocks(key, value);
  else if (key == "network.init_seed") c.network.seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "federation.rounds") f.rounds = parse_integer<int>(key, value);
  else if (key == "federation.epochs_per_round") f.epochs_per_round = parse_integer<int>(key, value);
  else if (key == "federation.weighting") {
    try {
      f.weighting = federation::parse_weighting(value);
    } catch (const Error&) {
      bad_value(key, value, "by_sample_count or uniform");
    }
  } else if (key == "federation.master_seed") f.master_seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "federation.parallel") f.parallel = parse_bool(key, value);
  else if (key == "federation.batch_size") f.train.batch_size = parse_integer<int>(key, value);
  else if (key == "federation.learning_rate") f.train.adam.learning_rate = parse_double(key, value);
  else if (key == "federation.beta1") f.train.adam.beta1 = parse_double(key, value);
  else if (key == "federation.beta2") f.train.adam.beta2 = parse_double(key, value);
  else if (key == "federation.epsilon") f.train.adam.epsilon = parse_double(key, value);
  else if (key == "dataset.scale") c.scale = parse_double(key, value);
  else if (key == "dataset.seed") c.data_seed = parse_integer<std::uint64_t>(key, value);
  else if (key == "dataset.sites") c.sites = parse_sites(key, value);
  else if (key == "dataset.slide_cols") c.slide_cols = parse_integer<int>(key, value);
  else if (key == "dataset.slide_rows") c.slide_rows = parse_integer<int>(key, value);
  else if (key == "dataset.slide_tile_px") c.slide_tile_px = parse_integer<int>(key, value);
  else if (key == "dataset.slide_style_site") c.slide_style_site = parse_integer<int>(key, value);
  else if (key == "evaluation.threshold") c.threshold = parse_double(key, value);
  else if (key == "evaluation.parallel") c.parallel_evaluation = parse_bool(key, value);
  else if (key == "heatmap.patch_microns") c.patch_microns = parse_double(key, value);
  else if (key == "output.dir") c.out_dir = value;
  else throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::kParse, "config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw Error(ErrorCode::kParse, "config key '" + section + "' is outside any section");
    }
    for (const auto& [name, leaf] : body) {
      apply_override(config, section + "." + name, leaf.get_value<std::string>());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return parse_config(std::string(bytes.begin(), bytes.end()));
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::string config_to_ini(const ExperimentConfig& c) {
  const auto& f = c.federation;
  std::string sites;
  for (int s : c.sites) sites += (sites.empty() ? "" : ",") + std::to_string(s);
  std::ostringstream o;
  o << "[network]\n"
    << "input_side = " << c.network.input_side << "\n"
    << "channels = " << c.network.input_channels << "\n"
    << "blocks = " << blocks_string(c.network.blocks) << "\n"
    << "init_seed = " << c.network.seed << "\n\n"
    << "[federation]\n"
    << "rounds = " << f.rounds << "\n"
    << "epochs_per_round = " << f.epochs_per_round << "\n"
    << "weighting = " << federation::weighting_name(f.weighting) << "\n"
    << "master_seed = " << f.master_seed << "\n"
    << "parallel = " << (f.parallel ? "true" : "false") << "\n"
    << "batch_size = " << f.train.batch_size << "\n"
    << "learning_rate = " << fmt(f.train.adam.learning_rate) << "\n"
    << "beta1 = " << fmt(f.train.adam.beta1) << "\n"
    << "beta2 = " << fmt(f.train.adam.beta2) << "\n"
    << "epsilon = " << fmt(f.train.adam.epsilon) << "\n\n"
    << "[dataset]\n"
    << "scale = " << fmt(c.scale) << "\n"
    << "seed = " << c.data_seed << "\n"
    << "sites = " << sites << "\n"
    << "slide_cols = " << c.slide_cols << "\n"
    << "slide_rows = " << c.slide_rows << "\n"
    << "slide_tile_px = " << c.slide_tile_px << "\n"
    << "slide_style_site = " << c.slide_style_site << "\n\n"
    << "[evaluation]\n"
    << "threshold = " << fmt(c.threshold) << "\n"
    << "parallel = " << (c.parallel_evaluation ? "true" : "false") << "\n\n"
    << "[heatmap]\n"
    << "patch_microns = " << fmt(c.patch_microns) << "\n\n"
    << "[output]\n"
    << "dir = " << c.out_dir << "\n";
  return o.str();
}

TrainMode parse_mode(const std::string& name) {
  if (name == "centralized") return TrainMode::kCentralized;
  if (name == "federated") return TrainMode::kFederated;
  if (name == "site-specific") return TrainMode::kSiteSpecific;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown training mode '" + name + "' (centralized, federated, site-specific)");
}

const char* mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kCentralized: return "centralized";
    case TrainMode::kFederated: return "federated";
    case TrainMode::kSiteSpecific: return "site-specific";
  }
  return "?";
}

std::string site_dir(const std::string& out, int site_id) {
  return (fs::path(out) / "data" / ("site" + std::to_string(site_id))).string();
}

std::string slide_dir(const std::string& out) { return (fs::path(out) / "data" / "slide").string(); }

std::string checkpoint_path(const std::string& out, const std::string& model) {
  return (fs::path(out) / "checkpoints" / (model + ".fshd")).string();
}

std::string history_path(const std::string& out, TrainMode mode) {
  return (fs::path(out) / "history" / (std::string(mode_name(mode)) + ".csv")).string();
}

std::string matrix_stem(const std::string& out) {
  return (fs::path(out) / "evaluation" / "matrix").string();
}

std::string heatmap_stem(const std::string& out, const std::string& model) {
  return (fs::path(out) / "heatmaps" / model).string();
}

void cmd_gen_data(const ExperimentConfig& config, const Logger& log) {
  config.validate();
  const auto profiles = dataset::default_eight_sites(config.scale, config.data_seed,
                                                     config.network.input_side,
                                                     config.network.input_channels);
  for (const auto& profile : profiles) {
    const auto shard = dataset::generate_site(profile);
    const auto dir = site_dir(config.out_dir, profile.site_id);
    dataset::write_manifest(shard, dir);
    log_line(log, "site " + std::to_string(profile.site_id) + ": " +
                      std::to_string(shard.train.size()) + " train / " +
                      std::to_string(shard.validation.size()) + " validation patches -> " + dir);
  }
  const auto slide = heatmap::make_synthetic_slide(
      profiles[config.slide_style_site - 1], config.slide_cols, config.slide_rows,
      config.slide_tile_px, mix_seed(config.data_seed, kSlideSalt));
  heatmap::write_slide(slide, slide_dir(config.out_dir));
  log_line(log, "slide: " + std::to_string(slide.slide.width_px) + "x" +
                    std::to_string(slide.slide.height_px) + " px -> " + slide_dir(config.out_dir));
}

std::vector<std::string> cmd_train(const ExperimentConfig& config, TrainMode mode,
                                   const Logger& log) {
  config.validate();
  const auto shards = load_shards(config);
  const auto& out = config.out_dir;
  ensure_dir(fs::path(checkpoint_path(out, "x")).parent_path());
  const int epochs = config.federation.epochs_per_round;
  std::vector<std::string> written;
  auto save = [&](const std::string& name, const nn::ModelWeights& w, double final_loss) {
    const auto path = checkpoint_path(out, name);
    save_weights(path, w);
    written.push_back(path);
    log_line(log, name + ": final_loss=" + fmt(final_loss, "%.6f") + " checkpoint=" + path);
  };

  switch (mode) {
    case TrainMode::kFederated: {
      const auto result = federation::run_federated(config.federation, config.network, shards);
      write_text(history_path(out, mode), federation::history_csv(result.history));
      save("consensus", result.consensus, result.history.back().mean_local_loss);
      break;
    }
    case TrainMode::kCentralized: {
      const auto pooled = dataset::pool_shards(shards).first;
      const auto result = federation::run_centralized(config.federation, config.network, pooled);
      write_text(history_path(out, mode), losses_csv({"loss"}, {&result.epoch_losses}, epochs));
      save("centralized", result.weights, result.epoch_losses.back());
      break;
    }
    case TrainMode::kSiteSpecific: {
      const auto results = federation::run_site_specific(config.federation, config.network, shards);
      std::vector<std::string> columns;
      std::vector<const std::vector<double>*> losses;
      for (const auto& [id, r] : results) {
        columns.push_back("site_" + std::to_string(id));
        losses.push_back(&r.epoch_losses);
      }
      write_text(history_path(out, mode), losses_csv(columns, losses, epochs));
      for (const auto& [id, r] : results) {
        save("site" + std::to_string(id), r.weights, r.epoch_losses.back());
      }
      break;
    }
  }
  return written;
}

evaluation::EvaluationMatrix cmd_evaluate(const ExperimentConfig& config, const Logger& log) {
  config.validate();
  const auto shards = load_shards(config);
  std::vector<std::string> names;
  for (int id : config.sites) names.push_back("site" + std::to_string(id));
  names.push_back("consensus");
  names.push_back("centralized");

  std::vector<evaluation::NamedModel> models;
  for (const auto& name : names) {
    const auto path = checkpoint_path(config.out_dir, name);
    if (!fs::exists(path)) continue;
    models.push_back({model_label(name), load_checked(config, path), name == "centralized"});
  }
  if (models.empty()) {
    throw Error(ErrorCode::kIo, "no checkpoints found in '" +
                                    fs::path(checkpoint_path(config.out_dir, "x")).parent_path().string() +
                                    "' (run train first)");
  }
  const auto matrix = evaluation::build_matrix(config.network, models, shards,
                                                config.parallel_evaluation, config.threshold);
  const auto stem = matrix_stem(config.out_dir);
  write_text(stem + ".csv", matrix.to_csv());
  write_text(stem + ".txt", matrix.to_text());
  log_line(log, matrix.to_text());
  return matrix;
}

HeatmapReport cmd_heatmap(const ExperimentConfig& config, const std::vector<std::string>& models,
                          const std::string& slide, const Logger& log) {
  config.validate();
  const std::string slide_path = slide.empty() ? slide_dir(config.out_dir) : slide;
  const auto synthetic = heatmap::read_slide(slide_path);

  std::vector<std::pair<std::string, std::string>> selected;  // name, path
  if (models.empty()) {
    std::vector<std::string> names{"consensus", "centralized"};
    for (int id : config.sites) names.push_back("site" + std::to_string(id));
    for (const auto& name : names) {
      const auto path = checkpoint_path(config.out_dir, name);
      if (fs::exists(path)) selected.emplace_back(name, path);
    }
    if (selected.empty()) {
      throw Error(ErrorCode::kIo, "no checkpoints found for heatmaps (run train first)");
    }
  } else {
    for (const auto& m : models) {
      const bool is_path = m.find('/') != std::string::npos || fs::path(m).extension() == ".fshd";
      if (is_path) {
        selected.emplace_back(fs::path(m).stem().string(), m);
      } else {
        selected.emplace_back(m, checkpoint_path(config.out_dir, m));
      }
    }
  }

  heatmap::ScoreOptions options;
  options.patch_microns = config.patch_microns;
  HeatmapReport report;
  std::vector<heatmap::ProbabilityMap> maps;
  ensure_dir(fs::path(heatmap_stem(config.out_dir, "x")).parent_path());
  for (const auto& [name, path] : selected) {
    const auto w = load_checked(config, path);
    auto map = heatmap::score_slide(config.network, w, synthetic.slide, options);
    map.slide_ref = slide_path;
    heatmap::render(map, heatmap_stem(config.out_dir, name));
    report.models.push_back(name);
    report.mean_abs_difference.push_back(maps.empty() ? 0.0
                                                      : heatmap::mean_abs_difference(maps.front(), map));
    maps.push_back(std::move(map));
  }

  std::string summary = "model,mean_abs_difference_vs_" + report.models.front() + "\n";
  for (std::size_t i = 0; i < report.models.size(); ++i) {
    summary += report.models[i] + "," + fmt(report.mean_abs_difference[i], "%.6f") + "\n";
    log_line(log, report.models[i] + ": " + std::to_string(maps[i].cols) + "x" +
                      std::to_string(maps[i].rows) + " map, mean |p - p(" + report.models.front() +
                      ")| = " + fmt(report.mean_abs_difference[i], "%.6f") + " -> " +
                      heatmap_stem(config.out_dir, report.models[i]) + ".{csv,ppm}");
  }
  write_text((fs::path(config.out_dir) / "heatmaps" / "summary.csv").string(), summary);
  return report;
}

}  // namespace fedtil::experiment
