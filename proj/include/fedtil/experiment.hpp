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
#include <functional>
#include <string>
#include <vector>

#include "fedtil/evaluation.hpp"
#include "fedtil/federation.hpp"
#include "fedtil/nn.hpp"

namespace fedtil::experiment {

// Every field has a default; the defaults are the desk-scale experiment.
struct ExperimentConfig {
  // [network]
  nn::NetworkSpec network{32, 3, {{8, 1}, {16, 1}, {32, 1}}, 2021};
  // [federation]
  federation::FederationConfig federation;
  // [dataset]
  double scale = 0.02;
  std::uint64_t data_seed = 2021;
  std::vector<int> sites{1, 2, 3, 4, 5, 6, 7, 8};
  int slide_cols = 24;
  int slide_rows = 16;
  int slide_tile_px = 64;
  int slide_style_site = 1;
  // [evaluation]
  double threshold = evaluation::kDefaultThreshold;
  bool parallel_evaluation = false;
  // [heatmap]
  double patch_microns = 50.0;
  // [output]
  std::string out_dir = "out";

  ExperimentConfig();
  void validate() const;
};

// INI text with sections [network], [federation], [dataset], [evaluation],
// [heatmap] and [output]. Missing keys keep their defaults; unknown keys are
// rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_ini(const ExperimentConfig& config);

// `key` is "section.name", e.g. "federation.rounds".
void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value);

enum class TrainMode { kCentralized, kFederated, kSiteSpecific };
TrainMode parse_mode(const std::string& name);
const char* mode_name(TrainMode mode);

// Output layout below the output directory.
std::string site_dir(const std::string& out, int site_id);
std::string slide_dir(const std::string& out);
std::string checkpoint_path(const std::string& out, const std::string& model);
std::string history_path(const std::string& out, TrainMode mode);
std::string matrix_stem(const std::string& out);
std::string heatmap_stem(const std::string& out, const std::string& model);

using Logger = std::function<void(const std::string&)>;

void cmd_gen_data(const ExperimentConfig& config, const Logger& log = {});

// Returns the checkpoint paths written.
std::vector<std::string> cmd_train(const ExperimentConfig& config, TrainMode mode,
                                   const Logger& log = {});

// Evaluates every checkpoint present: site models, consensus, then centralized.
evaluation::EvaluationMatrix cmd_evaluate(const ExperimentConfig& config, const Logger& log = {});

struct HeatmapReport {
  std::vector<std::string> models;
  std::vector<double> mean_abs_difference;  // against models[0]
};

// `models` are checkpoint names ("consensus", "site3", ...) or .fshd paths;
// empty selects every checkpoint present. `slide` defaults to the generated
// demo slide.
HeatmapReport cmd_heatmap(const ExperimentConfig& config, const std::vector<std::string>& models,
                          const std::string& slide = {}, const Logger& log = {});

}  // namespace fedtil::experiment
