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

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

#include "fedtil/fedtil.h"

namespace {

void print_line(const char* line, void*) { std::printf("%s\n", line); std::fflush(stdout); }

// One line, key=value pairs, message last.
int report(fedtil_status status) {
  std::string message = fedtil_last_error();
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::fprintf(stderr, "error code=%s status=%d message=%s\n", fedtil_status_name(status),
               static_cast<int>(status), message.c_str());
  return 1;
}

struct Common {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config,-c", common.config_path, "INI configuration file");
  cmd->add_option("--out,-o", common.out_dir, "Output directory (overrides output.dir)");
  cmd->add_option("--set", common.overrides, "Override one config key: section.key=value");
}

fedtil_status load(const Common& common, fedtil_config** config) {
  fedtil_status s = common.config_path.empty() ? fedtil_config_default(config)
                                               : fedtil_config_load(common.config_path.c_str(), config);
  if (s != FEDTIL_OK) return s;
  for (const auto& kv : common.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      s = fedtil_config_set(*config, kv.c_str(), "");
    } else {
      s = fedtil_config_set(*config, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    }
    if (s != FEDTIL_OK) return s;
  }
  if (!common.out_dir.empty()) return fedtil_config_set(*config, "output.dir", common.out_dir.c_str());
  return FEDTIL_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedtil: federated TIL patch classification simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fedtil_version());

  Common common;
  std::string mode;
  std::vector<std::string> models;
  std::string slide;

  auto* gen = app.add_subcommand("gen-data", "Generate the eight site manifests and a demo slide");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "Train models and write checkpoints");
  add_common(train, common);
  train->add_option("--mode,-m", mode, "Training scenario")
      ->required()
      ->check(CLI::IsMember({"centralized", "federated", "site-specific"}));

  auto* eval = app.add_subcommand("evaluate", "Write the models x sites balanced-accuracy matrix");
  add_common(eval, common);

  auto* heat = app.add_subcommand("heatmap", "Score a slide and write probability maps");
  add_common(heat, common);
  heat->add_option("--checkpoint", models, "Checkpoint name or .fshd path (repeatable)");
  heat->add_option("--slide", slide, "Slide directory (default: the generated demo slide)");

  auto* show = app.add_subcommand("show-config", "Print the effective configuration");
  add_common(show, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    for (char& c : message) {
      if (c == '\n') c = ' ';
    }
    std::fprintf(stderr, "error code=usage status=%d message=%s\n", e.get_exit_code(),
                 message.c_str());
    return 2;
  }

  fedtil_config* config = nullptr;
  fedtil_status s = load(common, &config);
  if (s == FEDTIL_OK) {
    if (*gen) {
      s = fedtil_gen_data(config, print_line, nullptr);
    } else if (*train) {
      s = fedtil_train(config, mode.c_str(), print_line, nullptr);
    } else if (*eval) {
      s = fedtil_evaluate(config, print_line, nullptr);
    } else if (*heat) {
      std::vector<const char*> names;
      for (const auto& m : models) names.push_back(m.c_str());
      s = fedtil_heatmap(config, names.data(), names.size(), slide.empty() ? nullptr : slide.c_str(),
                         print_line, nullptr);
    } else if (*show) {
      size_t needed = 0;
      s = fedtil_config_to_ini(config, nullptr, 0, &needed);
      if (s == FEDTIL_OK) {
        std::string text(needed, '\0');
        s = fedtil_config_to_ini(config, text.data(), text.size(), &needed);
        if (s == FEDTIL_OK) std::fputs(text.c_str(), stdout);
      }
    }
  }
  fedtil_config_free(config);
  return s == FEDTIL_OK ? 0 : report(s);
}
