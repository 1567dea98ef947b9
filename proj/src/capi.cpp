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

#include "fedtil/fedtil.h"

#include <algorithm>
#include <exception>
#include <new>
#include <string>
#include <vector>

#include "fedtil/dataset.hpp"
#include "fedtil/error.hpp"
#include "fedtil/evaluation.hpp"
#include "fedtil/experiment.hpp"
#include "fedtil/heatmap.hpp"
#include "fedtil/nn.hpp"
#include "fedtil/serialize.hpp"

struct fedtil_config {
  fedtil::experiment::ExperimentConfig value;
};

struct fedtil_weights {
  fedtil::nn::ModelWeights value;
};

struct fedtil_shard {
  fedtil::dataset::SiteShard value;
};

namespace {

thread_local std::string g_last_error;

fedtil_status fail(fedtil_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
fedtil_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return FEDTIL_OK;
  } catch (const fedtil::Error& e) {
    return fail(static_cast<fedtil_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(FEDTIL_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(FEDTIL_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(FEDTIL_ERR_INTERNAL, "unknown exception");
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) {
    throw fedtil::Error(fedtil::ErrorCode::kInvalidArgument, std::string(name) + " is NULL");
  }
}

fedtil::experiment::Logger make_logger(fedtil_log_fn log, void* user) {
  if (log == nullptr) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

}  // namespace

extern "C" {

const char* fedtil_version(void) { return "0.1.0"; }

const char* fedtil_status_name(fedtil_status status) {
  if (status == FEDTIL_OK) return "ok";
  return fedtil::error_code_name(static_cast<fedtil::ErrorCode>(status));
}

const char* fedtil_last_error(void) { return g_last_error.c_str(); }

fedtil_status fedtil_config_default(fedtil_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new fedtil_config{};
  });
}

fedtil_status fedtil_config_load(const char* path, fedtil_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fedtil_config{fedtil::experiment::load_config(path)};
  });
}

fedtil_status fedtil_config_set(fedtil_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    auto copy = config->value;
    fedtil::experiment::apply_override(copy, key, value);
    copy.validate();
    config->value = std::move(copy);
  });
}

fedtil_status fedtil_config_to_ini(const fedtil_config* config, char* buf, size_t capacity,
                                   size_t* needed) {
  return guarded([&] {
    require(config, "config");
    const auto text = fedtil::experiment::config_to_ini(config->value);
    if (needed != nullptr) *needed = text.size() + 1;
    if (buf == nullptr) return;
    if (capacity < text.size() + 1) {
      throw fedtil::Error(fedtil::ErrorCode::kInvalidArgument,
                          "buffer of " + std::to_string(capacity) + " bytes is too small (need " +
                              std::to_string(text.size() + 1) + ")");
    }
    text.copy(buf, text.size());
    buf[text.size()] = '\0';
  });
}

void fedtil_config_free(fedtil_config* config) { delete config; }

fedtil_status fedtil_gen_data(const fedtil_config* config, fedtil_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    fedtil::experiment::cmd_gen_data(config->value, make_logger(log, user));
  });
}

fedtil_status fedtil_train(const fedtil_config* config, const char* mode, fedtil_log_fn log,
                           void* user) {
  return guarded([&] {
    require(config, "config");
    require(mode, "mode");
    fedtil::experiment::cmd_train(config->value, fedtil::experiment::parse_mode(mode),
                                  make_logger(log, user));
  });
}

fedtil_status fedtil_evaluate(const fedtil_config* config, fedtil_log_fn log, void* user) {
  return guarded([&] {
    require(config, "config");
    fedtil::experiment::cmd_evaluate(config->value, make_logger(log, user));
  });
}

fedtil_status fedtil_heatmap(const fedtil_config* config, const char* const* models,
                             size_t n_models, const char* slide_dir, fedtil_log_fn log,
                             void* user) {
  return guarded([&] {
    require(config, "config");
    if (n_models > 0) require(models, "models");
    std::vector<std::string> names;
    for (size_t i = 0; i < n_models; ++i) {
      require(models[i], "models[i]");
      names.emplace_back(models[i]);
    }
    fedtil::experiment::cmd_heatmap(config->value, names, slide_dir ? slide_dir : "",
                                    make_logger(log, user));
  });
}

fedtil_status fedtil_weights_init(const fedtil_config* config, fedtil_weights** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new fedtil_weights{fedtil::nn::init_weights(config->value.network)};
  });
}

fedtil_status fedtil_weights_zeros(const fedtil_config* config, fedtil_weights** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = new fedtil_weights{fedtil::nn::zeros(config->value.network)};
  });
}

fedtil_status fedtil_weights_load(const char* path, fedtil_weights** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fedtil_weights{fedtil::load_weights(path)};
  });
}

fedtil_status fedtil_weights_save(const fedtil_weights* weights, const char* path) {
  return guarded([&] {
    require(weights, "weights");
    require(path, "path");
    fedtil::save_weights(path, weights->value);
  });
}

size_t fedtil_weights_param_count(const fedtil_weights* weights) {
  return weights ? weights->value.total_params() : 0;
}

int fedtil_weights_equal(const fedtil_weights* a, const fedtil_weights* b) {
  if (a == nullptr || b == nullptr) return 0;
  return fedtil::nn::bitwise_equal(a->value, b->value) ? 1 : 0;
}

void fedtil_weights_free(fedtil_weights* weights) { delete weights; }

fedtil_status fedtil_shard_load(const char* dir, fedtil_shard** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new fedtil_shard{fedtil::dataset::read_manifest(dir)};
  });
}

fedtil_status fedtil_shard_info(const fedtil_shard* shard, int* site_id, size_t* n_train,
                                size_t* n_validation) {
  return guarded([&] {
    require(shard, "shard");
    if (site_id) *site_id = shard->value.site_id;
    if (n_train) *n_train = shard->value.train.size();
    if (n_validation) *n_validation = shard->value.validation.size();
  });
}

void fedtil_shard_free(fedtil_shard* shard) { delete shard; }

fedtil_status fedtil_predict(const fedtil_config* config, const fedtil_weights* weights,
                             const float* pixels, size_t count, double* probs_out) {
  return guarded([&] {
    require(config, "config");
    require(weights, "weights");
    require(pixels, "pixels");
    require(probs_out, "probs_out");
    const auto& spec = config->value.network;
    const size_t per = static_cast<size_t>(spec.input_side) * spec.input_side * spec.input_channels;
    const auto probs = fedtil::nn::forward(
        spec, weights->value,
        {std::span<const float>(pixels, per * count), count, spec.input_side, spec.input_channels});
    std::copy(probs.begin(), probs.end(), probs_out);
  });
}

fedtil_status fedtil_evaluate_shard(const fedtil_config* config, const fedtil_weights* weights,
                                    const fedtil_shard* shard, double* balanced_accuracy) {
  return guarded([&] {
    require(config, "config");
    require(weights, "weights");
    require(shard, "shard");
    require(balanced_accuracy, "balanced_accuracy");
    *balanced_accuracy = fedtil::evaluation::evaluate_model(config->value.network, weights->value,
                                                            shard->value.validation,
                                                            config->value.threshold)
                             .balanced_accuracy;
  });
}

fedtil_status fedtil_balanced_accuracy(uint64_t tp, uint64_t fp, uint64_t tn, uint64_t fn,
                                       double* out) {
  return guarded([&] {
    require(out, "out");
    *out = fedtil::evaluation::balanced_accuracy({tp, fp, tn, fn});
  });
}

fedtil_status fedtil_patch_grid(int width_px, int height_px, double microns_per_pixel,
                                double patch_microns, int* patch_px, int* cols, int* rows) {
  return guarded([&] {
    const auto g =
        fedtil::heatmap::patch_grid(width_px, height_px, microns_per_pixel, patch_microns);
    if (patch_px) *patch_px = g.patch_px;
    if (cols) *cols = g.cols;
    if (rows) *rows = g.rows;
  });
}

}  // extern "C"
