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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedtil/nn.hpp"
#include "fedtil/random.hpp"
#include "reference_net.hpp"

namespace fedtil::testing {

// Small network with at most `max_params` parameters whose input survives
// every pooling stage.
inline nn::NetworkSpec random_small_spec(Rng& rng, std::size_t max_params) {
  static const int kSides[] = {4, 6, 8, 12, 16};
  for (;;) {
    nn::NetworkSpec spec;
    spec.input_side = kSides[uniform_index(rng, 5)];
    spec.input_channels = 1 + static_cast<int>(uniform_index(rng, 3));
    spec.blocks.clear();
    const int depth = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int b = 0; b < depth; ++b) {
      spec.blocks.push_back({1 + static_cast<int>(uniform_index(rng, 4)),
                             1 + static_cast<int>(uniform_index(rng, 2))});
    }
    spec.seed = rng();
    int side = spec.input_side;
    bool ok = true;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
      side /= 2;
      if (side < 1) ok = false;
    }
    if (ok && spec.parameter_count() <= max_params) return spec;
  }
}

inline std::vector<float> random_patches(Rng& rng, std::size_t n, const nn::NetworkSpec& spec) {
  std::vector<float> px(n * spec.input_side * spec.input_side * spec.input_channels);
  for (auto& v : px) v = static_cast<float>(uniform01(rng));
  return px;
}

// Non-zero biases keep pre-activations away from exact zeros.
inline void randomize_biases(Rng& rng, nn::ModelWeights& w) {
  for (auto& t : w.layers) {
    if (t.shape.size() != 1) continue;
    for (auto& v : t.values) v = static_cast<float>(uniform(rng, -0.1, 0.1));
  }
}

struct GradientCheck {
  std::size_t checked = 0;
  std::size_t skipped = 0;   // perturbation crossed a ReLU or pooling kink
  std::size_t failures = 0;
  double worst_relative = 0.0;
};

inline constexpr double kGradRelTol = 1e-3;
inline constexpr double kGradAbsFloor = 1e-5;

inline GradientCheck check_gradient(const nn::NetworkSpec& spec, const nn::ModelWeights& w,
                                    const std::vector<float>& pixels,
                                    const std::vector<std::uint8_t>& labels,
                                    const nn::ModelWeights& analytic, double h) {
  GradientCheck r;
  ReferenceParams params(w);
  std::vector<std::int32_t> base, plus, minus;
  reference_loss(spec, params, pixels, labels, &base);
  for (std::size_t l = 0; l < params.values.size(); ++l) {
    for (std::size_t j = 0; j < params.values[l].size(); ++j) {
      const double orig = params.values[l][j];
      params.values[l][j] = orig + h;
      const double lp = reference_loss(spec, params, pixels, labels, &plus);
      params.values[l][j] = orig - h;
      const double lm = reference_loss(spec, params, pixels, labels, &minus);
      params.values[l][j] = orig;
      if (plus != base || minus != base) {
        ++r.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double a = analytic.layers[l].values[j];
      const double diff = std::abs(a - numeric);
      const double rel = diff / std::max({std::abs(a), std::abs(numeric), 1e-300});
      ++r.checked;
      if (diff > kGradAbsFloor) {
        r.worst_relative = std::max(r.worst_relative, rel);
        if (rel > kGradRelTol) ++r.failures;
      }
    }
  }
  return r;
}

// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fedtil_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace fedtil::testing
