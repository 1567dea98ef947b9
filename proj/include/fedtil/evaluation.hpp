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
#include <vector>

#include "fedtil/dataset.hpp"
#include "fedtil/nn.hpp"

namespace fedtil::evaluation {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

inline constexpr double kDefaultThreshold = 0.5;

// 1 iff prob >= threshold.
int classify(double prob, double threshold = kDefaultThreshold);

// Mean of sensitivity and specificity. If one class has no samples, the
// recall of the other class alone. Throws on zero samples.
double balanced_accuracy(const ConfusionCounts& c);

ConfusionCounts count(std::span<const double> probs, std::span<const std::uint8_t> labels,
                      double threshold = kDefaultThreshold);

struct ModelEvaluation {
  ConfusionCounts counts;
  double balanced_accuracy = 0.0;
};

ModelEvaluation evaluate_model(const nn::NetworkSpec& spec, const nn::ModelWeights& weights,
                               const dataset::PatchSet& validation,
                               double threshold = kDefaultThreshold);

struct NamedModel {
  std::string name;
  nn::ModelWeights weights;
  bool extension = false;  // row not present in the per-site table (centralized)
};

// Rows are models, columns are site validation sets plus a trailing average.
struct EvaluationMatrix {
  std::vector<std::string> models;
  std::vector<bool> extension_rows;
  std::vector<int> sites;
  std::vector<std::vector<double>> cells;  // [model][site]
  std::vector<double> averages;            // per model

  std::string to_csv() const;
  std::string to_text() const;
};

// Sites with an empty validation split get no column. With `parallel`, one
// worker thread per model; results do not depend on it.
EvaluationMatrix build_matrix(const nn::NetworkSpec& spec, const std::vector<NamedModel>& models,
                              const std::vector<dataset::SiteShard>& shards,
                              bool parallel = false,
                              double threshold = kDefaultThreshold);

}  // namespace fedtil::evaluation
