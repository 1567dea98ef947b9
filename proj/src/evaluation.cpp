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

#include "fedtil/evaluation.hpp"

#include <cstdio>
#include <exception>
#include <thread>

#include "fedtil/error.hpp"

namespace fedtil::evaluation {
namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left_align) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return left_align ? s + fill : fill + s;
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

int classify(double prob, double threshold) { return prob >= threshold ? 1 : 0; }

double balanced_accuracy(const ConfusionCounts& c) {
  const std::uint64_t pos = c.tp + c.fn;
  const std::uint64_t neg = c.tn + c.fp;
  if (pos == 0 && neg == 0) {
    throw Error(ErrorCode::kInvalidArgument, "balanced accuracy of zero samples");
  }
  if (pos == 0) return static_cast<double>(c.tn) / static_cast<double>(neg);
  if (neg == 0) return static_cast<double>(c.tp) / static_cast<double>(pos);
  const double sensitivity = static_cast<double>(c.tp) / static_cast<double>(pos);
  const double specificity = static_cast<double>(c.tn) / static_cast<double>(neg);
  return 0.5 * (sensitivity + specificity);
}

ConfusionCounts count(std::span<const double> probs, std::span<const std::uint8_t> labels,
                      double threshold) {
  if (probs.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, std::to_string(probs.size()) +
                                               " predictions for " +
                                               std::to_string(labels.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] > 1) {
      throw Error(ErrorCode::kInvalidArgument, "label " + std::to_string(labels[i]) +
                                                   " at index " + std::to_string(i) +
                                                   " is not 0 or 1");
    }
    const bool predicted = classify(probs[i], threshold) == 1;
    if (labels[i] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

ModelEvaluation evaluate_model(const nn::NetworkSpec& spec, const nn::ModelWeights& weights,
                               const dataset::PatchSet& validation, double threshold) {
  if (validation.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "evaluation on an empty validation set");
  }
  const auto probs = nn::forward(spec, weights, validation.view().batch());
  ModelEvaluation e;
  e.counts = count(probs, validation.labels, threshold);
  e.balanced_accuracy = balanced_accuracy(e.counts);
  return e;
}

EvaluationMatrix build_matrix(const nn::NetworkSpec& spec, const std::vector<NamedModel>& models,
                              const std::vector<dataset::SiteShard>& shards, bool parallel,
                              double threshold) {
  if (models.empty()) throw Error(ErrorCode::kInvalidArgument, "no models to evaluate");
  std::vector<const dataset::SiteShard*> columns;
  for (const auto& s : shards) {
    if (!s.validation.empty()) columns.push_back(&s);
  }
  if (columns.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "no site has a non-empty validation set");
  }

  EvaluationMatrix m;
  for (const auto& s : columns) m.sites.push_back(s->site_id);
  m.cells.assign(models.size(), std::vector<double>(columns.size(), 0.0));
  m.averages.assign(models.size(), 0.0);
  std::vector<std::exception_ptr> errors(models.size());

  auto evaluate_row = [&](std::size_t r) {
    std::size_t c = 0;
    try {
      for (; c < columns.size(); ++c) {
        m.cells[r][c] = evaluate_model(spec, models[r].weights, columns[c]->validation, threshold)
                             .balanced_accuracy;
      }
    } catch (const Error& e) {
      errors[r] = std::make_exception_ptr(
          Error(e.code(), "model '" + models[r].name + "' on site " +
                              std::to_string(columns[c]->site_id) + ": " + e.what()));
    }
  };
  if (parallel) {
    std::vector<std::thread> workers;
    for (std::size_t r = 0; r < models.size(); ++r) workers.emplace_back(evaluate_row, r);
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t r = 0; r < models.size(); ++r) evaluate_row(r);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  for (std::size_t r = 0; r < models.size(); ++r) {
    m.models.push_back(models[r].name);
    m.extension_rows.push_back(models[r].extension);
    double sum = 0.0;
    for (double v : m.cells[r]) sum += v;
    m.averages[r] = sum / static_cast<double>(columns.size());
  }
  return m;
}

std::string EvaluationMatrix::to_csv() const {
  std::string out = "model";
  for (int s : sites) out += ",Site" + std::to_string(s);
  out += ",Average\n";
  for (std::size_t r = 0; r < models.size(); ++r) {
    out += models[r];
    for (double v : cells[r]) out += "," + fixed(v, 6);
    out += "," + fixed(averages[r], 6) + "\n";
  }
  return out;
}

std::string EvaluationMatrix::to_text() const {
  const std::string corner = "Model(row)\\Data(col)";
  std::size_t first = corner.size();
  for (const auto& name : models) first = std::max(first, name.size() + 1);
  constexpr std::size_t kCol = 8;

  std::string out;
  bool any_extension = false;
  for (bool e : extension_rows) any_extension = any_extension || e;
  out += "Balanced classification accuracy on each site's validation set\n";
  if (any_extension) out += "(* rows are an extension beyond the per-site models and consensus)\n";
  std::string header = pad(corner, first, true);
  for (int s : sites) header += " " + pad("Site" + std::to_string(s), kCol, false);
  header += " |" + pad("Average", kCol, false);
  const std::string rule(header.size(), '=');
  out += rule + "\n" + header + "\n" + rule + "\n";
  for (std::size_t r = 0; r < models.size(); ++r) {
    std::string line = pad(models[r] + (extension_rows[r] ? "*" : ""), first, true);
    for (double v : cells[r]) line += " " + pad(fixed(v, 2), kCol, false);
    line += " |" + pad(fixed(averages[r], 2), kCol, false);
    out += line + "\n";
  }
  out += rule + "\n";
  return out;
}

}  // namespace fedtil::evaluation
