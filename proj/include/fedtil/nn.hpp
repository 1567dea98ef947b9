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

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedtil::nn {

struct ConvBlock {
  int out_channels = 0;
  int convs = 1;

  bool operator==(const ConvBlock&) const = default;
};

// VGG-style classifier: blocks of 3x3/stride-1/pad-1 convolutions with ReLU,
// each block closed by a 2x2/stride-2 max-pool, then global average pooling
// and a single dense unit with sigmoid output.
struct NetworkSpec {
  int input_side = 32;
  int input_channels = 3;
  std::vector<ConvBlock> blocks{{8, 1}, {16, 1}, {32, 1}};
  std::uint64_t seed = 42;

  // Throws Error(kInvalidArgument) when the spec cannot be built.
  void validate() const;

  int output_side() const;
  int feature_channels() const;
  int conv_layers() const;
  std::size_t parameter_count() const;

  // The 300x300 / 16-conv configuration (VGG19 convolutional trunk).
  static NetworkSpec full_scale(std::uint64_t seed = 42);

  bool operator==(const NetworkSpec&) const = default;
};

std::string describe(const NetworkSpec& spec);

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
};

// Flat, ordered parameter store. Layout (names, order, shapes) is a pure
// function of the NetworkSpec: for every conv "block{b}.conv{c}.weight"
// [out, in, 3, 3] then ".bias" [out]; finally "dense.weight" [1, C] and
// "dense.bias" [1].
struct ModelWeights {
  std::vector<Tensor> layers;

  std::size_t total_params() const;
  bool same_layout(const ModelWeights& other) const;
  bool all_finite() const;
};

// Bitwise equality of every value (distinguishes -0.0 from 0.0).
bool bitwise_equal(const ModelWeights& a, const ModelWeights& b);

struct LayerShape {
  std::string name;
  std::vector<std::uint32_t> shape;
};

std::vector<LayerShape> layout(const NetworkSpec& spec);

ModelWeights zeros(const NetworkSpec& spec);

// Conv and dense weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases zero.
ModelWeights init_weights(const NetworkSpec& spec);

// Throws Error(kShapeMismatch) naming the first offending layer.
void check_layout(const NetworkSpec& spec, const ModelWeights& weights);

// Non-owning view of patches stored HWC, one after another, values in [0,1].
struct PatchBatch {
  std::span<const float> pixels;
  std::size_t count = 0;
  int side = 0;
  int channels = 0;
};

struct LabeledPatches {
  std::span<const float> pixels;
  std::span<const std::uint8_t> labels;
  int side = 0;
  int channels = 0;

  std::size_t size() const { return labels.size(); }
  PatchBatch batch() const { return {pixels, labels.size(), side, channels}; }
};

// One probability per patch, strictly inside (0, 1).
std::vector<double> forward(const NetworkSpec& spec, const ModelWeights& weights,
                            const PatchBatch& batch);

struct LossAndGradient {
  double loss = 0.0;
  ModelWeights gradient;
};

// Mean binary cross-entropy over the batch and its exact gradient.
LossAndGradient backward(const NetworkSpec& spec, const ModelWeights& weights,
                         const PatchBatch& batch,
                         std::span<const std::uint8_t> labels);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  ModelWeights first_moment;
  ModelWeights second_moment;
  std::uint64_t step_count = 0;
  AdamConfig config;

  static OptimizerState fresh(const ModelWeights& like, AdamConfig config = {});
};

struct AdamResult {
  ModelWeights weights;
  OptimizerState state;
};

AdamResult adam_step(const ModelWeights& weights, const ModelWeights& gradient,
                     const OptimizerState& state);

// In-place form of adam_step used by the training loop.
void adam_update(ModelWeights& weights, const ModelWeights& gradient,
                 OptimizerState& state);

struct TrainOptions {
  int batch_size = 32;
  AdamConfig adam;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<double> epoch_losses;  // sample-weighted mean loss per epoch
};

// Mini-batch Adam over `epochs` shuffled passes. Optimizer state starts fresh
// on every call; the shuffle of epoch e is seeded by mix_seed(seed, e).
TrainResult train_epochs(const NetworkSpec& spec, const ModelWeights& weights,
                         const LabeledPatches& data, int epochs,
                         std::uint64_t seed, const TrainOptions& options = {});

}  // namespace fedtil::nn
