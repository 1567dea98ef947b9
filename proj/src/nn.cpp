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

#include "fedtil/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedtil/error.hpp"
#include "fedtil/random.hpp"

namespace fedtil::nn {
namespace {

std::string dims_string(const std::vector<std::uint32_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// One step of the feature extractor.
struct Stage {
  enum Kind { kConv, kPool } kind;
  int in_channels;
  int out_channels;
  int side_in;
  int side_out;
  std::size_t weight_layer = 0;  // index into ModelWeights::layers (conv only)
};

std::vector<Stage> plan(const NetworkSpec& spec) {
  std::vector<Stage> stages;
  int channels = spec.input_channels;
  int side = spec.input_side;
  std::size_t layer = 0;
  for (const auto& block : spec.blocks) {
    for (int c = 0; c < block.convs; ++c) {
      stages.push_back({Stage::kConv, channels, block.out_channels, side, side, layer});
      layer += 2;
      channels = block.out_channels;
    }
    stages.push_back({Stage::kPool, channels, channels, side, side / 2});
    side /= 2;
  }
  return stages;
}

float dot(const float* a, const float* b, std::size_t n) {
  // Fixed 8-lane partial sums: vectorizable and order-deterministic.
  float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) lanes[i % 8] += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
         ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
}

void im2col(const float* in, int channels, int side, float* col) {
  const int hw = side * side;
  for (int c = 0; c < channels; ++c) {
    const float* plane = in + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* row = col + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < side; ++y) {
          const int sy = y + ky - 1;
          float* dst = row + y * side;
          if (sy < 0 || sy >= side) {
            std::fill(dst, dst + side, 0.0f);
            continue;
          }
          const float* src = plane + sy * side;
          for (int x = 0; x < side; ++x) {
            const int sx = x + kx - 1;
            dst[x] = (sx < 0 || sx >= side) ? 0.0f : src[sx];
          }
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int side, float* out) {
  const int hw = side * side;
  std::fill(out, out + static_cast<std::size_t>(channels) * hw, 0.0f);
  for (int c = 0; c < channels; ++c) {
    float* plane = out + static_cast<std::size_t>(c) * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* row = col + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * hw;
        for (int y = 0; y < side; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= side) continue;
          const float* src = row + y * side;
          float* dst = plane + sy * side;
          for (int x = 0; x < side; ++x) {
            const int sx = x + kx - 1;
            if (sx >= 0 && sx < side) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double open_unit(double p) {
  return std::clamp(p, std::numeric_limits<double>::min(),
                    std::nextafter(1.0, 0.0));
}

// Per-sample forward/backward engine. Buffers are reused across samples.
class Engine {
 public:
  Engine(const NetworkSpec& spec, const ModelWeights& weights)
      : spec_(spec), weights_(weights), stages_(plan(spec)) {
    acts_.resize(stages_.size() + 1);
    cols_.resize(stages_.size());
    argmax_.resize(stages_.size());
    acts_[0].resize(static_cast<std::size_t>(spec.input_channels) * spec.input_side *
                    spec.input_side);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const auto& s = stages_[i];
      acts_[i + 1].resize(static_cast<std::size_t>(s.out_channels) * s.side_out * s.side_out);
      if (s.kind == Stage::kConv) {
        cols_[i].resize(static_cast<std::size_t>(s.in_channels) * 9 * s.side_in * s.side_in);
      } else {
        argmax_[i].resize(acts_[i + 1].size());
      }
    }
    features_.resize(spec.feature_channels());
  }

  // Returns the logit for one HWC patch.
  double forward(const float* hwc) {
    load_input(hwc);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      const auto& s = stages_[i];
      if (s.kind == Stage::kConv) {
        conv_forward(i, s);
      } else {
        pool_forward(i, s);
      }
    }
    const auto& last = acts_.back();
    const int channels = spec_.feature_channels();
    const std::size_t hw = last.size() / channels;
    const auto& dense_w = weights_.layers[weights_.layers.size() - 2].values;
    double z = weights_.layers.back().values[0];
    for (int c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (std::size_t p = 0; p < hw; ++p) sum += last[c * hw + p];
      features_[c] = sum / static_cast<double>(hw);
      z += static_cast<double>(dense_w[c]) * features_[c];
    }
    return z;
  }

  // Accumulates d(loss)/d(params) for the sample last passed to forward(),
  // given d(loss)/d(logit).
  void backward(double dlogit, std::vector<std::vector<double>>& grad) {
    const int channels = spec_.feature_channels();
    const std::size_t n_layers = weights_.layers.size();
    const auto& dense_w = weights_.layers[n_layers - 2].values;
    auto& g_dense_w = grad[n_layers - 2];
    for (int c = 0; c < channels; ++c) g_dense_w[c] += dlogit * features_[c];
    grad[n_layers - 1][0] += dlogit;

    auto& d_last = grads_buffer(stages_.size());
    const std::size_t hw = d_last.size() / channels;
    for (int c = 0; c < channels; ++c) {
      const float v = static_cast<float>(dlogit * dense_w[c] / static_cast<double>(hw));
      std::fill(d_last.begin() + c * hw, d_last.begin() + (c + 1) * hw, v);
    }

    for (std::size_t i = stages_.size(); i-- > 0;) {
      const auto& s = stages_[i];
      if (s.kind == Stage::kConv) {
        conv_backward(i, s, grad, /*need_input_grad=*/i > 0);
      } else {
        pool_backward(i, s);
      }
    }
  }

 private:
  std::vector<float>& grads_buffer(std::size_t i) {
    if (dacts_.size() != acts_.size()) {
      dacts_.resize(acts_.size());
      for (std::size_t k = 0; k < acts_.size(); ++k) dacts_[k].resize(acts_[k].size());
    }
    return dacts_[i];
  }

  void load_input(const float* hwc) {
    const int side = spec_.input_side;
    const int ch = spec_.input_channels;
    const std::size_t hw = static_cast<std::size_t>(side) * side;
    auto& in = acts_[0];
    for (std::size_t p = 0; p < hw; ++p) {
      for (int c = 0; c < ch; ++c) in[c * hw + p] = hwc[p * ch + c];
    }
  }

  void conv_forward(std::size_t i, const Stage& s) {
    const std::size_t hw = static_cast<std::size_t>(s.side_in) * s.side_in;
    const std::size_t k_count = static_cast<std::size_t>(s.in_channels) * 9;
    float* col = cols_[i].data();
    im2col(acts_[i].data(), s.in_channels, s.side_in, col);
    const auto& w = weights_.layers[s.weight_layer].values;
    const auto& b = weights_.layers[s.weight_layer + 1].values;
    auto& out = acts_[i + 1];
    for (int co = 0; co < s.out_channels; ++co) {
      float* row = out.data() + co * hw;
      std::fill(row, row + hw, b[co]);
      const float* wrow = w.data() + co * k_count;
      for (std::size_t k = 0; k < k_count; ++k) {
        const float wk = wrow[k];
        const float* src = col + k * hw;
        for (std::size_t p = 0; p < hw; ++p) row[p] += wk * src[p];
      }
      for (std::size_t p = 0; p < hw; ++p) row[p] = row[p] > 0.0f ? row[p] : 0.0f;
    }
  }

  void conv_backward(std::size_t i, const Stage& s,
                     std::vector<std::vector<double>>& grad, bool need_input_grad) {
    const std::size_t hw = static_cast<std::size_t>(s.side_in) * s.side_in;
    const std::size_t k_count = static_cast<std::size_t>(s.in_channels) * 9;
    auto& dout = grads_buffer(i + 1);
    const auto& out = acts_[i + 1];
    for (std::size_t p = 0; p < dout.size(); ++p) {
      if (!(out[p] > 0.0f)) dout[p] = 0.0f;
    }
    const float* col = cols_[i].data();
    auto& gw = grad[s.weight_layer];
    auto& gb = grad[s.weight_layer + 1];
    for (int co = 0; co < s.out_channels; ++co) {
      const float* drow = dout.data() + co * hw;
      double bsum = 0.0;
      for (std::size_t p = 0; p < hw; ++p) bsum += drow[p];
      gb[co] += bsum;
      double* gwrow = gw.data() + co * k_count;
      for (std::size_t k = 0; k < k_count; ++k) gwrow[k] += dot(drow, col + k * hw, hw);
    }
    if (!need_input_grad) return;

    dcol_.resize(cols_[i].size());
    const auto& w = weights_.layers[s.weight_layer].values;
    for (std::size_t k = 0; k < k_count; ++k) {
      float* dst = dcol_.data() + k * hw;
      std::fill(dst, dst + hw, 0.0f);
      for (int co = 0; co < s.out_channels; ++co) {
        const float wk = w[co * k_count + k];
        const float* drow = dout.data() + co * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] += wk * drow[p];
      }
    }
    col2im(dcol_.data(), s.in_channels, s.side_in, grads_buffer(i).data());
  }

  void pool_forward(std::size_t i, const Stage& s) {
    const auto& in = acts_[i];
    auto& out = acts_[i + 1];
    auto& arg = argmax_[i];
    const int si = s.side_in, so = s.side_out;
    for (int c = 0; c < s.in_channels; ++c) {
      const std::size_t in_base = static_cast<std::size_t>(c) * si * si;
      const std::size_t out_base = static_cast<std::size_t>(c) * so * so;
      for (int y = 0; y < so; ++y) {
        for (int x = 0; x < so; ++x) {
          std::size_t best = in_base + (2 * y) * si + 2 * x;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = in_base + (2 * y + dy) * si + (2 * x + dx);
              if (in[idx] > in[best]) best = idx;
            }
          }
          out[out_base + y * so + x] = in[best];
          arg[out_base + y * so + x] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }

  void pool_backward(std::size_t i, const Stage&) {
    const auto& dout = grads_buffer(i + 1);
    auto& din = grads_buffer(i);
    std::fill(din.begin(), din.end(), 0.0f);
    const auto& arg = argmax_[i];
    for (std::size_t p = 0; p < dout.size(); ++p) din[arg[p]] += dout[p];
  }

  const NetworkSpec& spec_;
  const ModelWeights& weights_;
  std::vector<Stage> stages_;
  std::vector<std::vector<float>> acts_;
  std::vector<std::vector<float>> dacts_;
  std::vector<std::vector<float>> cols_;
  std::vector<std::vector<std::uint32_t>> argmax_;
  std::vector<float> dcol_;
  std::vector<double> features_;
};

void check_batch(const NetworkSpec& spec, const PatchBatch& batch) {
  const std::size_t per = static_cast<std::size_t>(spec.input_side) * spec.input_side *
                          spec.input_channels;
  if (batch.side != spec.input_side || batch.channels != spec.input_channels) {
    throw Error(ErrorCode::kShapeMismatch,
                "batch patch shape " + std::to_string(batch.side) + "x" +
                    std::to_string(batch.side) + "x" + std::to_string(batch.channels) +
                    " does not match network input " + std::to_string(spec.input_side) +
                    "x" + std::to_string(spec.input_side) + "x" +
                    std::to_string(spec.input_channels));
  }
  if (batch.pixels.size() != per * batch.count) {
    throw Error(ErrorCode::kShapeMismatch,
                "batch holds " + std::to_string(batch.pixels.size()) +
                    " values, expected " + std::to_string(per * batch.count));
  }
}

ModelWeights from_accumulators(const ModelWeights& like,
                               const std::vector<std::vector<double>>& acc,
                               double scale) {
  ModelWeights out = like;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    auto& v = out.layers[l].values;
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<float>(acc[l][j] * scale);
  }
  return out;
}

void require_same_layout(const ModelWeights& a, const ModelWeights& b, const char* what) {
  if (!a.same_layout(b)) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": tensor layouts differ");
  }
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_side < 1 || input_channels < 1) {
    throw Error(ErrorCode::kInvalidArgument, "input side and channels must be >= 1");
  }
  if (blocks.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "network needs at least one conv block");
  }
  for (const auto& b : blocks) {
    if (b.out_channels < 1 || b.convs < 1) {
      throw Error(ErrorCode::kInvalidArgument,
                  "conv block needs >= 1 output channel and >= 1 conv");
    }
  }
  if (output_side() < 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "input side " + std::to_string(input_side) + " collapses below 1x1 after " +
                    std::to_string(blocks.size()) + " pooling stages");
  }
}

int NetworkSpec::output_side() const {
  int side = input_side;
  for (std::size_t i = 0; i < blocks.size(); ++i) side /= 2;
  return side;
}

int NetworkSpec::feature_channels() const {
  return blocks.empty() ? input_channels : blocks.back().out_channels;
}

int NetworkSpec::conv_layers() const {
  int n = 0;
  for (const auto& b : blocks) n += b.convs;
  return n;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t n = 0;
  int in = input_channels;
  for (const auto& b : blocks) {
    for (int c = 0; c < b.convs; ++c) {
      n += static_cast<std::size_t>(b.out_channels) * in * 9 + b.out_channels;
      in = b.out_channels;
    }
  }
  return n + static_cast<std::size_t>(in) + 1;
}

NetworkSpec NetworkSpec::full_scale(std::uint64_t seed) {
  NetworkSpec spec;
  spec.input_side = 300;
  spec.input_channels = 3;
  spec.blocks = {{64, 2}, {128, 2}, {256, 4}, {512, 4}, {512, 4}};
  spec.seed = seed;
  return spec;
}

std::string describe(const NetworkSpec& spec) {
  std::ostringstream os;
  os << spec.input_side << "x" << spec.input_side << "x" << spec.input_channels << " blocks=";
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    if (i) os << ",";
    os << spec.blocks[i].out_channels << "x" << spec.blocks[i].convs;
  }
  os << " params=" << spec.parameter_count();
  return os.str();
}

std::size_t ModelWeights::total_params() const {
  std::size_t n = 0;
  for (const auto& t : layers) n += t.size();
  return n;
}

bool ModelWeights::same_layout(const ModelWeights& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name != other.layers[i].name || layers[i].shape != other.layers[i].shape ||
        layers[i].values.size() != other.layers[i].values.size()) {
      return false;
    }
  }
  return true;
}

bool ModelWeights::all_finite() const {
  for (const auto& t : layers) {
    for (float v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool bitwise_equal(const ModelWeights& a, const ModelWeights& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i].values;
    const auto& y = b.layers[i].values;
    if (!std::equal(x.begin(), x.end(), y.begin(), [](float p, float q) {
          return std::bit_cast<std::uint32_t>(p) == std::bit_cast<std::uint32_t>(q);
        })) {
      return false;
    }
  }
  return true;
}

std::vector<LayerShape> layout(const NetworkSpec& spec) {
  spec.validate();
  std::vector<LayerShape> out;
  std::uint32_t in = static_cast<std::uint32_t>(spec.input_channels);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    const auto oc = static_cast<std::uint32_t>(spec.blocks[b].out_channels);
    for (int c = 0; c < spec.blocks[b].convs; ++c) {
      const std::string prefix = "block" + std::to_string(b) + ".conv" + std::to_string(c);
      out.push_back({prefix + ".weight", {oc, in, 3, 3}});
      out.push_back({prefix + ".bias", {oc}});
      in = oc;
    }
  }
  out.push_back({"dense.weight", {1, in}});
  out.push_back({"dense.bias", {1}});
  return out;
}

ModelWeights zeros(const NetworkSpec& spec) {
  ModelWeights w;
  for (auto& l : layout(spec)) {
    std::size_t n = 1;
    for (auto d : l.shape) n *= d;
    w.layers.push_back({std::move(l.name), std::move(l.shape), std::vector<float>(n, 0.0f)});
  }
  return w;
}

ModelWeights init_weights(const NetworkSpec& spec) {
  ModelWeights w = zeros(spec);
  Rng rng(spec.seed);
  for (auto& t : w.layers) {
    if (t.shape.size() == 1) continue;  // biases stay zero
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) fan_in *= t.shape[d];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : t.values) v = static_cast<float>(uniform(rng, -bound, bound));
  }
  return w;
}

void check_layout(const NetworkSpec& spec, const ModelWeights& weights) {
  const auto expected = layout(spec);
  if (expected.size() != weights.layers.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "weights have " + std::to_string(weights.layers.size()) +
                    " tensors, network expects " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& t = weights.layers[i];
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    if (t.name != expected[i].name || t.shape != expected[i].shape || n != t.values.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "tensor " + std::to_string(i) + " is '" + t.name + "' " +
                      dims_string(t.shape) + ", expected '" + expected[i].name + "' " +
                      dims_string(expected[i].shape));
    }
  }
}

std::vector<double> forward(const NetworkSpec& spec, const ModelWeights& weights,
                            const PatchBatch& batch) {
  check_layout(spec, weights);
  check_batch(spec, batch);
  const std::size_t per = static_cast<std::size_t>(spec.input_side) * spec.input_side *
                          spec.input_channels;
  Engine engine(spec, weights);
  std::vector<double> probs(batch.count);
  for (std::size_t i = 0; i < batch.count; ++i) {
    probs[i] = open_unit(sigmoid(engine.forward(batch.pixels.data() + i * per)));
  }
  return probs;
}

LossAndGradient backward(const NetworkSpec& spec, const ModelWeights& weights,
                         const PatchBatch& batch, std::span<const std::uint8_t> labels) {
  check_layout(spec, weights);
  check_batch(spec, batch);
  if (batch.count == 0) {
    throw Error(ErrorCode::kInvalidArgument, "backward on an empty batch");
  }
  if (labels.size() != batch.count) {
    throw Error(ErrorCode::kShapeMismatch,
                std::to_string(labels.size()) + " labels for " +
                    std::to_string(batch.count) + " patches");
  }
  const std::size_t per = static_cast<std::size_t>(spec.input_side) * spec.input_side *
                          spec.input_channels;
  std::vector<std::vector<double>> acc(weights.layers.size());
  for (std::size_t l = 0; l < acc.size(); ++l) acc[l].assign(weights.layers[l].size(), 0.0);

  Engine engine(spec, weights);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.count; ++i) {
    if (labels[i] > 1) {
      throw Error(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
    }
    const double z = engine.forward(batch.pixels.data() + i * per);
    const double y = labels[i];
    loss += softplus(z) - y * z;
    engine.backward(sigmoid(z) - y, acc);
  }
  const double inv = 1.0 / static_cast<double>(batch.count);
  return {loss * inv, from_accumulators(weights, acc, inv)};
}

OptimizerState OptimizerState::fresh(const ModelWeights& like, AdamConfig config) {
  OptimizerState s;
  s.first_moment = like;
  s.second_moment = like;
  for (auto& t : s.first_moment.layers) std::fill(t.values.begin(), t.values.end(), 0.0f);
  for (auto& t : s.second_moment.layers) std::fill(t.values.begin(), t.values.end(), 0.0f);
  s.config = config;
  return s;
}

void adam_update(ModelWeights& weights, const ModelWeights& gradient, OptimizerState& state) {
  require_same_layout(weights, gradient, "adam gradient");
  require_same_layout(weights, state.first_moment, "adam first moment");
  require_same_layout(weights, state.second_moment, "adam second moment");
  const auto& cfg = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    auto& w = weights.layers[l].values;
    const auto& g = gradient.layers[l].values;
    auto& m = state.first_moment.layers[l].values;
    auto& v = state.second_moment.layers[l].values;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double step = cfg.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + cfg.epsilon);
      w[j] = static_cast<float>(w[j] - step);
    }
  }
}

AdamResult adam_step(const ModelWeights& weights, const ModelWeights& gradient,
                     const OptimizerState& state) {
  AdamResult r{weights, state};
  adam_update(r.weights, gradient, r.state);
  return r;
}

TrainResult train_epochs(const NetworkSpec& spec, const ModelWeights& weights,
                         const LabeledPatches& data, int epochs, std::uint64_t seed,
                         const TrainOptions& options) {
  if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (data.size() == 0) throw Error(ErrorCode::kInvalidArgument, "empty training set");
  if (options.batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  check_layout(spec, weights);
  check_batch(spec, data.batch());

  const std::size_t per = static_cast<std::size_t>(spec.input_side) * spec.input_side *
                          spec.input_channels;
  const std::size_t n = data.size();
  TrainResult result{weights, {}};
  OptimizerState state = OptimizerState::fresh(weights, options.adam);
  std::vector<std::size_t> order(n);
  std::vector<float> pixels;
  std::vector<std::uint8_t> labels;

  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(e)));
    shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t count = std::min<std::size_t>(options.batch_size, n - start);
      pixels.resize(count * per);
      labels.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[start + i];
        std::copy_n(data.pixels.begin() + src * per, per, pixels.begin() + i * per);
        labels[i] = data.labels[src];
      }
      auto lg = backward(spec, result.weights,
                         {pixels, count, spec.input_side, spec.input_channels}, labels);
      adam_update(result.weights, lg.gradient, state);
      epoch_loss += lg.loss * static_cast<double>(count);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  return result;
}

}  // namespace fedtil::nn
