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

#include "fedtil/binary_io.hpp"
#include "fedtil/nn.hpp"

namespace fedtil {

// Weight file ("FSHD"), all integers little-endian:
//   "FSHD" | u16 version | u32 layer_count |
//   per layer: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] |
//              f32 values[prod(dims)]
inline constexpr char kWeightsMagic[] = "FSHD";
inline constexpr std::uint16_t kWeightsVersion = 1;

void write_weights(ByteWriter& out, const nn::ModelWeights& weights);
nn::ModelWeights read_weights(ByteReader& in);

std::vector<std::uint8_t> encode_weights(const nn::ModelWeights& weights);
// Rejects trailing bytes.
nn::ModelWeights decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const std::string& path, const nn::ModelWeights& weights);
nn::ModelWeights load_weights(const std::string& path);

// Tensor file ("FSHT"): "FSHT" | u16 version | u8 rank | u32 dims[rank] |
// f32 values, row-major.
inline constexpr char kTensorMagic[] = "FSHT";
inline constexpr std::uint16_t kTensorVersion = 1;

struct FloatTensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
};

std::vector<std::uint8_t> encode_tensor(const FloatTensor& tensor);
FloatTensor decode_tensor(std::span<const std::uint8_t> bytes);

}  // namespace fedtil
