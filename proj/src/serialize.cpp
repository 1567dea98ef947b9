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

#include "fedtil/serialize.hpp"

#include <fstream>
#include <iterator>

#include "fedtil/error.hpp"

namespace fedtil {
namespace {

constexpr std::uint8_t kMaxRank = 8;

std::size_t element_count(const std::vector<std::uint32_t>& shape, std::size_t at) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d != 0 && n > (std::size_t{1} << 40) / d) {
      throw ParseError(at, "tensor dims overflow");
    }
    n *= d;
  }
  return n;
}

std::vector<std::uint32_t> read_dims(ByteReader& in) {
  const std::size_t at = in.offset();
  const std::uint8_t rank = in.u8();
  if (rank > kMaxRank) throw ParseError(at, "tensor rank " + std::to_string(rank) + " too large");
  std::vector<std::uint32_t> dims(rank);
  for (auto& d : dims) d = in.u32();
  return dims;
}

void read_version(ByteReader& in, std::uint16_t expected, const char* what) {
  const std::size_t at = in.offset();
  const std::uint16_t v = in.u16();
  if (v != expected) {
    throw Error(ErrorCode::kVersion, std::string(what) + " version " + std::to_string(v) +
                                         " unsupported (expected " +
                                         std::to_string(expected) + ", at byte offset " +
                                         std::to_string(at) + ")");
  }
}

}  // namespace

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kVersion: return "version";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kCollaborator: return "collaborator";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (f.bad()) throw Error(ErrorCode::kIo, "error reading '" + path + "'");
  return data;
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw Error(ErrorCode::kIo, "error writing '" + path + "'");
}

void write_weights(ByteWriter& out, const nn::ModelWeights& weights) {
  out.bytes(std::string_view(kWeightsMagic, 4));
  out.u16(kWeightsVersion);
  out.u32(static_cast<std::uint32_t>(weights.layers.size()));
  for (const auto& t : weights.layers) {
    out.u16(static_cast<std::uint16_t>(t.name.size()));
    out.bytes(t.name);
    out.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) out.u32(d);
    out.f32s(t.values);
  }
}

nn::ModelWeights read_weights(ByteReader& in) {
  in.expect_magic(std::string_view(kWeightsMagic, 4));
  read_version(in, kWeightsVersion, "weight file");
  const std::uint32_t count = in.u32();
  nn::ModelWeights w;
  for (std::uint32_t i = 0; i < count; ++i) {
    nn::Tensor t;
    const std::uint16_t name_len = in.u16();
    t.name = in.bytes(name_len);
    const std::size_t at = in.offset();
    t.shape = read_dims(in);
    const std::size_t n = element_count(t.shape, at);
    if (in.remaining() / 4 < n) {
      throw ParseError(in.offset(), "truncated values for tensor '" + t.name + "'");
    }
    t.values.resize(n);
    in.f32s(t.values);
    w.layers.push_back(std::move(t));
  }
  return w;
}

std::vector<std::uint8_t> encode_weights(const nn::ModelWeights& weights) {
  ByteWriter out;
  write_weights(out, weights);
  return out.take();
}

nn::ModelWeights decode_weights(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  auto w = read_weights(in);
  if (in.remaining() != 0) throw ParseError(in.offset(), "trailing bytes after weights");
  return w;
}

void save_weights(const std::string& path, const nn::ModelWeights& weights) {
  write_file(path, encode_weights(weights));
}

nn::ModelWeights load_weights(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return decode_weights(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_tensor(const FloatTensor& tensor) {
  ByteWriter out;
  out.bytes(std::string_view(kTensorMagic, 4));
  out.u16(kTensorVersion);
  out.u8(static_cast<std::uint8_t>(tensor.shape.size()));
  for (auto d : tensor.shape) out.u32(d);
  out.f32s(tensor.values);
  return out.take();
}

FloatTensor decode_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  in.expect_magic(std::string_view(kTensorMagic, 4));
  read_version(in, kTensorVersion, "tensor file");
  FloatTensor t;
  const std::size_t at = in.offset();
  t.shape = read_dims(in);
  const std::size_t n = element_count(t.shape, at);
  if (in.remaining() != 4 * n) {
    throw ParseError(in.offset(), "tensor payload is " + std::to_string(in.remaining()) +
                                      " bytes, expected " + std::to_string(4 * n));
  }
  t.values.resize(n);
  in.f32s(t.values);
  return t;
}

}  // namespace fedtil
