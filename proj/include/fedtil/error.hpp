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

#include <stdexcept>
#include <string>

namespace fedtil {

// Values match fedtil_status in fedtil.h.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kShapeMismatch = 2,
  kParse = 3,
  kVersion = 4,
  kIo = 5,
  kProtocol = 6,
  kCollaborator = 7,
  kInternal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Thrown by binary decoders; carries the byte offset where decoding failed.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(ErrorCode::kParse,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset),
        detail_(what) {}

  std::size_t offset() const noexcept { return offset_; }
  // The same error with `context` prepended to the message.
  ParseError within(const std::string& context) const {
    return ParseError(offset_, context + ": " + detail_);
  }

 private:
  std::size_t offset_;
  std::string detail_;
};

}  // namespace fedtil
