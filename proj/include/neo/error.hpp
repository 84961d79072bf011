// Copyright 2026 The neo-tta Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neo {

enum class ErrorCode {
  kDimensionMismatch,
  kNonFiniteInput,
  kWrongMode,
  kInvalidDimension,
  kInvalidArgument,
  kEmptyClass,
  kZeroNormVector,
  kNonZeroBias,
  kLengthMismatch,
  kEmptyInput,
  kOutOfRangeConfidence,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedPayload,
  kTrailingData,
  kNonFiniteValue,
  kRaggedRow,
  kParseError,
  kSchemaMismatch,
  kCorruptSnapshot,
  kIoFailure,
  kBadManifest,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kWrongMode: return "WrongMode";
    case ErrorCode::kInvalidDimension: return "InvalidDimension";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kZeroNormVector: return "ZeroNormVector";
    case ErrorCode::kNonZeroBias: return "NonZeroBias";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kOutOfRangeConfidence: return "OutOfRangeConfidence";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::kTruncatedPayload: return "TruncatedPayload";
    case ErrorCode::kTrailingData: return "TrailingData";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kRaggedRow: return "RaggedRow";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kCorruptSnapshot: return "CorruptSnapshot";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kBadManifest: return "BadManifest";
  }
  return "Unknown";
}

// Every failure in the library is reported as an Error carrying a code, so
// callers (the CLI in particular) can map codes onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace neo
