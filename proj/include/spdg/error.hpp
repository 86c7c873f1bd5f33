// Copyright 2026 The spdg Authors
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

namespace spdg {

enum class ErrorCode {
  kDimension,
  kDegenerateVector,
  kEmptyInput,
  kNonScalarLoss,
  kInternalInvariant,
  kNonFinite,
  kDuplicateVocab,
  kOutOfVocabulary,
  kSlotMismatch,
  kBatchComposition,
  kUnnormalized,
  kLabelOutOfRange,
  kMissingAnchor,
  kConfig,
  kIo,
  kShapeMismatch,
  kUnsupportedVersion,
  kContract,
  kTrainingDiverged,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension_error";
    case ErrorCode::kDegenerateVector: return "degenerate_vector";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kNonScalarLoss: return "non_scalar_loss";
    case ErrorCode::kInternalInvariant: return "internal_invariant";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kDuplicateVocab: return "duplicate_vocab";
    case ErrorCode::kOutOfVocabulary: return "out_of_vocabulary";
    case ErrorCode::kSlotMismatch: return "slot_mismatch";
    case ErrorCode::kBatchComposition: return "batch_composition";
    case ErrorCode::kUnnormalized: return "unnormalized";
    case ErrorCode::kLabelOutOfRange: return "label_out_of_range";
    case ErrorCode::kMissingAnchor: return "missing_anchor";
    case ErrorCode::kConfig: return "config_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kContract: return "contract_violation";
    case ErrorCode::kTrainingDiverged: return "training_diverged";
  }
  return "unknown";
}

/// Every failure raised by the library carries a stable machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace spdg
