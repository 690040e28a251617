#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace knnicl {

enum class ErrorCode {
  // treebank
  UnbalancedBrackets,
  BadLabel,
  EmptyNode,
  BadStructure,
  MalformedApi,
  // textcore
  BadConfig,
  // lm
  EmptyCorpus,
  VocabMismatch,
  // datastore
  EmptyInput,
  EncoderMismatch,
  DimensionMismatch,
  FingerprintMismatch,
  EmptyNeighborSet,
  IoError,
  CorruptStore,
  VersionMismatch,
  // selection
  PoolTooSmall,
  DegeneratePool,
  SingleClassInput,
  // decode
  MalformedExemplar,
  // harness
  BadRow,
  PoolTooLarge,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnbalancedBrackets: return "UnbalancedBrackets";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::EmptyNode: return "EmptyNode";
    case ErrorCode::BadStructure: return "BadStructure";
    case ErrorCode::MalformedApi: return "MalformedApi";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EncoderMismatch: return "EncoderMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::EmptyNeighborSet: return "EmptyNeighborSet";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::CorruptStore: return "CorruptStore";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::DegeneratePool: return "DegeneratePool";
    case ErrorCode::SingleClassInput: return "SingleClassInput";
    case ErrorCode::MalformedExemplar: return "MalformedExemplar";
    case ErrorCode::BadRow: return "BadRow";
    case ErrorCode::PoolTooLarge: return "PoolTooLarge";
  }
  return "Unknown";
}

/// Every failure raised by the library. `code()` identifies the failure
/// kind; `line()` is set for row-oriented input errors (0 otherwise).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, std::size_t line = 0)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        line_(line) {}

  ErrorCode code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

}  // namespace knnicl
