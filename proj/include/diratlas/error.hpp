#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace diratlas {

enum class ErrorCode {
  BadMagic,
  SizeMismatch,
  NonFinite,
  IoFailure,
  BadFormat,
  InvalidArgument,
  CountMismatch,
  DuplicateToken,
  MultipleRoots,
  CycleDetected,
  OrphanNode,
  DimensionMismatch,
  LengthMismatch,
  RankDeficient,
  ExhaustedAttempts,
  InsufficientRelevant,
  DegenerateCentroid,
  DegenerateInput,
  NonFiniteGradient,
  UnknownToken,
  ZeroNormRow,
  ConfigInvalid,
  StageFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library. `offset` is set for errors located
/// at a byte position of an input file.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what,
        std::optional<std::uint64_t> offset = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::uint64_t> offset() const noexcept { return offset_; }
  /// The message without the code prefix and offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::optional<std::uint64_t> offset_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace diratlas
