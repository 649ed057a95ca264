#include "diratlas/error.hpp"

namespace diratlas {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::DuplicateToken: return "DuplicateToken";
    case ErrorCode::MultipleRoots: return "MultipleRoots";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::OrphanNode: return "OrphanNode";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::ExhaustedAttempts: return "ExhaustedAttempts";
    case ErrorCode::InsufficientRelevant: return "InsufficientRelevant";
    case ErrorCode::DegenerateCentroid: return "DegenerateCentroid";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::ZeroNormRow: return "ZeroNormRow";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::StageFailure: return "StageFailure";
  }
  return "Unknown";
}

namespace {

std::string decorate(ErrorCode code, const std::string& what,
                     std::optional<std::uint64_t> offset) {
  std::string msg(to_string(code));
  msg += ": ";
  msg += what;
  if (offset) {
    msg += " (at byte offset " + std::to_string(*offset) + ")";
  }
  return msg;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& what,
             std::optional<std::uint64_t> offset)
    : std::runtime_error(decorate(code, what, offset)), code_(code), offset_(offset), detail_(what) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace diratlas
