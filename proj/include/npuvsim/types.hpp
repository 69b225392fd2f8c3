#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace npuvsim {

using CoreId = int;
using Cycle = std::uint64_t;
using VmId = int;
using Cost = double;

enum class ErrorCode {
  SizeMismatch,
  InsufficientCores,
  NoCandidate,
  TopologyLockIn,
  DuplicatePhysicalCore,
  OutOfBounds,
  UnmappedVirtualCore,
  MissingDirection,
  DirectionLoop,
  OverlappingRanges,
  TranslationFault,
  PermissionDenied,
  OutOfMemory,
  MetaZoneOverflow,
  SramOverflow,
  UnknownVm,
  DeadlockDetected,
  CapacityExceeded,
  ConfigError,
  UnknownParameter,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::InsufficientCores: return "InsufficientCores";
    case ErrorCode::NoCandidate: return "NoCandidate";
    case ErrorCode::TopologyLockIn: return "TopologyLockIn";
    case ErrorCode::DuplicatePhysicalCore: return "DuplicatePhysicalCore";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::UnmappedVirtualCore: return "UnmappedVirtualCore";
    case ErrorCode::MissingDirection: return "MissingDirection";
    case ErrorCode::DirectionLoop: return "DirectionLoop";
    case ErrorCode::OverlappingRanges: return "OverlappingRanges";
    case ErrorCode::TranslationFault: return "TranslationFault";
    case ErrorCode::PermissionDenied: return "PermissionDenied";
    case ErrorCode::OutOfMemory: return "OutOfMemory";
    case ErrorCode::MetaZoneOverflow: return "MetaZoneOverflow";
    case ErrorCode::SramOverflow: return "SramOverflow";
    case ErrorCode::UnknownVm: return "UnknownVm";
    case ErrorCode::DeadlockDetected: return "DeadlockDetected";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::UnknownParameter: return "UnknownParameter";
  }
  return "Unknown";
}

class SimError : public std::runtime_error {
 public:
  SimError(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw SimError(code, what);
}

}  // namespace npuvsim
