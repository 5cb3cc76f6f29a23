#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace halodet {

// Every failure the toolkit reports carries one of these codes. The CLI maps
// validation-class codes to exit status 2 and everything else to 1.
enum class ErrorCode {
  // activation dumps
  BadMagic,
  UnsupportedVersion,
  TruncatedManifest,
  MalformedManifest,
  DuplicateId,
  InvariantViolation,
  DimensionMismatch,
  UnknownId,
  OffsetPastEnd,
  CorruptRecord,
  // numerics and configuration
  DegenerateAttention,
  DegenerateLabels,
  NonFinite,
  InvalidArgument,
  ConfigError,
  FeatureCap,
  Misaligned,
  UndefinedMetric,
  InconsistentDetectors,
  // external adapters
  AdapterLaunch,
  AdapterTimeout,
  AdapterCrash,
  AdapterMalformed,
  AdapterProtocol,
  AdapterRejected,
  AdapterWrongLength,
  AdapterOutOfRange,
  // everything touching the filesystem
  Io,
};

std::string_view error_code_name(ErrorCode code);

// True for codes that describe bad input (exit status 2) rather than an
// operational failure.
bool is_validation_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace halodet
