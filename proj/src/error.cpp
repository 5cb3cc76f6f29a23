#include "halodet/error.hpp"

namespace halodet {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::UnsupportedVersion: return "unsupported_version";
    case ErrorCode::TruncatedManifest: return "truncated_manifest";
    case ErrorCode::MalformedManifest: return "malformed_manifest";
    case ErrorCode::DuplicateId: return "duplicate_id";
    case ErrorCode::InvariantViolation: return "invariant_violation";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::UnknownId: return "unknown_id";
    case ErrorCode::OffsetPastEnd: return "offset_past_end";
    case ErrorCode::CorruptRecord: return "corrupt_record";
    case ErrorCode::DegenerateAttention: return "degenerate_attention";
    case ErrorCode::DegenerateLabels: return "degenerate_labels";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ConfigError: return "config_error";
    case ErrorCode::FeatureCap: return "feature_cap";
    case ErrorCode::Misaligned: return "misaligned";
    case ErrorCode::UndefinedMetric: return "undefined_metric";
    case ErrorCode::InconsistentDetectors: return "inconsistent_detectors";
    case ErrorCode::AdapterLaunch: return "adapter_launch";
    case ErrorCode::AdapterTimeout: return "adapter_timeout";
    case ErrorCode::AdapterCrash: return "adapter_crash";
    case ErrorCode::AdapterMalformed: return "adapter_malformed";
    case ErrorCode::AdapterProtocol: return "adapter_protocol";
    case ErrorCode::AdapterRejected: return "adapter_rejected";
    case ErrorCode::AdapterWrongLength: return "adapter_wrong_length";
    case ErrorCode::AdapterOutOfRange: return "adapter_out_of_range";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic:
    case ErrorCode::UnsupportedVersion:
    case ErrorCode::TruncatedManifest:
    case ErrorCode::MalformedManifest:
    case ErrorCode::DuplicateId:
    case ErrorCode::InvariantViolation:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::UnknownId:
    case ErrorCode::OffsetPastEnd:
    case ErrorCode::CorruptRecord:
    case ErrorCode::DegenerateAttention:
    case ErrorCode::NonFinite:
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigError:
    case ErrorCode::FeatureCap:
    case ErrorCode::Misaligned:
      return true;
    default:
      return false;
  }
}

}  // namespace halodet
