#include "fineprint/error.hpp"

namespace fineprint {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::precondition_violation: return "PreconditionViolation";
    case ErrorCode::zero_vector: return "ZeroVector";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::partition_too_fine: return "PartitionTooFine";
    case ErrorCode::temperature_non_positive: return "TemperatureNonPositive";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::duplicate_id: return "DuplicateId";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::format_version_mismatch: return "FormatVersionMismatch";
    case ErrorCode::backend_unavailable: return "BackendUnavailable";
    case ErrorCode::missing_logprobs: return "MissingLogprobs";
    case ErrorCode::unparseable_verdict: return "UnparseableVerdict";
    case ErrorCode::unparseable_score: return "UnparseableScore";
    case ErrorCode::empty_sequence: return "EmptySequence";
    case ErrorCode::probability_out_of_range: return "ProbabilityOutOfRange";
    case ErrorCode::missing_gold_document: return "MissingGoldDocument";
  }
  return "Unknown";
}

}  // namespace fineprint
