#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fineprint {

enum class ErrorCode {
  invalid_argument,
  precondition_violation,
  zero_vector,
  dimension_mismatch,
  partition_too_fine,
  temperature_non_positive,
  parse_error,
  duplicate_id,
  io_error,
  format_version_mismatch,
  backend_unavailable,
  missing_logprobs,
  unparseable_verdict,
  unparseable_score,
  empty_sequence,
  probability_out_of_range,
  missing_gold_document,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  // True for failures that originate behind the model boundary.
  bool is_backend_error() const noexcept {
    return code_ == ErrorCode::backend_unavailable ||
           code_ == ErrorCode::missing_logprobs ||
           code_ == ErrorCode::unparseable_verdict ||
           code_ == ErrorCode::unparseable_score;
  }

 private:
  ErrorCode code_;
};

}  // namespace fineprint
