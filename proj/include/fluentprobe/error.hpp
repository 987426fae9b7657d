#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fluentprobe {

enum class ErrorCode {
  kMalformedRecord,
  kDanglingReference,
  kDuplicateId,
  kUnknownRelation,
  kMissingPlaceholder,
  kMissingLabel,
  kMissingTemplate,
  kClientError,
  kEmptyTranslation,
  kNoExemplars,
  kNoAcceptedSplits,
  kEmptyPool,
  kNoDistractorsRemain,
  kBackendError,
  kNonFiniteScore,
  kFormNotPresent,
  kEmptyGroup,
  kNoEligibleRecords,
  kMissingPatterns,
  kDegenerateInput,
  kInsufficientRelations,
  kInvalidConfig,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fluentprobe
