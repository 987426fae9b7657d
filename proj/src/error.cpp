#include "fluentprobe/error.hpp"

namespace fluentprobe {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedRecord: return "MALFORMED_RECORD";
    case ErrorCode::kDanglingReference: return "DANGLING_REFERENCE";
    case ErrorCode::kDuplicateId: return "DUPLICATE_ID";
    case ErrorCode::kUnknownRelation: return "UNKNOWN_RELATION";
    case ErrorCode::kMissingPlaceholder: return "MISSING_PLACEHOLDER";
    case ErrorCode::kMissingLabel: return "MISSING_LABEL";
    case ErrorCode::kMissingTemplate: return "MISSING_TEMPLATE";
    case ErrorCode::kClientError: return "CLIENT_ERROR";
    case ErrorCode::kEmptyTranslation: return "EMPTY_TRANSLATION";
    case ErrorCode::kNoExemplars: return "NO_EXEMPLARS";
    case ErrorCode::kNoAcceptedSplits: return "NO_ACCEPTED_SPLITS";
    case ErrorCode::kEmptyPool: return "EMPTY_POOL";
    case ErrorCode::kNoDistractorsRemain: return "NO_DISTRACTORS_REMAIN";
    case ErrorCode::kBackendError: return "BACKEND_ERROR";
    case ErrorCode::kNonFiniteScore: return "NON_FINITE_SCORE";
    case ErrorCode::kFormNotPresent: return "FORM_NOT_PRESENT";
    case ErrorCode::kEmptyGroup: return "EMPTY_GROUP";
    case ErrorCode::kNoEligibleRecords: return "NO_ELIGIBLE_RECORDS";
    case ErrorCode::kMissingPatterns: return "MISSING_PATTERNS";
    case ErrorCode::kDegenerateInput: return "DEGENERATE_INPUT";
    case ErrorCode::kInsufficientRelations: return "INSUFFICIENT_RELATIONS";
    case ErrorCode::kInvalidConfig: return "INVALID_CONFIG";
    case ErrorCode::kIo: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace fluentprobe
